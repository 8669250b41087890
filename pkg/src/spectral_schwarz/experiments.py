"""Configuration-driven experiment runner."""

import csv
import io
import itertools
import json
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
import scipy.linalg as la

from . import coarse as cs
from .elliptic import MODELS as ELLIPTIC_MODELS
from .elliptic import assemble_global, coefficient_field
from .errors import StageError, TooLargeForOracle
from .mesh import build_structured_mesh
from .partition import build_decomposition, build_dual_pou, build_nodal_pou
from .pcg import pcg_solve
from .pwls import WAVESPEEDS, Multipliers, assemble_pwls, evaluate_error, model_domain
from .schwarz import build_schwarz

PROBLEMS = ("elliptic3d", "elliptic2d", "helmholtz2d")
VARIANTS = ("one_level", "psi_global", "psibar_global", "psi_econ", "psibar_econ")
CSV_VERSION = "# spectral_schwarz results v1"
CSV_COLUMNS = ("problem", "model", "dim", "n", "m", "l", "k", "p", "omega", "mu1", "mu2",
               "Lambda", "variant", "tol", "tol_A", "seed", "iterations", "converged",
               "relres", "cond_est", "coarse_dim", "M", "sum_li", "rel_error",
               "setup_seconds", "solve_seconds")
SPECTRUM_DOF_CAP = 2000


def _parse_omega(value):
    """Accept a number or a string such as ``"20pi"`` / ``"20*pi"``."""
    if value is None or isinstance(value, (int, float)):
        return value
    match = re.fullmatch(r"\s*([0-9.eE+-]*)\s*\*?\s*pi\s*", str(value))
    if match:
        coef = match.group(1)
        return (float(coef) if coef else 1.0) * math.pi
    return float(value)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "elliptic3d"
    model: str = "model1"
    n: int = 4
    m: int = 8
    l: int = 1
    k: int = 1
    dim: int = None
    mu: float = 0.0
    mu1: float = None
    mu2: float = None
    omega: float = None
    p: int = 9
    wavespeed: str = None
    Lambda: float = None
    variant: str = "psi_global"
    tol: float = None
    tol_A: float = 1e-1
    max_it: int = 1000
    seed: int = 0
    output: str = None
    alpha: float = None
    beta: float = None
    nu: float = None

    @property
    def helmholtz(self):
        return self.problem == "helmholtz2d"

    @property
    def effective_dim(self):
        return 3 if self.problem == "elliptic3d" else 2

    @property
    def effective_tol(self):
        if self.tol is not None:
            return self.tol
        return 1e-5 if self.helmholtz else 1e-6

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.dim is not None and self.dim != self.effective_dim:
            raise ValueError(f"dim={self.dim} contradicts problem {self.problem}")
        if self.helmholtz:
            if self.model not in WAVESPEEDS:
                raise ValueError(f"Helmholtz model must be one of {WAVESPEEDS}")
            if self.wavespeed is not None and self.wavespeed != self.model:
                raise ValueError("wavespeed must match the Helmholtz model")
            if self.omega is None or self.omega <= 0:
                raise ValueError("omega must be positive")
            if self.p < 3:
                raise ValueError("p must be at least 3")
        elif self.model not in ELLIPTIC_MODELS:
            raise ValueError(f"elliptic model must be one of {ELLIPTIC_MODELS}")
        for name in ("n", "m", "l", "max_it"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.variant.endswith("_econ") and self.k < 1:
            raise ValueError("economical variants need k >= 1")
        for name in ("tol_A", "Lambda", "alpha", "beta", "nu"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")
        if self.tol is not None and not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        return self

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        data = dict(data)
        if "omega" in data:
            data["omega"] = _parse_omega(data["omega"])
        cfg = cls(**data)
        if cfg.helmholtz and cfg.omega is None:
            cfg = replace(cfg, omega=20 * math.pi)
        return cfg.validate()

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def with_values(self, **kw):
        return ExperimentConfig.from_dict({**asdict(self), **kw})


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass(eq=False)
class Setup:
    config: ExperimentConfig
    mesh: object
    decomp: object
    pou: object
    system: object
    Lambda: float
    mu1: float = None
    mu2: float = None


def default_lambda(cfg, mesh):
    ratio = mesh.H[0] / mesh.h[0]
    return 1 + math.log(ratio + 2) if cfg.helmholtz else 1 + math.log(ratio)


def build_setup(cfg):
    if cfg.helmholtz:
        mesh = _stage("mesh", build_structured_mesh, 2, cfg.n, cfg.m, "pwls",
                      lengths=model_domain(cfg.model))
    else:
        mesh = _stage("mesh", build_structured_mesh, cfg.effective_dim, cfg.n, cfg.m)
    decomp = _stage("decomposition", build_decomposition, mesh, cfg.l)
    mu1 = mu2 = None
    if cfg.helmholtz:
        pou = _stage("partition_of_unity", build_dual_pou, mesh, decomp)
        mult = Multipliers(alpha=cfg.alpha, beta=cfg.beta, nu=cfg.nu)
        from .pwls import wavespeed_field
        ws = _stage("system", wavespeed_field, mesh, cfg.model, cfg.seed)
        system = _stage("system", assemble_pwls, mesh, ws, cfg.omega, cfg.p, mult)
    else:
        pou = _stage("partition_of_unity", build_nodal_pou, mesh, decomp)
        rho = _stage("system", coefficient_field, mesh, cfg.model, mu=cfg.mu, mu1=cfg.mu1,
                     mu2=cfg.mu2, seed=cfg.seed)
        mu1, mu2 = rho.mu1, rho.mu2
        system = _stage("system", assemble_global, mesh, rho)
    Lambda = cfg.Lambda if cfg.Lambda is not None else default_lambda(cfg, mesh)
    return Setup(cfg, mesh, decomp, pou, system, Lambda, mu1, mu2)


def build_coarse(setup):
    cfg = setup.config
    if cfg.variant == "one_level":
        return [], None
    bases = _stage("eigenproblems", cs.build_eigenbases, setup.system, setup.decomp,
                   setup.pou, setup.Lambda)
    A = setup.system.A
    if cfg.variant == "psi_global":
        basis = _stage("coarse_space", cs.build_psi_global, A, bases, tol_A=cfg.tol_A,
                       block=setup.system.block_size)
    elif cfg.variant == "psibar_global":
        basis = _stage("coarse_space", cs.build_psibar_global, A, bases)
    else:
        kind = "psi" if cfg.variant == "psi_econ" else "psibar"
        basis = _stage("coarse_space", cs.build_economical, setup.system, setup.decomp,
                       bases, cfg.k, variant=kind, tol_A=cfg.tol_A)
    return bases, basis


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def run(config, export_coarse=None):
    """Run one experiment and return its result row (a dict keyed by CSV column)."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    start = time.perf_counter()
    setup = build_setup(cfg)
    bases, basis = build_coarse(setup)
    if export_coarse and basis is not None:
        basis.export(export_coarse)
    P = _stage("preconditioner", build_schwarz, setup.system, setup.decomp, basis)
    setup_seconds = time.perf_counter() - start
    u, report = _stage("pcg", pcg_solve, setup.system.A, P, setup.system.rhs,
                       tol=cfg.effective_tol, max_it=cfg.max_it)
    rel_error = None
    if cfg.helmholtz and cfg.model == "model41":
        rel_error = _stage("error", evaluate_error, setup.system, u)
    return {
        "problem": cfg.problem, "model": cfg.model, "dim": cfg.effective_dim,
        "n": cfg.n, "m": cfg.m, "l": cfg.l,
        "k": cfg.k if cfg.variant.endswith("_econ") else None,
        "p": cfg.p if cfg.helmholtz else None,
        "omega": cfg.omega if cfg.helmholtz else None,
        "mu1": setup.mu1, "mu2": setup.mu2, "Lambda": setup.Lambda,
        "variant": cfg.variant, "tol": cfg.effective_tol, "tol_A": cfg.tol_A,
        "seed": cfg.seed, "iterations": report.iterations, "converged": report.converged,
        "relres": report.relres, "cond_est": report.cond_est,
        "coarse_dim": basis.coarse_dim if basis is not None else 0,
        "M": setup.decomp.M, "sum_li": sum(b.l for b in bases), "rel_error": rel_error,
        "setup_seconds": setup_seconds, "solve_seconds": report.solve_seconds,
    }


def _parse_value(text, template):
    if isinstance(template, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float) or template is None:
        try:
            return float(text)
        except ValueError:
            return _parse_omega(text) if "pi" in text else text
    return text


def expand_sweep(config, vary):
    """Cross product of ``vary`` (ordered key -> list of values) over ``config``."""
    base = asdict(config)
    for key in vary:
        if key not in base:
            raise ValueError(f"cannot vary unknown key {key!r}")
    keys = list(vary)
    points = []
    for combo in itertools.product(*(vary[k] for k in keys)):
        values = {}
        for key, raw in zip(keys, combo):
            values[key] = _parse_value(raw, base[key]) if isinstance(raw, str) else raw
        points.append(config.with_values(**values))
    return points


def sweep(config, vary, jobs=1):
    points = expand_sweep(config, vary)
    if jobs <= 1 or len(points) <= 1:
        return [run(p) for p in points]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, points))


def write_rows(rows, stream):
    stream.write(CSV_VERSION + "\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def read_rows(stream):
    first = stream.readline()
    if first.strip() != CSV_VERSION:
        raise ValueError("not a spectral_schwarz results file")
    return list(csv.DictReader(stream))


def rows_to_csv(rows):
    buf = io.StringIO()
    write_rows(rows, buf)
    return buf.getvalue()


def preconditioned_spectrum(setup, basis):
    """Dense eigenvalues of ``B^{-1} A`` (the oracle used for small problems)."""
    n = setup.system.n_dofs
    if n > SPECTRUM_DOF_CAP:
        raise TooLargeForOracle(f"{n} dofs exceed the dense-oracle cap {SPECTRUM_DOF_CAP}")
    P = build_schwarz(setup.system, setup.decomp, basis)
    Binv = P.matrix()
    A = setup.system.A.toarray()
    ev = la.eigvals(Binv @ A)
    return ev[np.argsort(ev.real)]


def spectrum(config):
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    setup = build_setup(cfg)
    _, basis = build_coarse(setup)
    ev = _stage("spectrum", preconditioned_spectrum, setup, basis)
    return {"eigenvalues": ev, "max_imag": float(np.abs(ev.imag).max()),
            "lambda_min": float(ev.real.min()), "lambda_max": float(ev.real.max()),
            "cond": float(ev.real.max() / ev.real.min())}


def decay(config, ks):
    """Energy distances between global and economical columns for each ``k``."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    setup = build_setup(cfg)
    bases = _stage("eigenproblems", cs.build_eigenbases, setup.system, setup.decomp,
                   setup.pou, setup.Lambda)
    kind = "psi" if cfg.variant in ("psi_global", "psi_econ") else "psibar"
    norms, dist = _stage("decay", cs.energy_distances, setup.system, setup.decomp, bases,
                         ks, variant=kind)
    ratios = cs.fitted_decay_ratio(ks, dist, norms) if len(ks) > 1 else np.full(len(norms), np.nan)
    owner = cs.column_owner(bases)
    local = np.concatenate([np.arange(b.l) for b in bases] + [np.zeros(0, dtype=int)])
    return {"owner": owner, "index": local, "norms": norms, "distances": dist,
            "ratios": ratios, "ks": list(ks), "variant": kind}
