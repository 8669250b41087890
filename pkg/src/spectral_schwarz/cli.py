"""Command-line entry point: ``spectral-schwarz {solve,sweep,spectrum,decay}``."""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from .experiments import ExperimentConfig, decay, run, spectrum, sweep, write_rows

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def _parse_vary(items):
    vary = {}
    for item in items or []:
        key, sep, values = item.partition("=")
        if not sep or not key or not values:
            raise ValueError(f"--vary expects key=v1,v2,... (got {item!r})")
        vary[key.strip()] = [v.strip() for v in values.split(",") if v.strip()]
    return vary


def _parse_ks(text):
    ks = [int(v) for v in text.split(",") if v.strip()]
    if not ks or min(ks) < 1:
        raise ValueError("--k expects positive integers such as 2,4,6")
    return ks


def _open_out(path):
    return open(path, "w", encoding="utf-8", newline="") if path else sys.stdout


def _emit(path, writer):
    stream = _open_out(path)
    try:
        writer(stream)
    finally:
        if stream is not sys.stdout:
            stream.close()


def _default_jobs():
    try:
        return max(1, int(os.environ.get("SPECTRAL_SCHWARZ_JOBS", "1")))
    except ValueError:
        return 1


def build_parser():
    parser = argparse.ArgumentParser(prog="spectral-schwarz",
                                     description="Two-level overlapping Schwarz experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--out", help="output path (overrides the config's output)")

    p = sub.add_parser("solve", help="run one configuration")
    common(p)
    p.add_argument("--export-coarse", metavar="PREFIX",
                   help="write the coarse basis to PREFIX.mtx and PREFIX.json")
    p = sub.add_parser("sweep", help="run the cross product of varied keys")
    common(p)
    p.add_argument("--vary", action="append", required=True, metavar="KEY=V1,V2,...")
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p = sub.add_parser("spectrum", help="dense eigenvalues of the preconditioned operator")
    common(p)
    p = sub.add_parser("decay", help="energy distance of economical coarse columns")
    common(p)
    p.add_argument("--k", required=True, help="comma-separated oversampling layers")
    return parser


def _solve(args, cfg):
    row = run(cfg, export_coarse=args.export_coarse)
    _emit(args.out or cfg.output, lambda s: write_rows([row], s))
    return EXIT_OK if row["converged"] else EXIT_NOT_CONVERGED


def _sweep(args, cfg):
    rows = sweep(cfg, _parse_vary(args.vary), jobs=args.jobs)
    _emit(args.out or cfg.output, lambda s: write_rows(rows, s))
    return EXIT_OK if all(r["converged"] for r in rows) else EXIT_NOT_CONVERGED


def _spectrum(args, cfg):
    res = spectrum(cfg)

    def write(stream):
        stream.write(f"# cond={res['cond']!r} max_imag={res['max_imag']!r}\n")
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(("index", "real", "imag"))
        for i, ev in enumerate(res["eigenvalues"]):
            w.writerow((i, repr(float(ev.real)), repr(float(ev.imag))))

    _emit(args.out or cfg.output, write)
    return EXIT_OK


def _decay(args, cfg):
    ks = _parse_ks(args.k)
    res = decay(cfg, ks)

    def write(stream):
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["subdomain", "j", "energy"] + [f"e_k{k}" for k in ks] + ["ratio"])
        for c in range(len(res["norms"])):
            w.writerow([int(res["owner"][c]), int(res["index"][c]), repr(float(res["norms"][c]))]
                       + [repr(float(res["distances"][k][c])) for k in ks]
                       + [repr(float(res["ratios"][c]))])

    _emit(args.out or cfg.output, write)
    return EXIT_OK


COMMANDS = {"solve": _solve, "sweep": _sweep, "spectrum": _spectrum, "decay": _decay}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        with np.errstate(all="ignore"):
            return COMMANDS[args.command](args, cfg)
    except Exception as exc:  # every failure maps to exit code 1
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
