"""Command-line entry point ``homoglab``.

Exit codes: 0 on success, 1 on invalid input or configuration, 2 on a
numerical failure (or a failed invariant in ``spaces-check``).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import fields, harness, homog, spaces
from .errors import FormatError, NumericalError, ValidationError


def _load(path):
    try:
        with open(path, "rb") as fh:
            return harness.tomllib.load(fh)
    except harness.tomllib.TOMLDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _section(data, name):
    sec = data.get(name)
    if sec is None:
        raise FormatError(f"config lacks a [{name}] table")
    return dict(sec)


def _out(args, default):
    return Path(args.out or default)


def cmd_sample(args):
    data = _load(args.config)
    model = fields.model_from_spec(data.get("model", {"kind": "separable"}))
    s = _section(data, "sample")
    seed = args.seed if args.seed is not None else int(s.get("seed", 0))
    grid = fields.Grid.from_domain(float(s["L"]), float(s["T"]), float(s["hx"]), float(s["ht"]),
                                   periodic_x=bool(s.get("periodic", False)))
    if model.kind == "shot-noise":
        real = fields.sample_shot_noise_field(model.shot_noise, grid, seed)
    else:
        real = fields.sample_gaussian_field(model, grid, seed)
    out = _out(args, s.get("out", "out/sample"))
    out.mkdir(parents=True, exist_ok=True)
    fields.write_field_csv(out / "field.csv", real)
    fields.write_covariance_csv(out / "covariance.csv", model, grid)
    print(out / "field.csv")


def cmd_vbar(args):
    data = _load(args.config)
    model = fields.model_from_spec(data.get("model", {"kind": "separable"}))
    for name, fn in (("slow", homog.vbar_slow), ("diffusive", homog.vbar_diffusive),
                     ("fast", homog.vbar_fast)):
        print(f"{name}\t{fn(model)!r}")


def cmd_corrector(args):
    data = _load(args.config)
    model = fields.model_from_spec(data.get("model", {"kind": "separable"}))
    c = _section(data, "corrector")
    eps, alpha = float(c["eps"]), float(c.get("alpha", 1.0))
    seed = args.seed if args.seed is not None else int(c.get("seed", 0))
    setup = homog.multiscale_setup(model, eps, alpha, float(c.get("L", 5.0)), float(c.get("T", 1.0)),
                                   resolution=int(c.get("resolution", 8)))
    pair, _ = homog.correctors(model, setup, seed)
    out = _out(args, c.get("out", "out/corrector"))
    out.mkdir(parents=True, exist_ok=True)
    from .solver import write_trajectory_csv

    tag = f"eps={eps!r} alpha={alpha!r} seed={seed} model_hash={model.hash}"
    write_trajectory_csv(out / "Y.csv", pair.Y, tag)
    write_trajectory_csv(out / "Z.csv", pair.Z, tag)
    harness._write_csv(out / "vbar_curve.csv", ["t", "vbar_eps"],
                       zip(pair.vbar_times.tolist(), pair.vbar_values.tolist()))
    print(out)


def _experiment(args):
    return harness.ExperimentConfig.from_toml(args.config, master_seed=args.seed,
                                              threads=args.threads, out_dir=args.out)


def _print_fits(fits):
    for name, f in fits.items():
        print(f"{name}\tslope={f.slope!r}\tstderr={f.slope_stderr!r}")


def cmd_converge(args):
    res = harness.run_convergence_study(_experiment(args))
    _print_fits(res.fits)
    print(res.paths["summary"])


def cmd_moments(args):
    res = harness.run_moment_study(_experiment(args))
    _print_fits(res.fits)
    print(res.paths["summary"])


def cmd_vbar_study(args):
    res = harness.run_vbar_study(_experiment(args))
    for eps, t, val, se, rel in res.summary:
        print(f"eps={eps!r}\tt={t!r}\tvbar_eps={val!r}\trel_error={rel!r}")
    print(res.paths["summary"])


def cmd_spaces_check(args):
    seed = 0 if args.seed is None else args.seed
    results = spaces.run_invariant_suite(seed)
    out = _out(args, "out/spaces")
    path = harness._write_csv(out / "spaces_check.csv", ["check", "value", "bound", "pass"],
                              [[r.name, r.value, r.bound, int(r.passed)] for r in results])
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed; report at {path}")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return 2
    return 0


COMMANDS = {
    "sample": cmd_sample,
    "vbar": cmd_vbar,
    "corrector": cmd_corrector,
    "converge": cmd_converge,
    "moments": cmd_moments,
    "vbar-study": cmd_vbar_study,
    "spaces-check": cmd_spaces_check,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are validation errors (exit 1); 2 is reserved for numerical failures
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="homoglab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "spaces-check", help="TOML configuration file")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $HOMOGLAB_THREADS or 1)")
        sp.add_argument("--out", default=None, help="output directory")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore")
    try:
        code = COMMANDS[args.command](args)
    except (ValidationError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
