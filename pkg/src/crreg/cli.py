"""Command-line entry point: ``crreg <subcommand> ...``.

Images, fields and label maps are MetaImage files (``.mhd`` + ``.raw``).
Every output file is a deterministic function of the inputs and flags;
wall-clock times are only ever printed, never written.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .driver import (
    AXES,
    DEFAULT_LAMBDAS,
    LANDSCAPE_COLUMNS,
    SWEEP_COLUMNS,
    RegistrationConfig,
    landscape,
    lambda_sweep,
    register,
    write_csv,
)
from .grid import PhantomSpec
from .metaimage import load_field, load_labels, load_volume, save_field, save_labels, save_volume
from .metrics import evaluate
from .parzen import default_config
from .phantom import REMAPS, make_phantom
from .similarity import MEASURES, eval_timed

PHANTOM_FILES = {
    "fixed": "fixed.mhd",
    "moving": "moving.mhd",
    "truth": "truth.mhd",
    "labels_fixed": "labels_fixed.mhd",
    "labels_moving": "labels_moving.mhd",
}


def _dims(text: str):
    parts = [int(p) for p in text.split(",")]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected N or NX,NY,NZ, got {text!r}")
    return tuple(parts)


def _floats(text: str):
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _reg_config(args, **overrides) -> RegistrationConfig:
    fields = dict(
        metric=args.metric,
        lam=getattr(args, "lam", 4.2),
        levels=args.levels,
        iters_per_level=args.iters,
        step_size=args.step,
        bins=args.bins,
        bandwidth_scale=args.bandwidth_scale,
        seed=args.seed,
    )
    fields.update(overrides)
    return RegistrationConfig(**fields)


def cmd_synth(args) -> None:
    spec = PhantomSpec(
        dims=args.dims,
        seed=args.seed,
        deformation_amplitude=args.amplitude,
        deformation_smoothness=args.sigma,
        remap=args.remap,
    )
    ph = make_phantom(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(ph.fixed, out / PHANTOM_FILES["fixed"])
    save_volume(ph.moving, out / PHANTOM_FILES["moving"])
    save_field(ph.truth, out / PHANTOM_FILES["truth"])
    save_labels(ph.labels_fixed, out / PHANTOM_FILES["labels_fixed"])
    save_labels(ph.labels_moving, out / PHANTOM_FILES["labels_moving"])


def _optional_labels(path):
    return load_labels(path) if path else None


def cmd_register(args) -> None:
    cfg = _reg_config(args)
    fixed = load_volume(args.fixed)
    moving = load_volume(args.moving)
    rep = register(fixed, moving, cfg, _optional_labels(args.labels_fixed), _optional_labels(args.labels_moving))
    save_field(rep.final_field, args.out_field)
    if args.out_report:
        report = rep.to_json()
        report["config"] = {
            "metric": cfg.metric, "lambda": cfg.lam, "levels": cfg.levels,
            "iters_per_level": cfg.iters_per_level, "step_size": cfg.step_size,
            "adam_betas": list(cfg.adam_betas), "bins": cfg.bins,
            "bandwidth_scale": cfg.bandwidth_scale, "seed": cfg.seed,
        }
        report["loss_history"] = rep.loss_history.tolist()
        _write_json(report, args.out_report)
    print(f"registered in {rep.wall_seconds:.1f} s; final total {rep.loss_history[-1, 0]:.6f}")


def cmd_landscape(args) -> None:
    cfg = _reg_config(args)
    rows = landscape(load_volume(args.fixed), load_volume(args.moving), cfg, args.axis, args.range, args.steps)
    write_csv(rows, args.out_csv, LANDSCAPE_COLUMNS)


def cmd_sweep(args) -> None:
    cfg = _reg_config(args)
    rows = lambda_sweep(
        load_volume(args.fixed), load_volume(args.moving),
        load_labels(args.labels_fixed), load_labels(args.labels_moving),
        cfg, args.lambdas,
    )
    write_csv(rows, args.out_csv, SWEEP_COLUMNS)


def cmd_metrics(args) -> None:
    report = evaluate(load_field(args.field), _optional_labels(args.labels_fixed), _optional_labels(args.labels_moving))
    _write_json(report.to_json(), args.out_json)


def cmd_time(args) -> None:
    fixed = load_volume(args.fixed)
    moving = load_volume(args.moving)
    cfg_f = default_config(fixed, args.bins)
    cfg_m = default_config(moving, args.bins)
    _, seconds = eval_timed(args.metric, fixed, moving, cfg_f, cfg_m, args.repeats)
    print(f"{args.metric} mean seconds per evaluation over {args.repeats} repeats: {seconds:.6f}")


def _add_reg_flags(p):
    p.add_argument("--metric", choices=sorted(MEASURES), default="cr")
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--bandwidth-scale", type=float, default=1.0)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crreg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic phantom pair")
    p.add_argument("--dims", type=_dims, default=(48, 48, 48))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--sigma", type=float, default=6.0)
    p.add_argument("--remap", choices=sorted(REMAPS), default="quadratic")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register", help="deformably register moving onto fixed")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    _add_reg_flags(p)
    p.add_argument("--lambda", dest="lam", type=float, default=4.2)
    p.add_argument("--labels-fixed")
    p.add_argument("--labels-moving")
    p.add_argument("--out-field", required=True)
    p.add_argument("--out-report")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("landscape", help="similarity along one rigid parameter")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    _add_reg_flags(p)
    p.add_argument("--axis", choices=AXES, default="tx")
    p.add_argument("--range", type=float, default=10.0, help="half-width: voxels or degrees")
    p.add_argument("--steps", type=int, default=21)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("sweep", help="one registration per regularization weight")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--labels-fixed", required=True)
    p.add_argument("--labels-moving", required=True)
    _add_reg_flags(p)
    p.add_argument("--lambdas", type=_floats, default=list(DEFAULT_LAMBDAS))
    p.add_argument("--out-csv", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="deformation quality and label overlap")
    p.add_argument("--field", required=True)
    p.add_argument("--labels-fixed")
    p.add_argument("--labels-moving")
    p.add_argument("--out-json", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("time", help="mean evaluation time of a similarity measure")
    p.add_argument("--fixed", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--metric", choices=sorted(MEASURES), default="cr")
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--repeats", type=int, default=100)
    p.set_defaults(func=cmd_time)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"crreg {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
