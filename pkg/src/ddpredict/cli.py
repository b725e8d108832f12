"""Command-line interface: gen, train, eval, sweep, report.

Every subcommand accepts ``--config FILE`` (``key = value`` lines) and any
number of ``--set key=value`` overrides, applied in that order.  Each run
writes ``<output>.manifest.json`` next to its main output with the resolved
configuration, seeds, package version and input/output digests.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time

from . import __version__
from . import config as config_mod
from . import dataset as ds
from . import experiments as ex
from . import report
from .baselines import METHODS
from .errors import DDPredictError
from .persist import load_estimator, save_estimator

log = logging.getLogger("ddpredict")


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve(args):
    values = config_mod.read_file(args.config) if args.config else {}
    values.update(config_mod.parse_overrides(args.set))
    return config_mod.resolve(values)


def write_manifest(path, command, cfg, inputs=(), outputs=(), extra=None, runtime_s=None):
    manifest = {
        "command": command,
        "version": __version__,
        "python": platform.python_version(),
        "config": ex.config_dict(cfg),
        "seed": {"rng_seed": cfg.sim.rng_seed, "train_seed": cfg.train.seed},
        "inputs": {p: _digest(p) for p in inputs},
        "outputs": {p: _digest(p) for p in outputs if os.path.isfile(p)},
        "runtime_s": runtime_s,
    }
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _int_list(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _float_list(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


# subcommands ----------------------------------------------------------------

def cmd_gen(args, cfg):
    split = ex.build_split(cfg)
    ds.save_dataset(split, args.out)
    return [args.out], [], {"counts": [len(split.train), len(split.val), len(split.test)]}


def cmd_train(args, cfg):
    split = ds.load_dataset(args.data)
    L, n_p, n_f, k_d = split.shape
    if L != cfg.sim.channel_len:
        cfg = cfg.with_(sim=cfg.sim.with_(channel_len=L, nonzero_taps=min(cfg.sim.nonzero_taps, L)))
    est = ex.build_method(args.method, cfg)
    est, curve = ex.train(est, split, cfg.train)
    save_estimator(est, args.out)
    info = {"method": args.method, "loss_curve": curve,
            "best_epoch": getattr(est, "best_epoch_", None), "best_val_nmse": getattr(est, "best_score_", None)}
    return [args.out], [args.data], info


def cmd_eval(args, cfg):
    split = ds.load_dataset(args.data)
    est = load_estimator(args.checkpoint)
    samples = getattr(split, args.part)
    if not samples:
        raise DDPredictError(f"dataset has no {args.part} samples")
    by_v = {}
    for s in samples:
        by_v.setdefault(s.velocity_kmh, []).append(s)
    table = {v: [ex.evaluate(est, group, split.stats)[:2]] for v, group in by_v.items()}
    method = args.method or type(est).__name__
    rep = ex.aggregate(method, "velocity_kmh", table, 0.0)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, args.name or f"eval_{args.part}.csv")
    with open(path, "w", newline="") as fh:
        fh.write(report.report_csv([rep]))
    overall = ex.evaluate(est, samples, split.stats)
    return [path], [args.data, args.checkpoint], {"nmse": overall[0], "n_excluded": overall[1]}


def cmd_sweep(args, cfg):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    seeds = _int_list(args.seeds)
    if args.variable == "velocity":
        vel = _float_list(args.grid) if args.grid else None
        reports = ex.sweep_velocity(methods, vel, seeds, cfg, n_jobs=args.jobs)
    else:
        hor = _int_list(args.grid) if args.grid else tuple(range(1, 11))
        retrain = None if args.retrain is None else args.retrain == "yes"
        reports = ex.sweep_horizon(methods, hor, seeds, cfg, retrain=retrain, n_jobs=args.jobs)
    written = report.emit_report(reports, args.out_dir, chart=not args.no_chart)
    runtimes = {r.method: r.runtime_s for r in reports}
    return written, [], {"methods": methods, "seeds": list(seeds), "method_runtime_s": runtimes}


def cmd_report(args, cfg):
    return report.chart_from_csv(args.csv, args.out), [args.csv], {}


# parser ---------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ddpredict", description="Delay-Doppler channel prediction lab")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="simulate and save a dataset")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train one method on a dataset")
    t.add_argument("--method", choices=METHODS, default="physics")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--part", choices=("train", "val", "test"), default="test")
    e.add_argument("--method", help="label used in the CSV (default: estimator class)")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--name", help="CSV file name")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="run a velocity or horizon sweep")
    s.add_argument("--variable", choices=("velocity", "horizon"), required=True)
    s.add_argument("--methods", default="physics,ablation,tmlp,linear_ar,persistence")
    s.add_argument("--seeds", default="1,2,3")
    s.add_argument("--grid", help="comma-separated velocities or horizons")
    s.add_argument("--retrain", choices=("yes", "no"), help="horizon sweep: retrain per horizon")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--no-chart", action="store_true")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", parents=[common], help="render a chart from a sweep CSV")
    r.add_argument("--csv", required=True)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = _resolve(args)
        outputs, inputs, info = args.func(args, cfg)
    except (DDPredictError, ValueError, OSError) as exc:
        print(f"ddpredict {args.command}: error: {exc}", file=sys.stderr)
        return 2
    runtime = time.perf_counter() - t0
    manifest = write_manifest(outputs[0] + ".manifest.json", args.command, cfg, inputs, outputs,
                              info, runtime)
    for path in outputs + [manifest]:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
