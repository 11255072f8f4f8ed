"""Command line front end.

Subcommands:
  train     --config <path>                      run a training job
  eval      --ckpt <path> --config <path>        score a checkpoint
  memreport [--C --H --W --R] [--csv <path>]     kernel memory table
  gradcheck --scope <s>                          finite-difference audit
  sample    --pattern <p> --in <pfm> --out <pfm> --seed <n>

The config is a JSON document; see ExperimentConfig for the schema and
defaults. All train/eval outputs land under <output.root>/<config hash>.
"""

import argparse
import sys

from .data import DepthMap, sample_sparse
from .depthio import read_pfm, write_pfm
from .errors import ConfigurationError, UsageError
from .experiment import (
    GRADCHECK_SCOPES,
    ExperimentConfig,
    cmd_eval,
    cmd_gradcheck,
    cmd_memreport,
    cmd_train,
)


def _load_config(path):
    if path is None:
        return ExperimentConfig()
    return ExperimentConfig.from_json_file(path)


def _do_train(args):
    config = _load_config(args.config)
    record, ckpt = cmd_train(config, log=lambda s: print(s, flush=True))
    print(f"run {record.config_hash}: {len(record.step_losses)} steps "
          f"in {record.wall_time_s:.1f}s")
    if record.step_losses:
        print(f"loss {record.step_losses[0]:.6f} -> {record.step_losses[-1]:.6f}")
    if record.final_metrics is not None:
        print(f"eval rmse {record.final_metrics.rmse:.6f} "
              f"mae {record.final_metrics.mae:.6f}")
    print(f"checkpoint {ckpt}")
    return 0


def _do_eval(args):
    config = _load_config(args.config)
    rows, agg, csv_path = cmd_eval(args.ckpt, config)
    for scene_id, rep in rows:
        print(f"{scene_id}: rmse {rep.rmse:.6f} mae {rep.mae:.6f} rel {rep.rel:.6f}")
    print(f"aggregate: rmse {agg.rmse:.6f} mae {agg.mae:.6f} rel {agg.rel:.6f}")
    print(f"wrote {csv_path}")
    return 0


def _do_memreport(args):
    report = cmd_memreport(args.C, args.H, args.W, args.R)
    if args.csv:
        with open(args.csv, "w") as f:
            f.write(report.as_csv())
        print(f"wrote {args.csv}")
    else:
        print(report.as_text())
    return 0


def _do_gradcheck(args):
    rows = cmd_gradcheck(args.scope)
    failed = 0
    for name, rep in rows:
        status = "pass" if rep.passed else "FAIL"
        print(f"{status}  {name:<24s} max_rel={rep.max_rel_error:.3e} "
              f"checked={rep.checked} skipped={rep.skipped}")
        failed += not rep.passed
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return 1 if failed else 0


def _do_sample(args):
    depth = read_pfm(args.infile)
    if not depth.valid.all():
        raise UsageError("sampling expects a dense depth raster")
    sparse = sample_sparse(depth, args.pattern, args.seed)
    write_pfm(args.out, sparse)
    print(f"kept {sparse.valid_count()} of {depth.depth.size} pixels -> {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="guidepth")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", default=None, help="JSON config path (defaults apply if omitted)")
    t.set_defaults(func=_do_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True, help="checkpoint prefix (no extension)")
    e.add_argument("--config", default=None, help="JSON config path")
    e.set_defaults(func=_do_eval)

    m = sub.add_parser("memreport", help="per-method kernel memory table")
    m.add_argument("--C", type=int, default=128)
    m.add_argument("--H", type=int, default=128)
    m.add_argument("--W", type=int, default=608)
    m.add_argument("--R", type=int, default=3)
    m.add_argument("--csv", default=None, help="write CSV here instead of printing")
    m.set_defaults(func=_do_memreport)

    g = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    g.add_argument("--scope", default="", help=f"one of: {', '.join(GRADCHECK_SCOPES)}")
    g.set_defaults(func=_do_gradcheck)

    s = sub.add_parser("sample", help="sparsify a dense PFM depth map")
    s.add_argument("--pattern", required=True, help="uniform:N | gaussian:N:SIGMA | grid:SY:SX")
    s.add_argument("--in", dest="infile", required=True, help="input dense PFM")
    s.add_argument("--out", required=True, help="output sparse PFM")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_do_sample)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
