"""Command-line entry point.

Exit status: 0 on success, 1 on bad input (flags, config, files), 2 on a
numeric failure during computation.

Report columns
  cost:  K, usrmnet_flops, hebf_flops, w3_percent
  eval:  index, wsr, vg, feasible, reference_wsr   (CSV next to the JSON report)
  train: epoch, layer, loss, wsr, vg, s1, s2, lambda_norm, test_wsr, test_vg
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import cost, unroll
from ..dcore import NumericError
from ..learn import TrainLog
from . import config as cfgmod
from . import dataset, experiments, metrics



class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base RNG seed")
    p.add_argument("--config", default=argparse.SUPPRESS, help="key = value config file")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output path")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser():
    common = _common()
    p = _Parser(prog="upgd", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter, parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="write a channel dataset")
    g.add_argument("--n", type=int, help="sample count (default: n_train)")
    g.add_argument("--K", type=int)
    g.add_argument("--Nt", type=int)
    g.add_argument("--snr", type=float, dest="snr_db")
    g.add_argument("--du", type=float)
    g.add_argument("--dc", type=float)

    t = sub.add_parser("train", parents=[common], help="train a model; writes checkpoint and CSV log")
    t.add_argument("--data", help="training dataset (generated from config when absent)")
    t.add_argument("--test", help="held-out dataset for per-epoch test metrics")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--reference", choices=["oracle"])
    e.add_argument("--grid", type=int, help="oracle grid resolution")

    pt = sub.add_parser("permtest", parents=[common], help="permutation equivariance suite")
    pt.add_argument("--K", type=int, default=4)
    pt.add_argument("--Nt", type=int, default=8)
    pt.add_argument("--trials", type=int, default=100)
    pt.add_argument("--tol", type=float, default=1e-9)

    c = sub.add_parser("cost", parents=[common], help="operation-count table")
    c.add_argument("--K", type=int, nargs="+", default=[4, 6, 8, 10])
    c.add_argument("--Nt", type=int, default=32)
    c.add_argument("--L", type=int, default=2)
    c.add_argument("--updates", type=int, default=3)

    o = sub.add_parser("oracle", parents=[common], help="compare a checkpoint against grid search")
    o.add_argument("--model", required=True)
    o.add_argument("--data", required=True)
    o.add_argument("--grid", type=int)
    return p


def _run_config(args):
    cfg = cfgmod.load(args.config) if getattr(args, "config", None) else cfgmod.RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for key in ("K", "Nt", "snr_db", "du", "dc"):
        v = getattr(args, key, None)
        if v is not None and args.command == "gen":
            setattr(cfg, key, v)
    return cfg


def _emit(text, out):
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_gen(args):
    cfg = _run_config(args)
    if not getattr(args, "out", None):
        raise UsageError("gen needs --out")
    ds = dataset.generate(cfg.system(), cfg.geometry(), cfg.seed, args.n or cfg.n_train)
    dataset.write(args.out, ds)
    print(f"wrote {len(ds)} samples to {args.out}")


def cmd_train(args):
    cfg = _run_config(args)
    outdir = getattr(args, "out", None) or "."
    os.makedirs(outdir, exist_ok=True)
    train = dataset.read(args.data) if args.data else None
    test = dataset.read(args.test) if args.test else None
    for d in (train, test):
        if d is not None and (d.sys.K, d.sys.Nt) != (cfg.K, cfg.Nt):
            raise ValueError("dataset shape does not match the config's K and Nt")
    run = experiments.train_run(cfg, train, test)
    tlog = TrainLog()
    for lg in run.logs:
        tlog.extend(lg)
    tlog.write_csv(os.path.join(outdir, "train_log.csv"))
    ck = os.path.join(outdir, "checkpoint.json")
    unroll.save_checkpoint(ck, run.model, [d.to_json() for d in run.duals], cfg.to_dict())
    last = [lg.records[-1] for lg in run.logs if lg.records]
    for r in last:
        print(f"layer {r.layer}: loss {r.loss:.6g} test_wsr {r.test_wsr:.6g} test_vg {r.test_vg:.3g}")
    print(f"wrote {ck}")


def cmd_eval(args):
    model, _ = unroll.load_checkpoint(args.model)
    ds = dataset.read(args.data)
    _check_shape(model, ds)
    rep = metrics.evaluate(model, ds, reference=args.reference, grid=args.grid)
    out = getattr(args, "out", None)
    _emit(rep.to_json(), out)
    if out:
        with open(os.path.splitext(out)[0] + ".csv", "w") as f:
            f.write(rep.to_csv())
    else:
        sys.stdout.write(rep.to_csv())


def cmd_permtest(args):
    seed = getattr(args, "seed", None)
    dev = experiments.perm_suite(args.K, args.Nt, seed=0 if seed is None else seed, trials=args.trials)
    print(f"max deviation {dev:.3e} over {args.trials} permutations (K={args.K}, Nt={args.Nt})")
    if not dev < args.tol:
        raise NumericError(f"equivariance deviation {dev:.3e} exceeds {args.tol:g}")


def cmd_cost(args):
    lines = ["K,usrmnet_flops,hebf_flops,w3_percent\n"]
    for K, u, h, r in cost.table(args.K, args.Nt, args.L, args.updates):
        lines.append(f"{K},{u},{h:.3e},{r:.2f}\n")
    _emit("".join(lines), getattr(args, "out", None))


def cmd_oracle(args):
    model, _ = unroll.load_checkpoint(args.model)
    ds = dataset.read(args.data)
    _check_shape(model, ds)
    rep = metrics.evaluate(model, ds, reference="oracle", grid=args.grid)
    doc = {"reference": rep.reference, "n": rep.n, "w2": rep.w2,
           "wsr_mean": rep.to_dict()["wsr_mean"],
           "oracle_mean": float(np.nanmean(rep.reference_wsr)) if np.isfinite(rep.reference_wsr).any() else None,
           "w1": rep.to_dict()["w1"]}
    _emit(json.dumps(doc, indent=1, sort_keys=True) + "\n", getattr(args, "out", None))


def _check_shape(model, ds):
    if model.K != ds.sys.K:
        raise ValueError(f"checkpoint is for K={model.K}, dataset has K={ds.sys.K}")


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval,
            "permtest": cmd_permtest, "cost": cmd_cost, "oracle": cmd_oracle}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (NumericError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
