"""Command-line interface: train / ensemble / report / inspect-checkpoint."""

import argparse
import logging
import sys

import numpy as np

from .checkpoint import load_checkpoint
from .config import load_config
from .report import collect_records, report, significance
from .runner import run, run_prediction_ensemble


def _add_train_args(p):
    p.add_argument("--config", required=True, help="path to a key=value config")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", default="runs", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="supt",
        description="Sparse training with cyclical-restart ticket superposition")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    _add_train_args(p_train)
    p_train.add_argument("--resume", default=None,
                         help="checkpoint to resume from")
    p_train.add_argument("--stop-epoch", type=int, default=0,
                         help="checkpoint and stop after this epoch")

    p_ens = sub.add_parser("ensemble",
                           help="train and evaluate the prediction ensemble")
    _add_train_args(p_ens)

    p_rep = sub.add_parser("report", help="aggregate run CSVs")
    p_rep.add_argument("--glob", required=True,
                       help="glob pattern of per-run CSV files")
    p_rep.add_argument("--out", default="report", help="output directory")
    p_rep.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    p_ins = sub.add_parser("inspect-checkpoint",
                           help="list the contents of a checkpoint")
    p_ins.add_argument("path")
    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = run(cfg, seed=args.seed, out_dir=args.out, resume=args.resume,
                 stop_after_epoch=args.stop_epoch)
    if args.stop_epoch:
        print(f"{result.tag} seed={result.seed}: stopped after epoch "
              f"{args.stop_epoch} ({result.iterations_run} iterations)")
        return 0
    final = result.records[-1]
    print(f"{result.tag} seed={result.seed}: accuracy={final.accuracy:.4f} "
          f"nll={final.nll:.4f} ece={final.ece:.4f} "
          f"sparsity={final.sparsity:.4f}")
    if result.ticket_accuracies:
        accs = ", ".join(f"{a:.4f}" for a in result.ticket_accuracies)
        print(f"  tickets: [{accs}]  superposed: {final.accuracy:.4f}")
    if result.csv_path:
        print(f"  records: {result.csv_path}")
    return 0


def _cmd_ensemble(args) -> int:
    cfg = load_config(args.config)
    result = run_prediction_ensemble(cfg, seed=args.seed, out_dir=args.out)
    by_tag = {r.tag: r for r in result.records}
    ens = by_tag[f"{result.tag}/ensemble"]
    fin = by_tag[f"{result.tag}/final"]
    print(f"{result.tag} seed={result.seed}: superposed={fin.accuracy:.4f} "
          f"prediction-ensemble={ens.accuracy:.4f} "
          f"(members={len(result.tickets)})")
    if result.diversity is not None:
        d_dis, d_kl = result.diversity
        print(f"  member diversity: disagreement={d_dis:.4f} "
              f"pairwise KL={d_kl:.4f}")
    if result.csv_path:
        print(f"  records: {result.csv_path}")
    return 0


def _cmd_report(args) -> int:
    records = collect_records(args.glob)
    if not records:
        print(f"no records matched {args.glob!r}", file=sys.stderr)
        return 1
    summaries = report(records, args.out, figures=not args.no_figures)
    print(f"{'group':40s} {'n':>3s} {'accuracy':>18s} {'nll':>8s} {'ece':>8s}")
    for s in summaries:
        print(f"{s.group:40s} {s.n:3d} {s.accuracy_mean:9.4f} "
              f"+- {s.accuracy_std:6.4f} {s.nll_mean:8.4f} {s.ece_mean:8.4f}")
    for row in significance(records):
        verdict = "significant" if row.significant else "not significant"
        print(f"KS {row.baseline} vs {row.variant}: "
              f"{row.baseline_mean:.4f} -> {row.variant_mean:.4f}, "
              f"D={row.d_statistic:.3f}, p={row.p_value:.3g} ({verdict})")
    print(f"report written to {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    state = load_checkpoint(args.path)
    meta = state.meta
    print(f"checkpoint {args.path}")
    print(f"  iteration: {meta.get('iteration')}  "
          f"master_seed: {meta.get('master_seed')}")
    acc = meta.get("accumulator")
    if acc:
        print(f"  tickets absorbed: {acc['t']}  provenance: {acc['provenance']}")
    cfg = meta.get("config", {})
    if cfg:
        print(f"  method: {cfg.get('method')}  init: {cfg.get('init')}  "
              f"sparsity: {cfg.get('sparsity')}  epochs: {cfg.get('epochs')}")
    print(f"  {len(state.tensors)} tensors:")
    for name in sorted(state.tensors):
        arr = state.tensors[name]
        info = f"{arr.dtype} {list(arr.shape)}"
        if arr.dtype == bool:
            info += f" ({int(arr.sum())}/{arr.size} active)"
        elif np.issubdtype(arr.dtype, np.floating):
            info += f" |max|={np.abs(arr).max():.4g}"
        print(f"    {name:28s} {info}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    commands = {"train": _cmd_train, "ensemble": _cmd_ensemble,
                "report": _cmd_report, "inspect-checkpoint": _cmd_inspect}
    return commands[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
