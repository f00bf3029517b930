"""Run reporting: fixed-schema CSV, grouped summaries, significance tests,
and figures rendered alongside the delimited output.

Tag conventions drive the aggregation: each run logs per-epoch rows under
its base tag, cycle-end rows under <tag>/ticket<k> and <tag>/ultimate, and
one <tag>/final row. A trailing "+sup" on the base tag marks the
superposition variant and pairs it with its baseline for the significance
test.
"""

import csv
import glob as globmod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import MetricsRecord, ks_test

CSV_HEADER = ("tag", "seed", "epoch", "sparsity", "accuracy", "nll", "ece",
              "flops_train_ratio", "flops_infer_ratio")


def write_records_csv(path, records) -> None:
    if not records:
        raise ValueError("no records to write")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.tag, r.seed, f"{r.epoch:g}", repr(r.sparsity),
                        repr(r.accuracy), repr(r.nll), repr(r.ece),
                        repr(r.flops_train_ratio), repr(r.flops_infer_ratio)])


def read_records_csv(path) -> list[MetricsRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header in {path}: {header}")
        for row in reader:
            records.append(MetricsRecord(
                tag=row[0], seed=int(row[1]), epoch=float(row[2]),
                sparsity=float(row[3]), accuracy=float(row[4]),
                nll=float(row[5]), ece=float(row[6]),
                flops_train_ratio=float(row[7]),
                flops_infer_ratio=float(row[8])))
    return records


def collect_records(pattern) -> list[MetricsRecord]:
    paths = sorted(globmod.glob(str(pattern)))
    records = []
    for p in paths:
        records.extend(read_records_csv(p))
    return records


def _last_per_seed(records) -> dict:
    """(tag, seed) -> record with the largest epoch."""
    latest = {}
    for r in records:
        key = (r.tag, r.seed)
        if key not in latest or r.epoch >= latest[key].epoch:
            latest[key] = r
    return latest


@dataclass
class GroupSummary:
    group: str
    n: int
    accuracy_mean: float
    accuracy_std: float
    nll_mean: float
    ece_mean: float
    sparsity_mean: float
    flops_train_mean: float
    flops_infer_mean: float


def summarize(records, group_keys=("tag",)) -> list[GroupSummary]:
    """Mean +- std per group over each seed's latest record."""
    if not records:
        raise ValueError("no records to summarize")
    if tuple(group_keys) != ("tag",):
        raise ValueError("grouping is by tag")
    latest = _last_per_seed(records)
    by_tag: dict[str, list[MetricsRecord]] = {}
    for (tag, _), rec in sorted(latest.items()):
        by_tag.setdefault(tag, []).append(rec)
    out = []
    for tag, recs in by_tag.items():
        accs = np.array([r.accuracy for r in recs])
        out.append(GroupSummary(
            group=tag, n=len(recs),
            accuracy_mean=float(accs.mean()),
            accuracy_std=float(accs.std(ddof=0)),
            nll_mean=float(np.mean([r.nll for r in recs])),
            ece_mean=float(np.mean([r.ece for r in recs])),
            sparsity_mean=float(np.mean([r.sparsity for r in recs])),
            flops_train_mean=float(np.mean([r.flops_train_ratio for r in recs])),
            flops_infer_mean=float(np.mean([r.flops_infer_ratio for r in recs])),
        ))
    return out


@dataclass
class SignificanceRow:
    baseline: str
    variant: str
    n_baseline: int
    n_variant: int
    baseline_mean: float
    variant_mean: float
    d_statistic: float
    p_value: float
    significant: bool


def significance(records, min_seeds: int = 3) -> list[SignificanceRow]:
    """KS test on final accuracies for every (base, base+sup) tag pair with
    enough seeds on both sides."""
    latest = _last_per_seed(records)
    finals: dict[str, list[float]] = {}
    for (tag, _), rec in sorted(latest.items()):
        if tag.endswith("/final"):
            finals.setdefault(tag.removesuffix("/final"), []).append(rec.accuracy)
    rows = []
    for tag in sorted(finals):
        for suffix in ("+sup", "+swa"):
            if not tag.endswith(suffix):
                continue
            base = tag.removesuffix(suffix)
            if base not in finals:
                continue
            a, b = finals[base], finals[tag]
            if len(a) < min_seeds or len(b) < min_seeds:
                continue
            ks = ks_test(a, b)
            rows.append(SignificanceRow(
                baseline=base, variant=tag, n_baseline=len(a),
                n_variant=len(b), baseline_mean=float(np.mean(a)),
                variant_mean=float(np.mean(b)), d_statistic=ks.statistic,
                p_value=ks.p_value, significant=ks.significant))
    return rows


def write_summary_csv(path, summaries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["group", "n", "accuracy_mean", "accuracy_std", "nll_mean",
                    "ece_mean", "sparsity_mean", "flops_train_mean",
                    "flops_infer_mean"])
        for s in summaries:
            w.writerow([s.group, s.n, repr(s.accuracy_mean),
                        repr(s.accuracy_std), repr(s.nll_mean),
                        repr(s.ece_mean), repr(s.sparsity_mean),
                        repr(s.flops_train_mean), repr(s.flops_infer_mean)])


def write_significance_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["baseline", "variant", "n_baseline", "n_variant",
                    "baseline_mean", "variant_mean", "d_statistic", "p_value",
                    "decision"])
        for r in rows:
            w.writerow([r.baseline, r.variant, r.n_baseline, r.n_variant,
                        repr(r.baseline_mean), repr(r.variant_mean),
                        repr(r.d_statistic), repr(r.p_value),
                        "significant" if r.significant else "not significant"])


# -- figures -------------------------------------------------------------------

def render_figures(records, out_dir) -> list[str]:
    """Accuracy curves, final-accuracy bars, and per-ticket-vs-ultimate
    trajectories, saved as PNG files. Returns the written paths."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    base_tags = sorted({r.tag for r in records if "/" not in r.tag})
    if base_tags:
        fig, ax = plt.subplots(figsize=(6, 4))
        for tag in base_tags:
            by_epoch: dict[float, list[float]] = {}
            for r in records:
                if r.tag == tag:
                    by_epoch.setdefault(r.epoch, []).append(r.accuracy)
            epochs = sorted(by_epoch)
            ax.plot(epochs, [np.mean(by_epoch[e]) for e in epochs],
                    marker=".", label=tag)
        ax.set_xlabel("epoch")
        ax.set_ylabel("test accuracy")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        path = out / "accuracy_vs_epoch.png"
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        written.append(str(path))

    summaries = summarize(records)
    finals = [s for s in summaries if s.group.endswith("/final")
              or s.group.endswith("/ensemble")]
    if finals:
        fig, ax = plt.subplots(figsize=(6, 4))
        names = [s.group for s in finals]
        means = [s.accuracy_mean for s in finals]
        stds = [s.accuracy_std for s in finals]
        ax.bar(range(len(names)), means, yerr=stds, capsize=3)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
        ax.set_ylabel("final test accuracy")
        ax.grid(axis="y", alpha=0.3)
        path = out / "final_accuracy.png"
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        written.append(str(path))

    ticket_bases = sorted({r.tag.rsplit("/", 1)[0] for r in records
                           if "/ticket" in r.tag})
    if ticket_bases:
        fig, ax = plt.subplots(figsize=(6, 4))
        for base in ticket_bases:
            tick_by_ep: dict[float, list[float]] = {}
            ult_by_ep: dict[float, list[float]] = {}
            for r in records:
                if r.tag.startswith(base + "/ticket"):
                    tick_by_ep.setdefault(r.epoch, []).append(r.accuracy)
                elif r.tag == base + "/ultimate":
                    ult_by_ep.setdefault(r.epoch, []).append(r.accuracy)
            eps = sorted(tick_by_ep)
            ax.plot(eps, [np.mean(tick_by_ep[e]) for e in eps], "o--",
                    label=f"{base} tickets")
            eps = sorted(ult_by_ep)
            ax.plot(eps, [np.mean(ult_by_ep[e]) for e in eps], "s-",
                    label=f"{base} superposed")
        ax.set_xlabel("epoch")
        ax.set_ylabel("test accuracy")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        path = out / "tickets_vs_ultimate.png"
        fig.savefig(path, dpi=150, bbox_inches="tight")
        plt.close(fig)
        written.append(str(path))
    return written


def report(records, out_dir, group_keys=("tag",),
           figures: bool = True) -> list[GroupSummary]:
    """Write combined CSV, summary, significance table, and figures."""
    if not records:
        raise ValueError("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records_csv(out / "all_records.csv", records)
    summaries = summarize(records, group_keys=group_keys)
    write_summary_csv(out / "summary.csv", summaries)
    write_significance_csv(out / "significance.csv", significance(records))
    if figures:
        render_figures(records, out)
    return summaries
