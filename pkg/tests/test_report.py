import numpy as np
import pytest

from supt.metrics import MetricsRecord
from supt.report import (CSV_HEADER, collect_records, read_records_csv,
                         render_figures, report, significance, summarize,
                         write_records_csv)


def rec(tag, seed, epoch, acc, sparsity=0.9, nll=0.4, ece=0.05,
        ftr=0.2, fir=0.2):
    return MetricsRecord(tag=tag, seed=seed, epoch=epoch, sparsity=sparsity,
                         accuracy=acc, nll=nll, ece=ece,
                         flops_train_ratio=ftr, flops_infer_ratio=fir)


def run_records(tag, seed, final_acc):
    out = [rec(tag, seed, float(e), final_acc - 0.05 * (3 - e))
           for e in range(1, 4)]
    out.append(rec(f"{tag}/ticket1", seed, 2.0, final_acc - 0.02))
    out.append(rec(f"{tag}/ultimate", seed, 2.0, final_acc - 0.01))
    out.append(rec(f"{tag}/final", seed, 3.0, final_acc))
    return out


class TestCsvContract:
    def test_header_is_the_documented_string(self, tmp_path):
        path = tmp_path / "run.csv"
        write_records_csv(path, [rec("set", 0, 1.0, 0.9)])
        first = path.read_text().splitlines()[0]
        assert first == "tag,seed,epoch,sparsity,accuracy,nll,ece," \
                        "flops_train_ratio,flops_infer_ratio"
        assert CSV_HEADER == tuple(first.split(","))

    def test_single_record_single_row(self, tmp_path):
        path = tmp_path / "run.csv"
        write_records_csv(path, [rec("set", 0, 1.0, 0.9)])
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        summaries = summarize(read_records_csv(path))
        assert len(summaries) == 1
        assert summaries[0].n == 1
        assert summaries[0].accuracy_std == 0.0

    def test_round_trip_preserves_values(self, tmp_path):
        path = tmp_path / "run.csv"
        records = [rec("rigl+sup", 3, 2.0, 0.123456789012345,
                       nll=1.0 / 3.0, ece=2.0 / 7.0)]
        write_records_csv(path, records)
        back = read_records_csv(path)[0]
        assert back.accuracy == records[0].accuracy
        assert back.nll == records[0].nll
        assert back.ece == records[0].ece
        assert back.seed == 3 and back.epoch == 2.0

    def test_rejects_foreign_header(self, tmp_path):
        path = tmp_path / "junk.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            read_records_csv(path)

    def test_empty_records_error(self, tmp_path):
        with pytest.raises(ValueError):
            write_records_csv(tmp_path / "x.csv", [])
        with pytest.raises(ValueError):
            summarize([])


class TestCollect:
    def test_glob_across_runs(self, tmp_path):
        for seed in range(3):
            write_records_csv(tmp_path / f"a_seed{seed}.csv",
                              run_records("set-erk", seed, 0.9 + 0.001 * seed))
        records = collect_records(tmp_path / "*.csv")
        assert len(records) == 18
        groups = {s.group for s in summarize(records)}
        assert "set-erk/final" in groups


class TestSignificance:
    def test_identical_samples_not_significant(self):
        records = []
        for seed in range(5):
            records += run_records("set-erk", seed, 0.90)
            records += run_records("set-erk+sup", seed, 0.90)
        rows = significance(records)
        assert len(rows) == 1
        assert rows[0].p_value > 0.999
        assert not rows[0].significant

    def test_separated_samples_significant(self):
        records = []
        for seed in range(8):
            records += run_records("set-erk", seed, 0.80 + 0.001 * seed)
            records += run_records("set-erk+sup", seed, 0.92 + 0.001 * seed)
        rows = significance(records)
        assert rows[0].significant
        assert rows[0].d_statistic == 1.0
        assert rows[0].variant == "set-erk+sup"

    def test_needs_three_seeds(self):
        records = []
        for seed in range(2):
            records += run_records("set-erk", seed, 0.8)
            records += run_records("set-erk+sup", seed, 0.9)
        assert significance(records) == []

    def test_unpaired_groups_skipped(self):
        records = []
        for seed in range(4):
            records += run_records("rigl-erk+sup", seed, 0.9)
        assert significance(records) == []


class TestFiguresAndReport:
    def _records(self):
        records = []
        for seed in range(3):
            records += run_records("rigl-erk", seed, 0.88 + 0.002 * seed)
            records += run_records("rigl-erk+sup", seed, 0.91 + 0.002 * seed)
        return records

    def test_figures_written(self, tmp_path):
        paths = render_figures(self._records(), tmp_path)
        names = {p.rsplit("/", 1)[-1] for p in paths}
        assert names == {"accuracy_vs_epoch.png", "final_accuracy.png",
                         "tickets_vs_ultimate.png"}
        for p in paths:
            with open(p, "rb") as f:
                assert f.read(8).startswith(b"\x89PNG")

    def test_report_emits_everything(self, tmp_path):
        summaries = report(self._records(), tmp_path)
        assert (tmp_path / "all_records.csv").exists()
        assert (tmp_path / "summary.csv").exists()
        assert (tmp_path / "significance.csv").exists()
        assert (tmp_path / "accuracy_vs_epoch.png").exists()
        groups = {s.group for s in summaries}
        assert "rigl-erk+sup/final" in groups
        sig = (tmp_path / "significance.csv").read_text().splitlines()
        assert len(sig) == 2  # header + the one pair
        assert sig[1].startswith("rigl-erk,rigl-erk+sup,3,3")

    def test_report_without_figures(self, tmp_path):
        report(self._records(), tmp_path, figures=False)
        assert not (tmp_path / "accuracy_vs_epoch.png").exists()

    def test_report_empty_errors(self, tmp_path):
        with pytest.raises(ValueError):
            report([], tmp_path)


def test_summary_values():
    records = []
    for seed, acc in [(0, 0.90), (1, 0.92), (2, 0.94)]:
        records += run_records("set-erk", seed, acc)
    summary = [s for s in summarize(records) if s.group == "set-erk/final"][0]
    assert np.isclose(summary.accuracy_mean, 0.92)
    assert np.isclose(summary.accuracy_std, np.std([0.90, 0.92, 0.94]))
    assert summary.n == 3
