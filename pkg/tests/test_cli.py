"""End-to-end command-line behavior: every command is a pure function of
its flags and inputs, and every contract violation exits nonzero."""

import numpy as np
import pytest

from pseudolab.cli import main
from pseudolab.datagen import LABELED, OOD, UNLABELED, load_dataset
from pseudolab.gating import DecisionDumpWriter, PseudoLabelDecision


def run_cli(*argv):
    return main([str(a) for a in argv])


@pytest.fixture()
def gen_args(tmp_path):
    out = tmp_path / "data.txt"
    return out, ["gen-data", "--classes", "4", "--dim", "6", "--gamma", "4",
                 "--n1", "40", "--labeled-frac", "0.25", "--seed", "5",
                 "--test-per-class", "10", "--out", out]


class TestGenData:
    def test_balanced_fully_labeled(self, tmp_path):
        out = tmp_path / "data.txt"
        code = run_cli("gen-data", "--classes", "3", "--dim", "4", "--gamma", "1",
                       "--n1", "12", "--labeled-frac", "1.0", "--out", out)
        assert code == 0
        ds = load_dataset(out)
        assert np.all(ds.origin == LABELED)
        np.testing.assert_array_equal(ds.class_counts, [12, 12, 12])

    def test_longtail_endpoint(self, tmp_path, capsys):
        out = tmp_path / "data.txt"
        code = run_cli("gen-data", "--classes", "10", "--dim", "12", "--gamma", "100",
                       "--n1", "500", "--labeled-frac", "0.1", "--out", out)
        assert code == 0
        ds = load_dataset(out)
        assert ds.class_counts[0] == 500
        assert ds.class_counts[-1] == 5
        assert "class labeled unlabeled" in capsys.readouterr().out

    def test_rerun_is_byte_identical(self, gen_args, tmp_path):
        out, argv = gen_args
        assert run_cli(*argv) == 0
        first = out.read_bytes()
        first_test = (tmp_path / "data.txt.test").read_bytes()
        assert run_cli(*argv) == 0
        assert out.read_bytes() == first
        assert (tmp_path / "data.txt.test").read_bytes() == first_test

    def test_ood_injection(self, tmp_path):
        out = tmp_path / "data.txt"
        code = run_cli("gen-data", "--classes", "3", "--dim", "4", "--n1", "20",
                       "--ood", "15", "--out", out)
        assert code == 0
        ds = load_dataset(out)
        assert int(np.sum(ds.origin == OOD)) == 15

    def test_dim_smaller_than_classes_fails(self, tmp_path, capsys):
        code = run_cli("gen-data", "--classes", "8", "--dim", "4",
                       "--out", tmp_path / "x.txt")
        assert code != 0
        assert "error:" in capsys.readouterr().err


def write_config(tmp_path, dataset, **overrides):
    values = {
        "dataset": dataset,
        "total_iters": 20,
        "eval_every": 10,
        "strategy": "energy",
        "tau_e": -2.0,
        "labeled_batch": 8,
        "unlabeled_ratio": 3,
        "seed": 2,
        "weak_sigma": 0.05,
        "strong_sigma": 0.2,
        "strong_dropout": 0.1,
    }
    values.update(overrides)
    path = tmp_path / "run.cfg"
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    return path


@pytest.fixture()
def dataset_and_config(tmp_path):
    data = tmp_path / "data.txt"
    assert run_cli("gen-data", "--classes", "3", "--dim", "4", "--gamma", "3",
                   "--n1", "30", "--labeled-frac", "0.3", "--seed", "7",
                   "--test-per-class", "15", "--out", data) == 0
    return data, write_config(tmp_path, data)


class TestTrain:
    def test_writes_outputs_and_exits_zero(self, tmp_path, dataset_and_config, capsys):
        _, cfg = dataset_and_config
        out = tmp_path / "run1"
        assert run_cli("train", "--config", cfg, "--out", out) == 0
        assert (out / "metrics.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "params.txt").exists()
        assert "final acc_ema=" in capsys.readouterr().out

    def test_identical_configs_identical_metrics(self, tmp_path, dataset_and_config):
        _, cfg = dataset_and_config
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("train", "--config", cfg, "--out", a) == 0
        assert run_cli("train", "--config", cfg, "--out", b) == 0
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()

    def test_override_applies(self, tmp_path, dataset_and_config):
        _, cfg = dataset_and_config
        out = tmp_path / "run_sup"
        assert run_cli("train", "--config", cfg, "--out", out,
                       "--override", "lambda_u=0", "strategy=confidence", "tau_c=0.95") == 0
        summary = (out / "summary.json").read_text()
        assert '"lambda_u": 0.0' in summary
        assert '"strategy": "confidence"' in summary

    def test_unknown_override_key_fails(self, tmp_path, dataset_and_config, capsys):
        _, cfg = dataset_and_config
        code = run_cli("train", "--config", cfg, "--out", tmp_path / "x",
                       "--override", "widget=3")
        assert code != 0
        assert "unknown config key" in capsys.readouterr().err

    def test_decision_dump_written(self, tmp_path, dataset_and_config):
        _, cfg = dataset_and_config
        dump = tmp_path / "decisions.txt"
        assert run_cli("train", "--config", cfg, "--out", tmp_path / "run2",
                       "--decisions", dump) == 0
        lines = dump.read_text().splitlines()
        assert lines[0].startswith("iteration ")
        assert len(lines) == 1 + 20 * 24  # total_iters * unlabeled batch

    def test_abort_writes_diagnostic_and_exits_two(self, tmp_path, dataset_and_config):
        data, cfg = dataset_and_config
        ds = load_dataset(data)
        ds.features[...] *= 1e160
        from pseudolab.datagen import save_dataset
        save_dataset(ds, data)
        out = tmp_path / "boom"
        with np.errstate(all="ignore"):
            code = run_cli("train", "--config", cfg, "--out", out)
        assert code == 2
        assert (out / "abort.json").exists()


class TestSweep:
    def test_single_cell_equals_plain_run(self, tmp_path, dataset_and_config, capsys):
        _, cfg = dataset_and_config
        out = tmp_path / "single"
        assert run_cli("train", "--config", cfg, "--out", out) == 0
        final_line = (out / "metrics.csv").read_text().strip().splitlines()[-1]
        acc_ema = final_line.split(",")[-1]
        capsys.readouterr()

        assert run_cli("sweep", "--config", cfg, "--param", "tau_e",
                       "--values", "-2.0", "--seeds", "1") == 0
        rows = capsys.readouterr().out.splitlines()
        assert rows[0] == "value,seed,acc_ema,status,is_default"
        assert acc_ema in rows[1]

    def test_row_count_and_files(self, tmp_path, dataset_and_config):
        _, cfg = dataset_and_config
        out = tmp_path / "sweepdir"
        assert run_cli("sweep", "--config", cfg, "--param", "tau_e",
                       "--values", "-3.0,-2.0", "--seeds", "2",
                       "--jobs", "2", "--out", out) == 0
        rows = (out / "sweep_rows.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 4
        summary = (out / "sweep_summary.csv").read_text().strip().splitlines()
        assert len(summary) == 1 + 2

    def test_unknown_param_fails(self, dataset_and_config, capsys):
        _, cfg = dataset_and_config
        code = run_cli("sweep", "--config", cfg, "--param", "hidden", "--values", "1")
        assert code != 0
        assert "sweepable" in capsys.readouterr().err


class TestAnalyze:
    def test_fixture_dump_matches_counts(self, tmp_path, dataset_and_config, capsys):
        data, _ = dataset_and_config
        ds = load_dataset(data)
        unl = ds.indices(UNLABELED)[:4]
        dump = tmp_path / "dec.txt"
        with DecisionDumpWriter(dump) as w:
            w.write(1, [
                PseudoLabelDecision(int(unl[0]), -3.0, True,
                                    int(ds.labels[unl[0]]), int(ds.labels[unl[0]])),
                PseudoLabelDecision(int(unl[1]), -1.0, False,
                                    0, int(ds.labels[unl[1]])),
            ])
            w.write(2, [
                PseudoLabelDecision(int(unl[2]), -3.5, True,
                                    int(ds.labels[unl[2]]), int(ds.labels[unl[2]])),
            ])
        assert run_cli("analyze", "--decisions", dump, "--dataset", data,
                       "--groups", "1,1") == 0
        out = capsys.readouterr().out
        assert "group,precision,recall" in out
        assert "overall,1.000000" in out
        assert "iteration,ood_included" in out

    def test_empty_dump_gives_undef_table(self, tmp_path, dataset_and_config, capsys):
        data, _ = dataset_and_config
        dump = tmp_path / "empty.txt"
        with DecisionDumpWriter(dump):
            pass
        assert run_cli("analyze", "--decisions", dump, "--dataset", data,
                       "--groups", "1,1") == 0
        out = capsys.readouterr().out
        assert "overall,undef,undef" in out

    def test_overall_only_grouping(self, tmp_path, dataset_and_config, capsys):
        data, _ = dataset_and_config
        dump = tmp_path / "dec.txt"
        with DecisionDumpWriter(dump) as w:
            ds = load_dataset(data)
            i = int(ds.indices(UNLABELED)[0])
            w.write(1, [PseudoLabelDecision(i, -3.0, True, 0, int(ds.labels[i]))])
        assert run_cli("analyze", "--decisions", dump, "--dataset", data,
                       "--groups", "0,0") == 0
        out = capsys.readouterr().out
        assert "overall," in out
        assert "head," not in out

    def test_mismatched_truth_is_integrity_error(self, tmp_path, dataset_and_config, capsys):
        data, _ = dataset_and_config
        ds = load_dataset(data)
        i = int(ds.indices(UNLABELED)[0])
        wrong = (int(ds.labels[i]) + 1) % ds.num_classes
        dump = tmp_path / "dec.txt"
        with DecisionDumpWriter(dump) as w:
            w.write(1, [PseudoLabelDecision(i, -3.0, True, 0, wrong)])
        code = run_cli("analyze", "--decisions", dump, "--dataset", data)
        assert code != 0
        assert "data-integrity" in capsys.readouterr().err

    def test_out_of_range_index_is_integrity_error(self, tmp_path, dataset_and_config, capsys):
        data, _ = dataset_and_config
        dump = tmp_path / "dec.txt"
        with DecisionDumpWriter(dump) as w:
            w.write(1, [PseudoLabelDecision(10 ** 6, -3.0, True, 0, 0)])
        code = run_cli("analyze", "--decisions", dump, "--dataset", data)
        assert code != 0
        assert "data-integrity" in capsys.readouterr().err


class TestUsage:
    def test_missing_subcommand_exits_nonzero(self):
        with pytest.raises(SystemExit) as excinfo:
            run_cli()
        assert excinfo.value.code != 0

    def test_missing_required_flag_exits_nonzero(self):
        with pytest.raises(SystemExit) as excinfo:
            run_cli("gen-data")
        assert excinfo.value.code != 0
