import csv
import json

import numpy as np
import pytest

from groupsparse.cli import ConfigError, load_config, load_dataset_spec, main, run_single


def parity_config(tmp_path, **train_overrides):
    train = {
        "lambda": 0.001,
        "batch_size": 50,
        "lr": 0.1,
        "decay": 0.99,
        "epochs": 2,
        "algorithm": "sbcgd",
        "seed": 7,
    }
    train.update(train_overrides)
    cfg = {
        "dataset": {"kind": "parity", "n_train": 300, "n_test": 100, "seed": 1},
        "network": {"hidden": [8], "activation": "relu"},
        "loss": {"kind": "cross_entropy"},
        "train": train,
        "out_dir": str(tmp_path / "out"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, cfg


class TestConfigValidation:
    def test_unknown_top_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({
            "dataset": {"kind": "parity"}, "network": {"hidden": []}, "optimizer": {},
        }))
        with pytest.raises(ConfigError, match="config.optimizer"):
            load_config(path)

    def test_unknown_train_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({
            "dataset": {"kind": "parity"}, "network": {"hidden": []},
            "train": {"momentum": 0.9},
        }))
        with pytest.raises(ConfigError, match="train.momentum"):
            load_config(path)

    def test_unknown_dataset_kind(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"dataset": {"kind": "cifar"}, "network": {"hidden": []}}))
        with pytest.raises(ConfigError, match="kind"):
            load_config(path)

    def test_missing_network(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"dataset": {"kind": "parity"}}))
        with pytest.raises(ConfigError, match="network"):
            load_config(path)

    def test_unknown_metric(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({
            "dataset": {"kind": "parity"}, "network": {"hidden": []},
            "metrics": ["f1"],
        }))
        with pytest.raises(ConfigError, match="f1"):
            load_config(path)

    def test_cli_reports_config_error(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({
            "dataset": {"kind": "parity"}, "network": {"hidden": []},
            "train": {"lr_decay": 1},
        }))
        code = main(["train", "--config", str(path)])
        assert code == 2
        assert "lr_decay" in capsys.readouterr().err


class TestDatasetSpec:
    def test_parity_spec(self):
        train, ev = load_dataset_spec({"kind": "parity", "n_train": 50, "n_test": 20})
        assert train.n == 50 and ev.n == 20
        assert train.partition.k == 5

    def test_parity_no_test(self):
        train, ev = load_dataset_spec({"kind": "parity", "n_train": 30})
        assert ev is None

    def test_csv_spec(self, tmp_path):
        data = tmp_path / "d.csv"
        data.write_text("a,b,label\n1,2,0\n3,4,1\n5,6,0\n7,8,1\n")
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps(
            {"label": "label", "groups": [{"name": "g", "columns": [0, 1]}]}
        ))
        train, ev = load_dataset_spec({"kind": "csv", "data": str(data),
                                       "manifest": str(manifest), "holdout": 1})
        assert train.n == 3 and ev.n == 1


class TestTrainCommand:
    def test_writes_outputs(self, tmp_path):
        path, cfg = parity_config(tmp_path)
        assert main(["train", "--config", str(path)]) == 0
        out = tmp_path / "out"
        metrics = json.loads((out / "metrics.json").read_text())
        assert "sparse_groups" in metrics and "train_metrics" in metrics
        assert (out / "snapshot.json").exists()
        lines = (out / "trace.jsonl").read_text().strip().splitlines()
        assert len(lines) == 2
        assert {"epoch", "lr", "pruned"} <= set(json.loads(lines[0]))

    def test_metrics_json_deterministic(self, tmp_path):
        path, cfg = parity_config(tmp_path)
        main(["train", "--config", str(path), "--out", str(tmp_path / "a")])
        main(["train", "--config", str(path), "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "metrics.json").read_bytes() == \
               (tmp_path / "b" / "metrics.json").read_bytes()

    def test_missing_dataset_file_nonzero_exit(self, tmp_path, capsys):
        cfg = {
            "dataset": {"kind": "csv", "data": str(tmp_path / "absent.csv"),
                        "manifest": str(tmp_path / "m.json")},
            "network": {"hidden": []},
        }
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        assert main(["train", "--config", str(path)]) == 2
        assert "not found" in capsys.readouterr().err

    def test_lambda_zero_no_sparsity(self, tmp_path):
        path, _ = parity_config(tmp_path, **{"lambda": 0.0})
        main(["train", "--config", str(path)])
        metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert metrics["sparse_count"] == 0


class TestSweepCommand:
    def test_csv_column_contract(self, tmp_path):
        path, _ = parity_config(tmp_path, epochs=1)
        assert main(["sweep", "--config", str(path), "--lambdas", "0,0.001"]) == 0
        with open(tmp_path / "out" / "sweep.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["lambda", "sparse_count", "sparse_groups", "accuracy",
                           "auc", "max_cc", "seconds"]
        assert len(rows) == 3
        assert rows[1][0] == "0.0"

    def test_lambda_zero_row_has_no_sparsity(self, tmp_path):
        path, _ = parity_config(tmp_path, epochs=1)
        main(["sweep", "--config", str(path), "--lambdas", "0"])
        rows = json.loads((tmp_path / "out" / "sweep.json").read_text())
        assert rows[0]["sparse_count"] == 0

    def test_rows_sorted_by_lambda(self, tmp_path):
        path, _ = parity_config(tmp_path, epochs=1)
        main(["sweep", "--config", str(path), "--lambdas", "0.01,0.0001,0.001"])
        rows = json.loads((tmp_path / "out" / "sweep.json").read_text())
        lams = [r["lambda"] for r in rows]
        assert lams == sorted(lams)

    def test_parallel_jobs_match_serial(self, tmp_path):
        path, _ = parity_config(tmp_path, epochs=1)
        main(["sweep", "--config", str(path), "--lambdas", "0,0.001",
              "--out", str(tmp_path / "serial")])
        main(["sweep", "--config", str(path), "--lambdas", "0,0.001",
              "--jobs", "2", "--out", str(tmp_path / "par")])
        assert (tmp_path / "serial" / "sweep.json").read_bytes() == \
               (tmp_path / "par" / "sweep.json").read_bytes()


class TestStabilityCommand:
    def test_reports_jaccard(self, tmp_path, capsys):
        path, _ = parity_config(tmp_path, epochs=1)
        assert main(["stability", "--config", str(path), "--runs", "3"]) == 0
        doc = json.loads((tmp_path / "out" / "stability.json").read_text())
        assert 0.0 <= doc["mean_pairwise_jaccard"] <= 1.0
        assert len(doc["runs"]) == 3

    def test_deterministic_selections_give_one(self, tmp_path):
        # lambda 0: nothing pruned, every run selects all groups
        path, _ = parity_config(tmp_path, **{"lambda": 0.0, "epochs": 1})
        main(["stability", "--config", str(path), "--runs", "3"])
        doc = json.loads((tmp_path / "out" / "stability.json").read_text())
        assert doc["mean_pairwise_jaccard"] == 1.0

    def test_needs_two_runs(self, tmp_path, capsys):
        path, _ = parity_config(tmp_path)
        assert main(["stability", "--config", str(path), "--runs", "1"]) == 2


class TestEvalCommand:
    def test_eval_matches_training_metrics(self, tmp_path):
        path, _ = parity_config(tmp_path)
        main(["train", "--config", str(path)])
        out = tmp_path / "out"
        metrics = json.loads((out / "metrics.json").read_text())
        assert main(["eval", "--config", str(path), "--snapshot", str(out / "snapshot.json"),
                     "--split", "train", "--out", str(tmp_path / "ev")]) == 0
        doc = json.loads((tmp_path / "ev" / "eval.json").read_text())
        assert doc["metrics"]["accuracy"] == metrics["train_metrics"]["accuracy"]
        assert doc["sparse_groups"] == metrics["sparse_groups"]

    def test_eval_split_uses_test_data(self, tmp_path):
        path, _ = parity_config(tmp_path)
        main(["train", "--config", str(path)])
        out = tmp_path / "out"
        metrics = json.loads((out / "metrics.json").read_text())
        main(["eval", "--config", str(path), "--snapshot", str(out / "snapshot.json"),
              "--out", str(tmp_path / "ev")])
        doc = json.loads((tmp_path / "ev" / "eval.json").read_text())
        assert doc["split"] == "eval"
        assert doc["metrics"]["accuracy"] == metrics["eval_metrics"]["accuracy"]

    def test_dimension_mismatch_rejected(self, tmp_path, capsys):
        path, _ = parity_config(tmp_path)
        main(["train", "--config", str(path)])
        other = {
            "dataset": {"kind": "parity", "n_train": 20, "seed": 0},
            "network": {"hidden": []},
        }
        # same width actually; craft a csv dataset with different width
        data = tmp_path / "d.csv"
        data.write_text("a,b,label\n1,2,0\n3,4,1\n")
        manifest = tmp_path / "m.json"
        manifest.write_text(json.dumps(
            {"label": "label", "groups": [{"name": "g", "columns": [0, 1]}]}
        ))
        other["dataset"] = {"kind": "csv", "data": str(data), "manifest": str(manifest)}
        opath = tmp_path / "other.json"
        opath.write_text(json.dumps(other))
        code = main(["eval", "--config", str(opath),
                     "--snapshot", str(tmp_path / "out" / "snapshot.json")])
        assert code == 2
        assert "dim" in capsys.readouterr().err

    def test_confusion_csv(self, tmp_path):
        path, _ = parity_config(tmp_path)
        main(["train", "--config", str(path)])
        main(["eval", "--config", str(path), "--snapshot",
              str(tmp_path / "out" / "snapshot.json"),
              "--confusion-csv", str(tmp_path / "cm.csv"),
              "--out", str(tmp_path / "ev")])
        with open(tmp_path / "cm.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["", "pred_0", "pred_1"]
        total = sum(int(x) for row in rows[1:] for x in row[1:])
        assert total == 100  # n_test

    def test_seed_override_changes_run(self, tmp_path):
        path, _ = parity_config(tmp_path)
        main(["train", "--config", str(path), "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["train", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "2"])
        a = json.loads((tmp_path / "a" / "metrics.json").read_text())
        b = json.loads((tmp_path / "b" / "metrics.json").read_text())
        assert a["seed"] == 1 and b["seed"] == 2
