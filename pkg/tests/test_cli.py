import csv
import json

import numpy as np
import pytest

from vlfat.cli import main
from vlfat.model import load_checkpoint

MICRO_TASK = {
    "height": 16,
    "width": 16,
    "n_min": 8,
    "n_max": 12,
    "noise_level": 0.02,
}


def write_config(path, doc):
    path.write_text(json.dumps(doc, indent=1))
    return str(path)


def gen_config(tmp_path, seed=0, counts=None):
    return {
        "seed": seed,
        "data": {
            "out_dir": str(tmp_path / "data"),
            "counts": counts or {"train": 4, "val": 2, "test": 2},
            "task": dict(MICRO_TASK),
        },
    }


def train_config(tmp_path, mode="vlfat", seed=0, epochs=2, out="run"):
    model = {
        "aggregator": mode,
        "image_size": 16,
        "patch_size": 8,
        "embed_dim": 8,
        "encoder_blocks": 1,
        "encoder_heads": 2,
        "agg_blocks": 1,
        "agg_heads": 2,
        "mlp_ratio": 2.0,
        "num_classes": 4,
    }
    if mode == "vlfat":
        model["schedule"] = [3, 4, 6]
    else:
        model["train_length"] = 4
    return {
        "seed": seed,
        "out_dir": str(tmp_path / out),
        "data": {"manifest": str(tmp_path / "data" / "manifest.json")},
        "model": model,
        "train": {"epochs": epochs, "batch_size": 8, "lr_max": 3e-3, "augment": False},
    }


@pytest.fixture()
def dataset(tmp_path):
    cfg = write_config(tmp_path / "gen.json", gen_config(tmp_path))
    assert main(["gen-data", "--config", cfg]) == 0
    return tmp_path


class TestGenData:
    def test_creates_manifest_and_volumes(self, dataset, capsys):
        manifest = dataset / "data" / "manifest.json"
        assert manifest.exists()
        doc = json.loads(manifest.read_text())
        assert len(doc["entries"]) == (4 + 2 + 2) * 4
        assert (dataset / "data" / "config.json").exists()

    def test_malformed_json_exits_2_with_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{\n "seed": 0,\n "oops"\n}')
        assert main(["gen-data", "--config", str(bad)]) == 2
        err = capsys.readouterr().err
        assert "line 4" in err  # the decoder flags the missing ':' on line 4

    def test_unknown_keys_exit_2(self, tmp_path, capsys):
        doc = gen_config(tmp_path)
        doc["data"]["mystery"] = 1
        cfg = write_config(tmp_path / "weird.json", doc)
        assert main(["gen-data", "--config", cfg]) == 2
        assert "mystery" in capsys.readouterr().err

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path / "gen.json", gen_config(tmp_path))
        assert main(["gen-data", "--config", cfg]) == 0
        first = {
            p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()
        }
        assert main(["gen-data", "--config", cfg]) == 0
        second = {
            p.name: p.read_bytes() for p in (tmp_path / "data").iterdir()
        }
        assert first == second


class TestTrain:
    def test_outputs_and_row_count(self, dataset, capsys):
        cfg = write_config(dataset / "train.json", train_config(dataset, epochs=3))
        assert main(["train", "--config", cfg]) == 0
        out = dataset / "run"
        with open(out / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 3 * 2  # epochs x (train, val)
        assert set(r["split"] for r in rows) == {"train", "val"}
        summary = json.loads((out / "summary.json").read_text())
        assert summary["best_epoch"] >= 1
        model, meta = load_checkpoint(out / "checkpoint.ckpt")
        assert meta["val_bacc"] == summary["val_bacc"]
        # selection invariant: checkpointed bacc is the max of emitted rows
        val_baccs = [float(r["bacc"]) for r in rows if r["split"] == "val"]
        assert meta["val_bacc"] == max(val_baccs)

    def test_vlfat_n_mean_varies_across_epochs(self, dataset):
        cfg = write_config(dataset / "train.json", train_config(dataset, epochs=6))
        assert main(["train", "--config", cfg]) == 0
        with open(dataset / "run" / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        n_means = {r["n_mean"] for r in rows if r["split"] == "train"}
        assert len(n_means) > 1

    def test_zero_lr_is_noop_run(self, dataset):
        doc = train_config(dataset, mode="maxpool", epochs=2, out="frozen")
        doc["train"]["lr_max"] = 0.0
        cfg = write_config(dataset / "frozen.json", doc)
        assert main(["train", "--config", cfg]) == 0
        with open(dataset / "frozen" / "metrics.csv") as f:
            rows = [r for r in csv.DictReader(f) if r["split"] == "val"]
        assert rows[0]["bacc"] == rows[1]["bacc"]

    def test_missing_model_section_exits_2(self, dataset, capsys):
        doc = train_config(dataset)
        del doc["model"]
        cfg = write_config(dataset / "nomodel.json", doc)
        assert main(["train", "--config", cfg]) == 2

    def test_nonfinite_loss_exits_3(self, dataset, capsys):
        from vlfat.autodiff import set_debug_checks
        from vlfat.data import Manifest

        manifest = Manifest.load(dataset / "data" / "manifest.json")
        entry = manifest.for_split("train")[0]
        poison = np.full(entry.n_slices * entry.height * entry.width, np.nan, dtype="<f4")
        (dataset / "data" / entry.file).write_bytes(poison.tobytes())
        cfg = write_config(dataset / "nan.json", train_config(dataset, out="nanrun"))
        set_debug_checks(False)  # let the loop's own loss guard catch it
        with np.errstate(invalid="ignore"):
            assert main(["train", "--config", cfg]) == 3
        assert "non-finite loss" in capsys.readouterr().err


class TestEvalAndRobustness:
    @pytest.fixture()
    def trained(self, dataset):
        cfg = write_config(dataset / "train.json", train_config(dataset, epochs=2))
        assert main(["train", "--config", cfg]) == 0
        return dataset

    def test_eval_report(self, trained, capsys):
        ckpt = str(trained / "run" / "checkpoint.ckpt")
        manifest = str(trained / "data" / "manifest.json")
        out = str(trained / "report.json")
        code = main(
            ["eval", "--checkpoint", ckpt, "--manifest", manifest,
             "--split", "test", "--n-slices", "4", "--out", out]
        )
        assert code == 0
        report = json.loads((trained / "report.json").read_text())
        printed = json.loads(capsys.readouterr().out)
        assert printed == report
        assert 0.0 <= report["bacc"] <= 1.0
        assert len(report["per_class_auroc"]) == 4
        assert report["n_slices"] == 4

    def test_eval_all_and_oversized_warns(self, trained, capsys):
        ckpt = str(trained / "run" / "checkpoint.ckpt")
        manifest = str(trained / "data" / "manifest.json")
        assert main(["eval", "--checkpoint", ckpt, "--manifest", manifest,
                     "--split", "val", "--n-slices", "all"]) == 0
        all_report = json.loads(capsys.readouterr().out)
        assert all_report["warnings"] == []
        assert main(["eval", "--checkpoint", ckpt, "--manifest", manifest,
                     "--split", "val", "--n-slices", "500"]) == 0
        capped = json.loads(capsys.readouterr().out)
        assert len(capped["warnings"]) == 8
        assert capped["bacc"] == all_report["bacc"]

    def test_eval_reproduces_training_time_val_metric(self, trained, capsys):
        ckpt = str(trained / "run" / "checkpoint.ckpt")
        manifest = str(trained / "data" / "manifest.json")
        assert main(["eval", "--checkpoint", ckpt, "--manifest", manifest,
                     "--split", "val", "--n-slices", "6"]) == 0
        report = json.loads(capsys.readouterr().out)
        with open(trained / "run" / "metrics.csv") as f:
            rows = [r for r in csv.DictReader(f) if r["split"] == "val"]
        best = max(float(r["bacc"]) for r in rows)
        assert report["bacc"] == best
        assert report["checkpoint_meta"]["val_bacc"] == best

    def test_robustness_csv(self, trained, capsys):
        ckpt = str(trained / "run" / "checkpoint.ckpt")
        manifest = str(trained / "data" / "manifest.json")
        out = str(trained / "rb.csv")
        code = main(["robustness", "--checkpoint", ckpt, "--manifest", manifest,
                     "--resolutions", "8,4,6", "--out", out])
        assert code == 0
        lines = (trained / "rb.csv").read_text().strip().splitlines()
        assert lines[0] == "resolution,bacc,auroc_macro"
        res = [int(line.split(",")[0]) for line in lines[1:]]
        assert res == [4, 6, 8]
        for line in lines[1:]:
            _, bacc, auroc = line.split(",")
            assert 0.0 <= float(bacc) <= 1.0 and 0.0 <= float(auroc) <= 1.0

    def test_robustness_on_pooled_mode_exits_4(self, dataset, capsys):
        cfg = write_config(
            dataset / "pool.json", train_config(dataset, mode="avgpool", out="pool")
        )
        assert main(["train", "--config", cfg]) == 0
        code = main(
            ["robustness",
             "--checkpoint", str(dataset / "pool" / "checkpoint.ckpt"),
             "--manifest", str(dataset / "data" / "manifest.json"),
             "--resolutions", "4,8"]
        )
        assert code == 4
        assert "PE-bearing" in capsys.readouterr().err

    def test_single_resolution_matches_eval(self, trained, capsys):
        ckpt = str(trained / "run" / "checkpoint.ckpt")
        manifest = str(trained / "data" / "manifest.json")
        assert main(["robustness", "--checkpoint", ckpt, "--manifest", manifest,
                     "--resolutions", "6", "--split", "test",
                     "--out", str(trained / "one.csv")]) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint", ckpt, "--manifest", manifest,
                     "--split", "test", "--n-slices", "6"]) == 0
        report = json.loads(capsys.readouterr().out)
        line = (trained / "one.csv").read_text().strip().splitlines()[1]
        _, bacc, auroc = line.split(",")
        assert float(bacc) == report["bacc"]
        assert float(auroc) == report["auroc_macro"]
