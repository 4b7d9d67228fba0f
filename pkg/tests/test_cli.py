"""End-to-end CLI tests on a miniature experiment configuration."""

import hashlib
import os

import numpy as np
import pytest

from petlab import cli
from petlab.config import load_config, parse_config_text
from petlab.csvio import METRICS_HEADER, STUDY_HEADER, read_rows
from petlab.errors import ConfigError
from petlab.report import dump_image_panel, read_pgm

TINY_CFG = """
seed = 99
subjects = 2
volume_depth = 8
volume_size = 32
lesions = 1
n_angles = 30
n_bins = 36
total_counts = 2e5
dose_fractions = 0.02
recon_subsets = 3
recon_iterations = 2
n_p = 2
n_c = 1
base_channels = 8
n_slices = 3
epochs = 1
batch_size = 4
loss = l1
data_dir = {data_dir}
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "dataset"
    cfg_path = root / "tiny.cfg"
    cfg_path.write_text(TINY_CFG.format(data_dir=data_dir))
    assert cli.main(["simulate", "--config", str(cfg_path)]) == 0
    return {"root": root, "cfg": str(cfg_path), "data": str(data_dir)}


class TestConfigParsing:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key 'volume_hight'"):
            parse_config_text("volume_hight = 64\n")

    def test_dose_above_one_names_key(self):
        with pytest.raises(ConfigError, match="dose_fractions"):
            parse_config_text("dose_fractions = 1.5\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate key"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_bad_value_mentions_key(self):
        with pytest.raises(ConfigError, match="epochs"):
            parse_config_text("epochs = soon\n")

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("# comment\n\nseed = 5  # trailing\n")
        assert cfg.seed == 5

    def test_desk_preset_parses(self):
        cfg = load_config(os.path.join(os.path.dirname(__file__), "..",
                                       "configs", "desk.cfg"))
        assert cfg.subjects == 9
        assert cfg.dose_fractions == (0.005,)
        assert cfg.n_p == 3 and cfg.n_c == 2 and cfg.n_slices == 3
        assert cfg.epochs == 30 and cfg.loss == "l1"


class TestSimulate:
    def test_dataset_tree_written(self, workspace):
        data = workspace["data"]
        assert os.path.exists(os.path.join(data, "manifest.json"))
        assert os.path.exists(os.path.join(data, "baseline.csv"))
        assert os.path.exists(os.path.join(data, "volumes", "s00_drf1.tsr"))
        assert os.path.exists(os.path.join(data, "volumes", "s00_drf50.tsr"))

    def test_refuses_existing_output_without_force(self, workspace, capsys):
        rc = cli.main(["simulate", "--config", workspace["cfg"]])
        assert rc == 1
        assert "--force" in capsys.readouterr().err

    def test_rerun_produces_bit_identical_manifest(self, workspace, tmp_path):
        out = tmp_path / "again"
        assert cli.main(["simulate", "--config", workspace["cfg"],
                         "--out", str(out)]) == 0
        h1 = hashlib.sha256(open(os.path.join(workspace["data"], "manifest.json"), "rb")
                            .read()).hexdigest()
        h2 = hashlib.sha256(open(out / "manifest.json", "rb").read()).hexdigest()
        assert h1 == h2

    def test_multi_dose_volume_count(self, tmp_path):
        cfg_path = tmp_path / "multi.cfg"
        cfg_path.write_text(TINY_CFG.format(data_dir=tmp_path / "d") +
                            "\ndose_fractions = 0.05 0.25\ntrain_dose = 0.05\n"
                            .replace("dose_fractions = 0.02\n", ""))
        # duplicate key guard: rewrite the file without the original dose line
        text = "\n".join(l for l in cfg_path.read_text().splitlines()
                         if not l.startswith("dose_fractions = 0.02"))
        cfg_path.write_text(text)
        assert cli.main(["simulate", "--config", str(cfg_path)]) == 0
        import json

        manifest = json.load(open(tmp_path / "d" / "manifest.json"))
        n_vol = sum(1 for s in manifest["subjects"] for k in s["files"]
                    if k.startswith("drf"))
        assert n_vol == 2 * (1 + 2)


class TestTrainEvaluate:
    @pytest.fixture(scope="class")
    def trained(self, workspace, tmp_path_factory):
        out = tmp_path_factory.mktemp("train-out")
        rc = cli.main(["train", "--config", workspace["cfg"],
                       "--dataset", workspace["data"],
                       "--out", str(out), "--fold", "0"])
        assert rc == 0
        return out

    def test_outputs_exist(self, trained):
        fold = trained / "fold0"
        assert (fold / "final" / "manifest.json").exists()
        assert (fold / "history.csv").exists()
        assert (fold / "metrics.csv").exists()

    def test_metrics_csv_schema_and_aggregates(self, trained):
        rows = read_rows(trained / "fold0" / "metrics.csv", METRICS_HEADER)
        with open(trained / "fold0" / "metrics.csv") as f:
            assert f.readline().rstrip("\n") == "subject,slice,method,drf,nrmse,psnr_db,ssim"
        slice_rows = [r for r in rows if r["slice"] != "mean"]
        mean_rows = [r for r in rows if r["slice"] == "mean"]
        assert slice_rows and mean_rows
        for mr in mean_rows:
            group = [r for r in slice_rows
                     if r["subject"] == mr["subject"] and r["method"] == mr["method"]]
            for col in ("nrmse", "psnr_db", "ssim"):
                mean = float(np.mean([float(r[col]) for r in group]))
                assert abs(mean - float(mr[col])) < 1e-9

    def test_evaluate_writes_csv(self, workspace, trained, tmp_path):
        out_csv = tmp_path / "eval.csv"
        rc = cli.main(["evaluate", "--checkpoint", str(trained / "fold0" / "final"),
                       "--dataset", workspace["data"], "--out", str(out_csv)])
        assert rc == 0
        rows = read_rows(out_csv, METRICS_HEADER)
        methods = {r["method"] for r in rows}
        assert methods == {"low-dose", "proposed"}

    def test_fold_out_of_range(self, workspace, tmp_path):
        rc = cli.main(["train", "--config", workspace["cfg"],
                       "--dataset", workspace["data"],
                       "--out", str(tmp_path), "--fold", "7"])
        assert rc == 1

    def test_missing_dataset_names_path(self, workspace, tmp_path, capsys):
        rc = cli.main(["train", "--config", workspace["cfg"],
                       "--dataset", str(tmp_path / "nowhere"),
                       "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "nowhere" in capsys.readouterr().err


class TestAblate:
    def test_skip_study_emits_four_variants(self, workspace, tmp_path):
        rc = cli.main(["ablate", "--study", "skip", "--config", workspace["cfg"],
                       "--dataset", workspace["data"], "--out", str(tmp_path),
                       "--fold", "0"])
        assert rc == 0
        rows = read_rows(tmp_path / "skip.csv", STUDY_HEADER)
        assert [r["variant"] for r in rows] == ["both", "concat_only",
                                                "residual_only", "none"]
        assert all(r["status"] == "ok" for r in rows)

    def test_depth_study_records_infeasible_variants(self, workspace, tmp_path):
        rc = cli.main(["ablate", "--study", "depth", "--config", workspace["cfg"],
                       "--dataset", workspace["data"], "--out", str(tmp_path),
                       "--fold", "0"])
        assert rc == 0
        rows = read_rows(tmp_path / "depth.csv", STUDY_HEADER)
        assert len(rows) == 12
        skipped = [r for r in rows if r["status"] == "skipped"]
        # on 32x32 images, n_p in {4, 5} leaves a bottleneck below 4x4
        assert {r["variant"] for r in skipped} == {
            "np4_nc1", "np4_nc2", "np4_nc3", "np5_nc1", "np5_nc2", "np5_nc3"}
        assert all(r["note"] for r in skipped)
        assert all(r["status"] == "ok" for r in rows if r not in skipped)

    def test_loss_study_msssim_infeasible_at_32(self, workspace, tmp_path):
        rc = cli.main(["ablate", "--study", "loss", "--config", workspace["cfg"],
                       "--dataset", workspace["data"], "--out", str(tmp_path),
                       "--fold", "1"])
        assert rc == 0
        rows = read_rows(tmp_path / "loss.csv", STUDY_HEADER)
        assert [r["variant"] for r in rows] == ["l1", "mse", "ssim", "msssim"]
        assert rows[3]["status"] == "skipped" and "11x11" in rows[3]["note"]

    def test_ablate_deterministic_per_seed(self, workspace, tmp_path):
        for sub in ("a", "b"):
            rc = cli.main(["ablate", "--study", "skip", "--config", workspace["cfg"],
                           "--dataset", workspace["data"],
                           "--out", str(tmp_path / sub), "--fold", "0"])
            assert rc == 0
        assert (tmp_path / "a" / "skip.csv").read_bytes() == \
            (tmp_path / "b" / "skip.csv").read_bytes()


class TestReport:
    def test_aggregates_and_panel(self, workspace, tmp_path):
        study_dir = tmp_path / "study"
        assert cli.main(["ablate", "--study", "skip", "--config", workspace["cfg"],
                         "--dataset", workspace["data"], "--out", str(study_dir),
                         "--fold", "0"]) == 0
        train_dir = tmp_path / "train"
        assert cli.main(["train", "--config", workspace["cfg"],
                         "--dataset", workspace["data"], "--out", str(train_dir),
                         "--fold", "0"]) == 0
        out = tmp_path / "report"
        rc = cli.main(["report", "--study-csv", str(study_dir / "skip.csv"),
                       "--out", str(out), "--dataset", workspace["data"],
                       "--checkpoint", str(train_dir / "fold0" / "final")])
        assert rc == 0
        agg = read_rows(out / "aggregates.csv",
                        ("study", "variant", "n",
                         "nrmse_mean", "nrmse_std", "nrmse_min", "nrmse_max",
                         "psnr_mean", "psnr_std", "psnr_min", "psnr_max",
                         "ssim_mean", "ssim_std", "ssim_min", "ssim_max"))
        assert len(agg) == 4
        panels = list(out.glob("*/*.pgm"))
        assert len(panels) == 4

    def test_empty_csv_rejected(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text(",".join(STUDY_HEADER) + "\n")
        rc = cli.main(["report", "--study-csv", str(empty), "--out", str(tmp_path)])
        assert rc == 2

    def test_error_map_of_identical_images_is_zero(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((16, 16))
        paths = dump_image_panel(tmp_path, reference=img, low_dose=img, prediction=img)
        emap = read_pgm(paths["error_map"])
        assert np.all(emap == 0)

    def test_error_map_argmax_matches_recomputation(self, tmp_path):
        rng = np.random.default_rng(1)
        ref = rng.random((24, 24))
        pred = ref + 0.2 * rng.standard_normal((24, 24))
        paths = dump_image_panel(tmp_path, reference=ref, low_dose=ref, prediction=pred)
        emap = read_pgm(paths["error_map"]).astype(np.float64)
        err = np.abs(pred - ref)
        got = np.unravel_index(int(emap.argmax()), emap.shape)
        assert err[got] >= (1.0 - 1e-4) * err.max()

    def test_pgm_round_trip_values(self, tmp_path):
        from petlab.report import write_pgm

        img = np.array([[0.0, 0.5], [0.25, 1.0]])
        path = tmp_path / "x.pgm"
        write_pgm(path, img)
        back = read_pgm(path)
        np.testing.assert_array_equal(back, [[0, 32768], [16384, 65535]])


def test_jobs_respects_thread_cap(monkeypatch):
    monkeypatch.setenv("PETLAB_THREADS", "2")
    assert cli.resolve_jobs(8) == 2
    assert cli.resolve_jobs(None) == 1
    monkeypatch.delenv("PETLAB_THREADS")
    assert cli.resolve_jobs(3) == 3
