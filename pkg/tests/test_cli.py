import csv
import os

import numpy as np
import pytest

from iterdec.cli import main
from iterdec.codec import QuantizerConfig, load_pgm, save_pgm
from iterdec.harness import run_training
from iterdec.model import load_checkpoint
from iterdec.numerics import SeededRng
from iterdec.pipeline import baseline_image, to_uint8
from iterdec.runconfig import ConfigError, build_config, load_config, parse_config_text


def write_images(directory, count=3, side=24, seed=1):
    from scipy.ndimage import gaussian_filter
    os.makedirs(directory, exist_ok=True)
    rng = SeededRng(seed)
    paths = []
    for i in range(count):
        img = gaussian_filter(rng.standard_normal((side, side)), 3.0)
        img = 128 + 60 * img / max(np.abs(img).max(), 1e-9)
        path = os.path.join(directory, f"img{i:02d}.pgm")
        save_pgm(path, np.clip(img, 0, 255).astype(np.uint8))
        paths.append(path)
    return paths


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("learning_rate=3")

    def test_parse_types(self):
        values = parse_config_text(
            "algorithm=sab\nn=32\nlr=1e-3\nmae_batch_normalized=true\n# comment\n")
        assert values == {"algorithm": "sab", "n": 32, "lr": 1e-3,
                          "mae_batch_normalized": True}

    def test_profiles(self):
        desk = build_config(profile="desk")
        assert desk.n == 16 and desk.batch == 32
        paper = build_config(profile="paper")
        assert paper.n == 512 and paper.batch == 256
        assert paper.lr == 2e-4 and paper.clip == 13.0 and paper.steps == 4

    def test_overrides_beat_file(self):
        cfg = build_config(profile="desk", file_values={"n": 8},
                           overrides={"n": 12})
        assert cfg.n == 12

    def test_manifest_reloadable(self, tmp_path):
        from iterdec.runconfig import write_manifest
        cfg = build_config(profile="desk", overrides={"algorithm": "uoro"})
        path = tmp_path / "manifest.txt"
        write_manifest(path, cfg, "2026-01-01T00:00:00", ["eval.10=1.0,2.0,3.0"])
        reloaded = build_config(profile="desk", file_values=load_config(path))
        assert reloaded == cfg


class TestExtract:
    def test_counts_and_determinism(self, tmp_path, capsys):
        img_dir = tmp_path / "imgs"
        write_images(img_dir, count=2, side=32)
        out1 = tmp_path / "a.nidc"
        out2 = tmp_path / "b.nidc"
        for out in (out1, out2):
            main(["extract", "--input-dir", str(img_dir), "--output", str(out),
                  "--seed", "9"])
        assert out1.read_bytes() == out2.read_bytes()
        manifest = (tmp_path / "a.nidc.manifest").read_text()
        assert "blocks=32" in manifest  # 2 images x 4x4 patch grid
        assert "images=2" in manifest

    def test_empty_dir_errors(self, tmp_path):
        os.makedirs(tmp_path / "empty", exist_ok=True)
        with pytest.raises(SystemExit, match="no input images"):
            main(["extract", "--input-dir", str(tmp_path / "empty"),
                  "--output", str(tmp_path / "x.nidc")])


def _train_args(tmp_path, out_name, extra=()):
    return ["train", "--dataset", str(tmp_path / "data.nidc"),
            "--out-dir", str(tmp_path / out_name), "--profile", "desk",
            "--n", "4", "--batch", "4", "--updates", "6", "--eval-every", "3",
            "--seed", "5"] + list(extra)


class TestTrain:
    @pytest.fixture()
    def dataset(self, tmp_path):
        img_dir = tmp_path / "imgs"
        write_images(img_dir, count=2, side=32)
        main(["extract", "--input-dir", str(img_dir),
              "--output", str(tmp_path / "data.nidc"), "--seed", "3"])
        return tmp_path

    def test_run_and_echo(self, dataset, capsys):
        main(_train_args(dataset, "run1"))
        out = capsys.readouterr().out
        assert "config:" in out and "n=4" in out and "clip=13.0" in out
        assert "lr=0.0002" in out
        ckpt = dataset / "run1" / "checkpoint.idck"
        params, cfg = load_checkpoint(ckpt)
        assert cfg.n == 4

    def test_log_structure(self, dataset):
        main(_train_args(dataset, "run2"))
        with open(dataset / "run2" / "log.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["update", "epoch", "lr", "loss",
                           "val_psnr", "val_ssim", "val_ms_ssim"]
        assert [r[0] for r in rows[1:]] == ["3", "6"]
        lrs = [float(r[2]) for r in rows[1:]]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))

    def test_byte_identical_reruns(self, dataset):
        main(_train_args(dataset, "runa"))
        main(_train_args(dataset, "runb"))
        a, b = dataset / "runa", dataset / "runb"
        assert (a / "log.csv").read_bytes() == (b / "log.csv").read_bytes()
        assert (a / "checkpoint.idck").read_bytes() == \
            (b / "checkpoint.idck").read_bytes()

    def test_algorithms_flag(self, dataset):
        main(_train_args(dataset, "run_uoro", ["--algorithm", "uoro",
                                               "--steps", "3"]))
        manifest = (dataset / "run_uoro" / "manifest.txt").read_text()
        assert "algorithm=uoro" in manifest and "steps=3" in manifest

    def test_manifest_reproduces_run(self, dataset):
        main(_train_args(dataset, "runm"))
        manifest = dataset / "runm" / "manifest.txt"
        main(["train", "--config", str(manifest), "--profile", "desk",
              "--out-dir", str(dataset / "runm2")])
        assert (dataset / "runm" / "log.csv").read_bytes() == \
            (dataset / "runm2" / "log.csv").read_bytes()
        assert (dataset / "runm" / "checkpoint.idck").read_bytes() == \
            (dataset / "runm2" / "checkpoint.idck").read_bytes()


class TestEvalCommands:
    @pytest.fixture()
    def trained(self, tmp_path):
        img_dir = tmp_path / "imgs"
        write_images(img_dir, count=2, side=32)
        main(["extract", "--input-dir", str(img_dir),
              "--output", str(tmp_path / "data.nidc"), "--seed", "3"])
        main(_train_args(tmp_path, "run"))
        return tmp_path

    def test_eval_csv(self, trained):
        out = trained / "eval.csv"
        main(["eval", "--checkpoint", str(trained / "run" / "checkpoint.idck"),
              "--images", str(trained / "imgs"), "--output", str(out)])
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:4] == ["image", "base_psnr", "base_ssim", "base_ms_ssim"]
        assert rows[-1][0] == "aggregate"
        per_image = rows[1:-1]
        assert len(per_image) == 2
        # aggregate is the arithmetic mean of per-image rows
        base_psnrs = [float(r[1]) for r in per_image]
        assert abs(float(rows[-1][1]) - np.mean(base_psnrs)) < 5e-4

    def test_eval_bad_image_gets_error_row(self, trained):
        # too small for the SSIM window: the row reports the error, the
        # other images still evaluate
        save_pgm(trained / "imgs" / "tiny.pgm",
                 np.full((8, 8), 100, dtype=np.uint8))
        out = trained / "eval_err.csv"
        main(["eval", "--checkpoint", str(trained / "run" / "checkpoint.idck"),
              "--images", str(trained / "imgs"), "--output", str(out)])
        with open(out) as fh:
            rows = {r[0]: r for r in csv.reader(fh)}
        assert rows["tiny.pgm"][1] == "error"
        assert "aggregate" in rows
        (trained / "imgs" / "tiny.pgm").unlink()

    def test_sweep_k_layout(self, trained):
        out = trained / "sweep.csv"
        main(["sweep-k", "--checkpoint",
              "bptt=" + str(trained / "run" / "checkpoint.idck"),
              "--images", str(trained / "imgs"), "--k-list", "1,3,5",
              "--output", str(out)])
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["algorithm", "K1", "K3", "K5"]
        assert rows[1][0] == "bptt" and len(rows[1]) == 4

    def test_mlp_sweep_constant_in_k(self, trained):
        main(_train_args(trained, "run_mlp", ["--cell", "mlp"]))
        out = trained / "sweep_mlp.csv"
        main(["sweep-k", "--checkpoint",
              str(trained / "run_mlp" / "checkpoint.idck"),
              "--images", str(trained / "imgs"), "--k-list", "1,3,5",
              "--output", str(out)])
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[1][1] == rows[1][2] == rows[1][3]

    def test_reconstruct(self, trained, capsys):
        src = next((trained / "imgs").glob("*.pgm"))
        out = trained / "recon.pgm"
        main(["reconstruct", "--checkpoint",
              str(trained / "run" / "checkpoint.idck"),
              "--image", str(src), "--output", str(out), "--steps", "4"])
        printed = capsys.readouterr().out
        assert printed.count("K=") == 4
        recon = load_pgm(out)
        assert recon.shape == load_pgm(src).shape

    def test_reconstruct_baseline_identity(self, trained):
        src = next((trained / "imgs").glob("*.pgm"))
        out = trained / "base.pgm"
        main(["reconstruct", "--checkpoint",
              str(trained / "run" / "checkpoint.idck"),
              "--image", str(src), "--output", str(out), "--baseline"])
        direct = to_uint8(baseline_image(load_pgm(src), QuantizerConfig(), 8))
        np.testing.assert_array_equal(load_pgm(out), direct)


def test_compare_merges_algorithms(tmp_path):
    img_dir = tmp_path / "imgs"
    write_images(img_dir, count=2, side=32)
    main(["extract", "--input-dir", str(img_dir),
          "--output", str(tmp_path / "data.nidc"), "--seed", "3"])
    main(["compare", "--dataset", str(tmp_path / "data.nidc"),
          "--out-dir", str(tmp_path / "cmp"), "--profile", "desk",
          "--n", "4", "--batch", "4", "--updates", "4", "--eval-every", "4",
          "--algorithms", "bptt,sab", "--seeds", "1,2",
          "--eval-images", str(img_dir)])
    with open(tmp_path / "cmp" / "compare.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["algorithm", "seed", "status", "loss"]
    assert [(r[0], r[1]) for r in rows[1:]] == [
        ("bptt", "1"), ("bptt", "2"), ("sab", "1"), ("sab", "2")]
    assert all(r[2] == "ok" for r in rows[1:])


def test_train_eval_rows_with_validation_images(tmp_path):
    img_dir = tmp_path / "imgs"
    write_images(img_dir, count=2, side=32)
    main(["extract", "--input-dir", str(img_dir),
          "--output", str(tmp_path / "data.nidc"), "--seed", "3"])
    main(_train_args(tmp_path, "runv", ["--eval-images", str(img_dir)]))
    with open(tmp_path / "runv" / "log.csv") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:
        assert row[4] != "" and row[5] != "" and row[6] != ""
    manifest = (tmp_path / "runv" / "manifest.txt").read_text()
    assert "eval.3=" in manifest and "eval.6=" in manifest


def test_divergence_aborts_with_checkpoint(tmp_path):
    img_dir = tmp_path / "imgs"
    write_images(img_dir, count=1, side=24)
    main(["extract", "--input-dir", str(img_dir),
          "--output", str(tmp_path / "d.nidc"), "--seed", "1"])
    # an absurd learning rate reliably blows the parameters up
    from iterdec.codec import DatasetFile
    from iterdec.runconfig import build_config
    run_cfg = build_config(profile="desk", overrides={
        "dataset": str(tmp_path / "d.nidc"), "n": 4, "batch": 4,
        "updates": 200, "lr": 1e9, "clip": 1e300, "eval_every": 200,
        "seed": 2})
    result = run_training(run_cfg, str(tmp_path / "diverged"))
    assert result["status"] == "diverged"
    assert os.path.exists(result["checkpoint"])
    assert "status=diverged" in open(result["manifest"]).read()
