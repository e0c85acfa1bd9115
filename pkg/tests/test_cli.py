import json

import numpy as np
import pytest
from PIL import Image

from iscfseg import desk_config, init_params
from iscfseg.checkpoint import Checkpoint, save
from iscfseg.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_GRADCHECK, EXIT_OK, main


def _run_config(path, **kw):
    d = desk_config().to_dict()
    d.update(epochs=2, batch_size=4)
    d.update(kw)
    path.write_text(json.dumps(d))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["synth-data", "--out-dir", str(data), "--n", "12", "--size", "64", "--seed", "1"]) == EXIT_OK
    cfg = _run_config(root / "run.json", data_dir=str(data), out_dir=str(root / "run"))
    assert main(["train", "--config", str(cfg)]) == EXIT_OK
    return root


class TestTrain:
    def test_artifacts(self, trained):
        run = trained / "run"
        for name in ("best.ckpt", "last.ckpt", "train.log", "config.json"):
            assert (run / name).is_file(), name
        echoed = json.loads((run / "config.json").read_text())
        assert echoed["threshold"] == 0.5 and echoed["split_seed"] == 0

    def test_rerun_identical(self, trained, tmp_path):
        cfg = _run_config(tmp_path / "run.json", data_dir=str(trained / "data"), out_dir=str(tmp_path / "again"))
        assert main(["train", "--config", str(cfg)]) == EXIT_OK
        run = trained / "run"
        assert (tmp_path / "again" / "train.log").read_bytes() == (run / "train.log").read_bytes()
        assert (tmp_path / "again" / "best.ckpt").read_bytes() == (run / "best.ckpt").read_bytes()

    def test_unknown_key(self, tmp_path, capsys):
        cfg = _run_config(tmp_path / "bad.json", learning_rate=0.1)
        assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG
        assert "learning_rate" in capsys.readouterr().err

    def test_invalid_value(self, tmp_path):
        cfg = _run_config(tmp_path / "bad.json", stage_channels=[16, 30, 64])
        assert main(["train", "--config", str(cfg)]) == EXIT_CONFIG

    def test_missing_data(self, tmp_path):
        cfg = _run_config(tmp_path / "run.json", data_dir=str(tmp_path / "nowhere"), out_dir=str(tmp_path / "o"))
        assert main(["train", "--config", str(cfg)]) == EXIT_DATA

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, trained, tmp_path):
        cfg = _run_config(tmp_path / "run.json", data_dir=str(trained / "data"), out_dir=str(tmp_path / "o"), lr=1e30)
        assert main(["train", "--config", str(cfg)]) == EXIT_DIVERGED

    def test_missing_config_file(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.json")]) == EXIT_CONFIG


class TestEval:
    def _mean_line(self, out):
        vals = out.strip().splitlines()[-1].split()
        return dict(zip(vals[::2], map(float, vals[1::2])))

    def test_metrics_match_stdout(self, trained, capsys):
        ckpt = trained / "run" / "best.ckpt"
        capsys.readouterr()
        assert main(["eval", "--ckpt", str(ckpt), "--split", "val"]) == EXIT_OK
        printed = self._mean_line(capsys.readouterr().out)
        doc = json.loads((trained / "run" / "eval-val" / "metrics.json").read_text())
        assert list(printed) == ["DSC", "SE", "SP", "ACC"]
        for key, name in zip(printed, ("mean_dsc", "mean_se", "mean_sp", "mean_acc")):
            assert printed[key] == pytest.approx(doc[name], abs=5e-5)

    def test_val_and_test_differ(self, trained):
        ckpt = str(trained / "run" / "best.ckpt")
        assert main(["eval", "--ckpt", ckpt, "--split", "val"]) == EXIT_OK
        assert main(["eval", "--ckpt", ckpt, "--split", "test"]) == EXIT_OK
        val = json.loads((trained / "run" / "eval-val" / "metrics.json").read_text())
        test = json.loads((trained / "run" / "eval-test" / "metrics.json").read_text())
        assert {r["id"] for r in val["per_image"]}.isdisjoint(r["id"] for r in test["per_image"])

    def test_idempotent(self, trained, tmp_path):
        ckpt = str(trained / "run" / "best.ckpt")
        for d in ("a", "b"):
            assert main(["eval", "--ckpt", ckpt, "--split", "train", "--out-dir", str(tmp_path / d)]) == EXIT_OK
        assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()

    def test_missing_checkpoint(self, tmp_path):
        assert main(["eval", "--ckpt", str(tmp_path / "none.ckpt")]) == EXIT_DATA

    def test_bad_split_name(self, trained):
        assert main(["eval", "--ckpt", str(trained / "run" / "best.ckpt"), "--split", "holdout"]) == EXIT_CONFIG


def _biased_checkpoint(path, bias):
    cfg = desk_config()
    params = init_params(cfg)
    params.decoder.head.out.weight.data[:] = 0
    params.decoder.head.out.bias.data[:] = bias
    save(Checkpoint(cfg, params), path)
    return path


def _colours(path):
    return {tuple(c) for c in np.asarray(Image.open(path).convert("RGB")).reshape(-1, 3).tolist()}


class TestPredict:
    def _sample(self, trained):
        return trained / "data" / "images" / "synth_0000.png", trained / "data" / "masks" / "synth_0000_segmentation.png"

    def test_green_and_blue(self, trained, tmp_path):
        ckpt = _biased_checkpoint(tmp_path / "pos.ckpt", 10.0)
        img, mask = self._sample(trained)
        out = tmp_path / "overlay.png"
        assert main(["predict", "--ckpt", str(ckpt), "--image", str(img), "--mask", str(mask), "--out", str(out)]) == 0
        colours = _colours(out)
        assert (0, 255, 0) in colours and (0, 0, 255) in colours

    def test_background_prediction_has_no_blue(self, trained, tmp_path):
        ckpt = _biased_checkpoint(tmp_path / "neg.ckpt", -10.0)
        img, _ = self._sample(trained)
        out = tmp_path / "overlay.png"
        assert main(["predict", "--ckpt", str(ckpt), "--image", str(img), "--out", str(out)]) == EXIT_OK
        assert (0, 0, 255) not in _colours(out)
        assert not np.asarray(Image.open(tmp_path / "overlay_mask.png")).any()

    def test_mask_png_bilevel(self, trained, tmp_path):
        img, _ = self._sample(trained)
        out = tmp_path / "p.png"
        assert main(["predict", "--ckpt", str(trained / "run" / "best.ckpt"), "--image", str(img), "--out", str(out)]) == 0
        assert set(np.unique(np.asarray(Image.open(tmp_path / "p_mask.png")))) <= {0, 255}

    def test_undecodable(self, trained, tmp_path):
        bad = tmp_path / "bad.jpg"
        bad.write_bytes(b"garbage")
        ckpt = str(trained / "run" / "best.ckpt")
        assert main(["predict", "--ckpt", ckpt, "--image", str(bad), "--out", str(tmp_path / "o.png")]) == EXIT_DATA


class TestSynth:
    def test_bitwise_reproducible(self, tmp_path):
        for d in ("a", "b"):
            assert main(["synth-data", "--out-dir", str(tmp_path / d), "--n", "2", "--size", "32"]) == EXIT_OK
        for sub in ("images/synth_0001.png", "masks/synth_0001_segmentation.png"):
            assert (tmp_path / "a" / sub).read_bytes() == (tmp_path / "b" / sub).read_bytes()


class TestBench:
    def test_csv_rows(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        assert main(["bench-attention", "--tokens", "64,128,256", "--dim", "8", "--repeats", "3", "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "N,median_efficient_s,median_dense_s"
        assert [int(line.split(",")[0]) for line in lines[1:]] == [64, 128, 256]
        assert "growth 64->128" in capsys.readouterr().out

    def test_too_few_tokens(self):
        assert main(["bench-attention", "--tokens", "32"]) == EXIT_CONFIG


class TestGradcheck:
    def test_scope_filter(self, capsys):
        assert main(["gradcheck", "--scope", "efficient_attention", "--seeds", "2"]) == EXIT_OK
        lines = [line for line in capsys.readouterr().out.splitlines() if line.strip()]
        assert len(lines) == 1 and lines[0].startswith("efficient_attention")

    def test_corrupted_gradient(self, monkeypatch, capsys):
        from iscfseg.numerics import ops

        monkeypatch.setattr(ops, "_gelu_grad", lambda x: np.ones_like(x))
        assert main(["gradcheck", "--scope", "gelu", "--seeds", "2"]) == EXIT_GRADCHECK
        assert "gelu" in capsys.readouterr().out.splitlines()[-1]

    def test_unknown_scope(self):
        assert main(["gradcheck", "--scope", "nonsense"]) == EXIT_CONFIG


class TestParams:
    def test_default_report(self, capsys):
        assert main(["params"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "reference with_iscf: 23.43M" in out and "reference without_iscf: 22.31M" in out
        diff_line = next(line for line in out.splitlines() if line.startswith("difference"))
        diff, closed = (int(x.replace(",", "").rstrip(";")) for x in diff_line.split()[1::4][:2])
        assert diff == closed

    def test_with_config(self, tmp_path, capsys):
        assert main(["params", "--config", str(_run_config(tmp_path / "c.json"))]) == EXIT_OK
        assert "reference" not in capsys.readouterr().out


def test_no_command():
    assert main([]) == EXIT_CONFIG
