import dataclasses
import re

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from iscfseg import desk_config, forward, init_params
from iscfseg.checkpoint import MAGIC, Checkpoint, CheckpointError, from_bytes, load, save, to_bytes
from iscfseg.config import ConfigError
from iscfseg.data import synth_generate
from iscfseg.layers import named_parameters
from iscfseg.training import DivergenceError, evaluate, evaluate_params, train


def _same_params(a, b):
    pa, pb = dict(named_parameters(a)), dict(named_parameters(b))
    return pa.keys() == pb.keys() and all(pa[k].data.tobytes() == pb[k].data.tobytes() for k in pa)


@pytest.fixture(scope="module")
def overfit():
    data = synth_generate(8, 64, 1)
    with threadpool_limits(1):
        result = train(desk_config(), data, max_steps=200)
    return data, result


@pytest.mark.slow
class TestOverfit:
    def test_train_dsc(self, overfit):
        data, result = overfit
        assert len(result.step_losses) == 200
        assert evaluate(result.last, data).mean_dsc >= 0.95

    def test_loss_windows_non_increasing(self, overfit):
        losses = np.array(overfit[1].step_losses)
        windows = [losses[i : i + 20].mean() for i in range(50, 200, 20)]
        for prev, cur in zip(windows, windows[1:]):
            assert cur <= prev * 1.05

    def test_best_not_worse_than_last(self, overfit):
        data, result = overfit
        last_dsc = evaluate(result.last, data).mean_dsc
        assert result.best.best_val_dsc >= last_dsc
        assert result.last.best_val_dsc == result.best.best_val_dsc

    def test_evaluate_twice_identical(self, overfit):
        data, result = overfit
        assert evaluate(result.best, data).to_dict() == evaluate(result.best, data).to_dict()


class TestTrain:
    def test_zero_epochs_returns_init(self):
        cfg = desk_config(epochs=0)
        result = train(cfg, synth_generate(2, 64, 0))
        assert result.best.epoch == 0 and result.epoch_log == []
        assert _same_params(result.best.params, init_params(cfg))

    def test_deterministic(self):
        data = synth_generate(4, 64, 2)
        cfg = desk_config(batch_size=2)
        with threadpool_limits(1):
            a = train(cfg, data, max_steps=4)
            b = train(cfg, data, max_steps=4)
        assert a.step_losses == b.step_losses
        assert _same_params(a.last.params, b.last.params)

    def test_parameters_move(self):
        cfg = desk_config(batch_size=2)
        result = train(cfg, synth_generate(2, 64, 0), max_steps=1)
        assert not _same_params(result.last.params, init_params(cfg))

    def test_log_format(self, tmp_path):
        log = tmp_path / "train.log"
        train(desk_config(batch_size=2, epochs=2), synth_generate(2, 64, 0), log_path=log)
        lines = log.read_text().splitlines()
        assert len(lines) == 2
        for i, line in enumerate(lines, start=1):
            assert re.fullmatch(rf"{i},\d+\.\d{{8}},\d+\.\d{{8}}", line)

    def test_divergence_names_step(self):
        data = synth_generate(2, 64, 0)
        data[1].image[:] = np.nan
        with pytest.raises(DivergenceError, match="step 1"):
            train(desk_config(batch_size=2), data, val_set=synth_generate(1, 64, 5), max_steps=3)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_after_update(self):
        with pytest.raises(DivergenceError, match="step 1"):
            train(desk_config(lr=1e30, batch_size=2), synth_generate(2, 64, 0), max_steps=5)

    def test_empty_train(self):
        with pytest.raises(ValueError):
            train(desk_config(), [])

    def test_geometry_mismatch(self):
        with pytest.raises(ConfigError):
            train(desk_config(), synth_generate(1, 32, 0))
        with pytest.raises(ConfigError):
            evaluate_params(init_params(desk_config()), desk_config(), synth_generate(1, 32, 0))


class TestCheckpoint:
    def _ckpt(self):
        cfg = desk_config(seed=4)
        return Checkpoint(cfg, init_params(cfg), split_seed=9, epoch=3, best_val_dsc=0.5, run={"threshold": 0.5})

    def test_round_trip_bitwise(self, tmp_path, rng):
        ck = self._ckpt()
        save(ck, tmp_path / "a.ckpt")
        back = load(tmp_path / "a.ckpt")
        assert _same_params(ck.params, back.params)
        assert (back.split_seed, back.epoch, back.best_val_dsc, back.run) == (9, 3, 0.5, {"threshold": 0.5})
        assert back.config == ck.config
        img = rng.random((2, 3, 64, 64)).astype(np.float32)
        assert forward(img, ck.config, ck.params)[0].data.tobytes() == forward(img, back.config, back.params)[0].data.tobytes()

    def test_bytes_stable(self):
        assert to_bytes(self._ckpt()) == to_bytes(self._ckpt())

    def test_header_layout(self):
        import json
        import struct

        buf = to_bytes(self._ckpt())
        assert buf.startswith(MAGIC)
        (n,) = struct.unpack_from("<Q", buf, 8)
        header = json.loads(buf[16 : 16 + n])
        first = header["tensors"][0]
        assert first["dtype"] == "<f4" and first["offset"] == 0
        assert header["split_seed"] == 9
        total = sum(4 * int(np.prod(e["shape"])) for e in header["tensors"])
        assert len(buf) == 16 + n + total

    def test_bad_magic(self):
        with pytest.raises(CheckpointError):
            from_bytes(b"NOTACKPT" + bytes(16))

    def test_truncated(self):
        buf = to_bytes(self._ckpt())
        with pytest.raises(CheckpointError):
            from_bytes(buf[:-4])
        with pytest.raises(CheckpointError):
            from_bytes(buf[:12])

    def test_copy_is_independent(self):
        ck = self._ckpt()
        cp = ck.copy()
        ck.params.decoder.head.out.weight.data[:] = 7
        assert not np.all(cp.params.decoder.head.out.weight.data == 7)

    def test_iscf_off_round_trip(self):
        cfg = dataclasses.replace(desk_config(), iscf_enabled=False)
        ck = Checkpoint(cfg, init_params(cfg))
        back = from_bytes(to_bytes(ck))
        assert back.params.iscf is None and np.isnan(back.best_val_dsc)
