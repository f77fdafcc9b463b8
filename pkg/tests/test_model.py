import numpy as np
import pytest

from rjcma import checkpoint as ck
from rjcma import data as dat
from rjcma.fusion import FusionConfig
from rjcma.model import RjcmaModel


def make_window(d=4, k=16, seed=0):
    rng = np.random.default_rng(seed)
    return dat.Window(
        sequence_id="w", offset=0,
        features={m: rng.normal(size=(d, k)) for m in dat.MODALITIES},
        valence=np.clip(rng.normal(size=k), -1, 1),
        arousal=np.clip(rng.normal(size=k), -1, 1))


class TestCheckpointContainer:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {"a/b": rng.normal(size=(3, 4)), "c": rng.normal(size=(1, 1))}
        config = {"K": 16, "target": "valence"}
        path = tmp_path / "ck.bin"
        ck.write_checkpoint(path, config, tensors)
        cfg2, t2 = ck.read_checkpoint(path)
        assert cfg2 == config
        assert set(t2) == set(tensors)
        for name in tensors:
            np.testing.assert_array_equal(t2[name], np.atleast_2d(tensors[name]))

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "ck.bin"
        ck.write_checkpoint(path, {}, {})
        assert path.read_bytes()[:4] == b"RJCM"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ck.CheckpointError, match="bad magic"):
            ck.read_checkpoint(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "ck.bin"
        ck.write_checkpoint(path, {"x": 1}, {"w": np.ones((4, 4))})
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(ck.CheckpointError, match="truncated"):
            ck.read_checkpoint(path)

    def test_deterministic_bytes(self, tmp_path):
        tensors = {"b": np.ones((2, 2)), "a": np.zeros((1, 3))}
        p1, p2 = tmp_path / "1.bin", tmp_path / "2.bin"
        ck.write_checkpoint(p1, {"k": 1}, tensors)
        ck.write_checkpoint(p2, {"k": 1}, dict(reversed(tensors.items())))
        assert p1.read_bytes() == p2.read_bytes()


class TestModelPersistence:
    def test_save_load_preserves_predictions(self, tmp_path):
        cfg = FusionConfig(4, 4, 4, K=16, iterations=2)
        recs = dat.generate_synthetic(
            dat.SyntheticConfig(n_sequences=2, t_min=30, t_max=40,
                                d_a=4, d_v=4, d_t=4), seed=1)
        norm = dat.Normalizer().fit(recs)
        model = RjcmaModel(cfg, target="arousal", seed=3, normalizer=norm)
        win = make_window(seed=2)
        before = model.predict(win)
        path = tmp_path / "model.bin"
        model.save(path)
        clone = RjcmaModel.load(path)
        assert clone.target == "arousal"
        assert clone.config == cfg
        np.testing.assert_array_equal(clone.predict(win), before)

    def test_save_load_without_normalizer(self, tmp_path):
        cfg = FusionConfig(3, 3, 3, K=8)
        model = RjcmaModel(cfg, target="valence", seed=0)
        path = tmp_path / "m.bin"
        model.save(path)
        clone = RjcmaModel.load(path)
        assert clone.normalizer is None
        win = make_window(d=3, k=8, seed=5)
        np.testing.assert_array_equal(clone.predict(win), model.predict(win))

    def test_state_mismatch_rejected(self):
        model = RjcmaModel(FusionConfig(3, 3, 3, K=8), "valence", seed=0)
        state = model.state_arrays()
        state.pop("head/w1")
        with pytest.raises(ValueError, match="state mismatch"):
            model.load_state_arrays(state)

    def test_wrong_target_request_rejected(self):
        model = RjcmaModel(FusionConfig(3, 3, 3, K=8), "valence", seed=0)
        with pytest.raises(ValueError):
            model.predict(make_window(d=3, k=8), target="arousal")

    def test_predictions_bounded(self):
        model = RjcmaModel(FusionConfig(4, 4, 4, K=16), "valence", seed=1)
        preds = model.predict(make_window(seed=7))
        assert np.all(np.abs(preds) <= 1.0)
