import numpy as np
import pytest

from captor import trainer
from captor.encoder import FeatureGrid
from captor.fixture import make_fixture
from captor.text import CaptionRecord
from captor.trainer import (AdamState, CheckpointError, CheckpointVersionError,
                            TrainConfig, adam_update, clip_gradients, fit,
                            load_checkpoint, load_config_file, save_checkpoint)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.0, -2.0])}
        st = AdamState()
        adam_update(params, {"w": np.zeros(2)}, st)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])
        assert st.step == 1

    def test_first_step_is_lr_times_sign(self):
        for c in (3.0, -0.25, 1e-4):
            params = {"w": np.array([0.0])}
            st = AdamState(lr=1e-3)
            adam_update(params, {"w": np.array([c])}, st)
            # bias correction makes m_hat/sqrt(v_hat) = sign(c) up to the eps term
            assert abs(params["w"][0] + 1e-3 * np.sign(c)) < 1e-3 * 1e-3

    def test_matches_scalar_reference_on_quadratic(self):
        # minimize f(x) = 0.5*(x-3)^2 via an independently coded scalar Adam
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        x_ref, m, v = 10.0, 0.0, 0.0
        params = {"x": np.array([10.0])}
        st = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps)
        for t in range(1, 101):
            g = x_ref - 3.0
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            x_ref -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
            adam_update(params, {"x": params["x"] - 3.0}, st)
        assert abs(params["x"][0] - x_ref) < 1e-12

    def test_non_finite_gradient_aborts_with_name(self):
        with pytest.raises(trainer.NumericError, match="head.w"):
            adam_update({"head.w": np.zeros(2)},
                        {"head.w": np.array([1.0, np.nan])}, AdamState())


class TestClip:
    def test_norm_reduced_to_threshold(self):
        grads = {"a": np.array([3.0, 4.0])}  # norm 5
        clip_gradients(grads, 1.0)
        assert np.linalg.norm(grads["a"]) <= 1.0 + 1e-12

    def test_small_gradients_untouched(self):
        grads = {"a": np.array([0.3, 0.4])}
        clip_gradients(grads, 5.0)
        np.testing.assert_array_equal(grads["a"], [0.3, 0.4])

    def test_global_norm_across_tensors(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        norm = clip_gradients(grads, 2.5)
        assert abs(norm - 5.0) < 1e-12
        total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        assert total <= 2.5 + 1e-12


def tiny_dataset(n=2, seed=0):
    grids, lines = make_fixture(n, seed, locations=4, channels=6)
    records = []
    for line in lines:
        image_id, caption = line.split("\t")
        records.append(CaptionRecord(image_id, caption,
                                     tuple(caption.lower().split())))
    return {g.image_id: g for g in grids}, records


class TestTrainLoop:
    def test_zero_lr_constant_history(self):
        grids, records = tiny_dataset()
        cfg = TrainConfig(epochs=5, batch_size=2, lr=1e-30, seed=1)
        trained = fit(grids, records, cfg)
        spread = max(trained.loss_history) - min(trained.loss_history)
        assert spread < 1e-12

    def test_same_seed_bit_identical(self):
        grids, records = tiny_dataset()
        cfg = TrainConfig(epochs=10, batch_size=2, seed=7)
        a = fit(grids, records, cfg)
        b = fit(grids, records, TrainConfig(epochs=10, batch_size=2, seed=7))
        assert a.loss_history == b.loss_history
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_single_pair_overfits_in_300_steps(self):
        grids, records = tiny_dataset(n=1)
        cfg = TrainConfig(epochs=300, batch_size=1, lr=1e-3, seed=0)
        trained = fit(grids, records, cfg)
        assert trained.loss_history[-1] < 0.01

    def test_parameters_stay_finite(self):
        grids, records = tiny_dataset()
        trained = fit(grids, records, TrainConfig(epochs=20, seed=3))
        for arr in trained.params.values():
            assert np.all(np.isfinite(arr))

    def test_missing_grid_rejected(self):
        grids, records = tiny_dataset()
        del grids[records[0].image_id]
        with pytest.raises(ValueError, match=records[0].image_id):
            fit(grids, records, TrainConfig(epochs=1))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            fit({}, [], TrainConfig(epochs=1))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        grids, records = tiny_dataset()
        trained = fit(grids, records, TrainConfig(epochs=3, seed=5))
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained, path)
        loaded = load_checkpoint(path)
        assert set(loaded.params) == set(trained.params)
        for name in trained.params:
            assert loaded.params[name].tobytes() == trained.params[name].tobytes()
        assert loaded.vocab.id_to_token == trained.vocab.id_to_token
        assert loaded.config == trained.config
        assert loaded.encoder_spec == trained.encoder_spec

    def test_truncated_file(self, tmp_path):
        grids, records = tiny_dataset()
        trained = fit(grids, records, TrainConfig(epochs=1, seed=5))
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-17])
        with pytest.raises(CheckpointError, match="payload"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        grids, records = tiny_dataset()
        trained = fit(grids, records, TrainConfig(epochs=1, seed=5))
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained, path)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"XXXX" + b"\x00" * 30)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)


class TestConfigFile:
    def test_parse(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("epochs = 12\nlr=0.5  # step size\n\nhidden_dim=16\n")
        assert load_config_file(p) == {"epochs": 12, "lr": 0.5, "hidden_dim": 16}

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "cfg.txt"
        p.write_text("momentum=0.9\n")
        with pytest.raises(ValueError, match="momentum"):
            load_config_file(p)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0).validate()
        with pytest.raises(ValueError):
            TrainConfig(max_caption_len=1).validate()
