"""
Unit tests for the optimizer, training loop and checkpoints
"""
import numpy as np
import pytest

from bcgn.core.errors import ConfigValidationError, ContainerError, NumericalError, ShapeError
from bcgn.schemas.config_schemas import LatentKind, TrainConfig
from bcgn.services.data import Dataset, gen_shift_task, write_container
from bcgn.services.nets import ParamSet
from bcgn.services.tensor import Rng, Tape, Tensor, gradients_for
from bcgn.services.training import (
    OptimState,
    TrainState,
    adam_step,
    load_checkpoint,
    load_params,
    lr_at,
    save_checkpoint,
    train_iteration,
    train_loop,
    trainer,
)
from bcgn.services.training.trainer import sample_batch


def _same_params(a, b):
    fa, fb = a.flatten(), b.flatten()
    return fa.keys() == fb.keys() and all(np.array_equal(fa[k].data, fb[k].data) for k in fa)


class TestAdam:
    """Test the ADAM update"""

    def test_first_step(self):
        """Bias correction makes the first step lr·sign(g)"""
        params = {"w": Tensor(np.array([1.0]))}
        grads = {"w": Tensor(np.array([0.5]))}
        new, state = adam_step(params, grads, OptimState(), lr=0.1)
        assert new["w"].item() == pytest.approx(0.9, rel=1e-6)
        assert state.step == 1
        assert params["w"].item() == 1.0

    def test_moments_accumulate(self):
        """Moments follow the exponential averages"""
        params = {"w": Tensor(np.array([0.0, 0.0]))}
        grads = {"w": Tensor(np.array([1.0, -2.0]))}
        _, state = adam_step(params, grads, OptimState(), lr=0.01, beta1=0.9, beta2=0.99)
        assert np.allclose(state.m["w"], [0.1, -0.2])
        assert np.allclose(state.v["w"], [0.01, 0.04])

    def test_missing_gradient(self):
        """Every parameter needs a gradient"""
        with pytest.raises(ShapeError):
            adam_step({"w": Tensor(np.zeros(2))}, {}, OptimState(), lr=0.1)

    def test_gradient_shape(self):
        """Gradient shapes must match parameters"""
        with pytest.raises(ShapeError):
            adam_step({"w": Tensor(np.zeros(2))}, {"w": Tensor(np.zeros(3))}, OptimState(), lr=0.1)


class TestLearningRate:
    """Test the learning-rate schedule"""

    @pytest.fixture
    def cfg(self, tiny_arch_f32):
        return TrainConfig(epochs_total=200, epochs_constant=100, lr=2e-4, arch=tiny_arch_f32)

    def test_linear(self, cfg):
        """Constant, then linear to zero"""
        assert lr_at(0, cfg) == pytest.approx(2e-4)
        assert lr_at(99, cfg) == pytest.approx(2e-4)
        assert lr_at(100, cfg) == pytest.approx(2e-4)
        assert lr_at(150, cfg) == pytest.approx(1e-4)
        assert lr_at(200, cfg) == pytest.approx(0.0)

    def test_cosine(self, cfg):
        """Half-cosine decay meets linear at the midpoint"""
        cosine = cfg.model_copy(update={"lr_decay": "cosine"})
        assert lr_at(150, cosine) == pytest.approx(1e-4)
        assert lr_at(125, cosine) > lr_at(125, cfg)
        assert lr_at(200, cosine) == pytest.approx(0.0)

    def test_out_of_range(self, cfg):
        """Epochs outside [0, total] are rejected"""
        with pytest.raises(ConfigValidationError):
            lr_at(201, cfg)
        with pytest.raises(ConfigValidationError):
            lr_at(-1, cfg)


class TestTrainIteration:
    """Test one alternating update"""

    def test_updates_all_networks(self, tiny_train_config, shift_data):
        """Generators, encoders and both discriminators move; the counter advances"""
        data_a, data_b = shift_data
        state = TrainState.initial(tiny_train_config)
        x, y = data_a.batch([0, 1]), data_b.batch([2, 3])
        new_state, record = train_iteration(state, x, y, tiny_train_config, lr=2e-4)
        assert new_state.iteration == 1 and record.iteration == 0
        for group in ("theta_ga", "theta_gb", "theta_da", "theta_db", "theta_ea", "theta_eb"):
            before = getattr(state.params, group)
            after = getattr(new_state.params, group)
            assert any(not np.array_equal(before[k].data, after[k].data) for k in before), group
        assert new_state.opt_g.step == new_state.opt_da.step == new_state.opt_db.step == 1
        assert np.isfinite([record.g_loss, record.dA_loss, record.dB_loss, record.recon_l1]).all()

    def test_non_finite_names_iteration(self, tiny_train_config, shift_data):
        """A NaN weight surfaces as NumericalError naming the iteration"""
        data_a, data_b = shift_data
        state = TrainState.initial(tiny_train_config)
        poisoned = state.params.theta_ga.map(
            lambda name, t: Tensor(np.full_like(t.data, np.nan)) if name == "conv_in.weight" else t
        )
        state.params = state.params.replace(theta_ga=poisoned)
        with pytest.raises(NumericalError, match="iteration 0"):
            train_iteration(state, data_a.batch([0, 1]), data_b.batch([0, 1]), tiny_train_config, lr=2e-4)

    def test_noise_latents(self, tiny_train_config, shift_data):
        """Noise latents leave the encoders untouched"""
        cfg = tiny_train_config.model_copy(update={"latent_kind": LatentKind.NOISE})
        data_a, data_b = shift_data
        state = TrainState.initial(cfg)
        new_state, _ = train_iteration(state, data_a.batch([0, 1]), data_b.batch([0, 1]), cfg, lr=2e-4)
        before, after = state.params.theta_ga, new_state.params.theta_ga
        assert not np.array_equal(before["conv_in.weight"].data, after["conv_in.weight"].data)
        for name, tensor in state.params.theta_ea.items():
            assert np.array_equal(tensor.data, new_state.params.theta_ea[name].data)


class TestEncoderKL:
    """Test the KL term the trainer draws with SFM latents"""

    def test_kl_falls_under_encoder_updates(self, tiny_train_config, shift_data):
        """ADAM steps on the encoders alone lower the KL every step"""
        data_a, data_b = shift_data
        x, y = data_a.batch([0, 1]), data_b.batch([2, 3])
        params = TrainState.initial(tiny_train_config).params
        params = params.replace(
            theta_ea=params.theta_ea.map(
                lambda name, t: Tensor(t.data + 1.0, dtype=t.dtype) if name == "stats.bias" else t
            )
        )
        states = {"theta_ea": OptimState(), "theta_eb": OptimState()}

        values = []
        for step in range(5):
            with Tape() as tape:
                live = params.replace(theta_ea=params.theta_ea.trainable(), theta_eb=params.theta_eb.trainable())
                kl = sample_batch(live, x, y, tiny_train_config, Rng(step)).kl
            grads = tape.backward(kl)
            updates = {}
            for group in states:
                encoder = getattr(live, group)
                encoder_grads = dict(zip(encoder, gradients_for(grads, encoder.values())))
                new, states[group] = adam_step(dict(encoder.items()), encoder_grads, states[group], lr=1e-2)
                updates[group] = ParamSet(new)
            params = params.replace(**updates)
            values.append(kl.item())

        assert all(a > b for a, b in zip(values, values[1:]))


class TestTrainLoop:
    """Test the training protocol"""

    def test_runs_all_iterations(self, tiny_train_config, shift_data):
        """Two epochs of two iterations, with per-iteration callbacks"""
        seen = []
        result = train_loop(
            *shift_data, tiny_train_config, callbacks=[lambda rec, st: seen.append((rec.iteration, st.iteration))]
        )
        assert [m.iteration for m in result.metrics] == [0, 1, 2, 3]
        assert [m.epoch for m in result.metrics] == [0, 0, 1, 1]
        assert seen == [(0, 1), (1, 2), (2, 3), (3, 4)]
        assert result.state.iteration == 4

    def test_deterministic(self, tiny_train_config, shift_data):
        """Same seed and data give identical runs"""
        first = train_loop(*shift_data, tiny_train_config)
        second = train_loop(*shift_data, tiny_train_config)
        assert [m.model_dump() for m in first.metrics] == [m.model_dump() for m in second.metrics]
        assert _same_params(first.state.params, second.state.params)

    def test_threads_match_serial(self, tiny_train_config, shift_data):
        """Worker threads do not change any number"""
        serial = train_loop(*shift_data, tiny_train_config, threads=1)
        threaded = train_loop(*shift_data, tiny_train_config, threads=2)
        assert [m.model_dump() for m in serial.metrics] == [m.model_dump() for m in threaded.metrics]
        assert _same_params(serial.state.params, threaded.state.params)

    def test_max_iterations(self, tiny_train_config, shift_data):
        """max_iterations caps the run"""
        cfg = tiny_train_config.model_copy(update={"max_iterations": 3})
        assert len(train_loop(*shift_data, cfg).metrics) == 3

    def test_warmup(self, tiny_train_config, shift_data):
        """Paired warm-up changes the trajectory"""
        plain = train_loop(*shift_data, tiny_train_config.model_copy(update={"max_iterations": 1}))
        warm_cfg = tiny_train_config.model_copy(update={"max_iterations": 1, "warmup_pairs": 2})
        warm = train_loop(*shift_data, warm_cfg)
        assert not _same_params(plain.state.params, warm.state.params)
        assert warm.state.opt_g.step == 2

    def test_no_warmup_pairs_skips_supervised_loss(self, tiny_train_config, shift_data, monkeypatch):
        """warmup_pairs=0 never evaluates the paired loss; a positive count does"""
        calls = []
        paired_loss = trainer.supervised_pair_loss

        def counting(*args):
            calls.append(args)
            return paired_loss(*args)

        monkeypatch.setattr(trainer, "supervised_pair_loss", counting)
        train_loop(*shift_data, tiny_train_config.model_copy(update={"max_iterations": 2, "warmup_pairs": 0}))
        assert calls == []
        train_loop(*shift_data, tiny_train_config.model_copy(update={"max_iterations": 1, "warmup_pairs": 2}))
        assert len(calls) == 1

    def test_warmup_needs_pairing(self, tiny_train_config, shift_data):
        """Warm-up on unpaired data is a configuration error"""
        data_a, data_b = shift_data
        unpaired = Dataset(data_a.items, "A")
        cfg = tiny_train_config.model_copy(update={"warmup_pairs": "auto"})
        with pytest.raises(ConfigValidationError):
            train_loop(unpaired, data_b, cfg)

    def test_rejects_bad_data(self, tiny_train_config, shift_data):
        """Empty domains and mismatched image sizes are rejected"""
        data_a, data_b = shift_data
        with pytest.raises(ConfigValidationError):
            train_loop(Dataset(np.zeros((0, 3, 8, 8)), "A"), data_b, tiny_train_config)
        big_a, big_b, _ = gen_shift_task(0, 4, 12, 12)
        with pytest.raises(ConfigValidationError):
            train_loop(big_a, big_b, tiny_train_config)


class TestCheckpoint:
    """Test checkpoint persistence and resume"""

    def test_roundtrip(self, tiny_train_config, shift_data, tmp_path):
        """Parameters, moments and counters survive save/load exactly"""
        cfg = tiny_train_config.model_copy(update={"max_iterations": 1})
        state = train_loop(*shift_data, cfg).state
        path = tmp_path / "run.bcgn"
        save_checkpoint(str(path), state)
        loaded = load_checkpoint(str(path))
        assert loaded.iteration == 1
        assert _same_params(loaded.params, state.params)
        assert loaded.opt_g.step == state.opt_g.step
        for name, moment in state.opt_da.v.items():
            assert np.array_equal(loaded.opt_da.v[name], moment)
        assert _same_params(load_params(str(path)), state.params)

    def test_resume_matches_uninterrupted(self, tiny_train_config, shift_data, tmp_path):
        """Stopping after two iterations and resuming reproduces the full run"""
        full = train_loop(*shift_data, tiny_train_config)

        first_leg = train_loop(*shift_data, tiny_train_config.model_copy(update={"max_iterations": 2}))
        path = tmp_path / "half.bcgn"
        save_checkpoint(str(path), first_leg.state)
        resumed = train_loop(*shift_data, tiny_train_config, state=load_checkpoint(str(path)))

        assert [m.iteration for m in resumed.metrics] == [2, 3]
        combined = first_leg.metrics + resumed.metrics
        assert [m.model_dump() for m in combined] == [m.model_dump() for m in full.metrics]
        assert _same_params(resumed.state.params, full.state.params)

    def test_missing_entries(self, tmp_path):
        """Containers without parameters or counters are not checkpoints"""
        path = str(tmp_path / "other.bcgn")
        write_container(path, {"items": np.zeros((1, 2), dtype=np.float32)})
        with pytest.raises(ContainerError):
            load_params(path)
        with pytest.raises(ContainerError):
            load_checkpoint(path)
