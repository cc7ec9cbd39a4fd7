"""
Unit tests for network architectures and inference
"""
import numpy as np
import pytest

from bcgn.core.errors import ShapeError
from bcgn.schemas.config_schemas import LatentKind, ObjectiveVariant
from bcgn.services.nets import (
    ModelParams,
    discriminator_forward,
    discriminator_score,
    encoder_forward,
    generator_forward,
    init_params,
    kl_loss,
)
from bcgn.services.tensor import Rng, Tensor
from bcgn.services.tensor import functional as F
from bcgn.services.training import (
    evaluate_translation,
    infer_diversify,
    infer_translate,
    noise_latents,
    pairwise_diversity,
    sfm_latent,
)


class TestParams:
    """Test parameter initialization and containers"""

    def test_shapes(self, tiny_params):
        """Generator, discriminator and encoder kernels have the documented shapes"""
        g, d, e = tiny_params.theta_ga, tiny_params.theta_da, tiny_params.theta_ea
        assert g["conv_in.weight"].shape == (4, 4, 3, 3)
        assert g["down2.weight"].shape == (16, 8, 4, 4)
        assert g["up1.weight"].shape == (16, 8, 4, 4)
        assert g["conv_out.weight"].shape == (3, 4, 3, 3)
        assert "res0.conv1.weight" in g and "res1.conv1.weight" not in g
        assert d["head.weight"].shape == (1, 16, 1, 1)
        assert e["stats.weight"].shape == (4, 8, 3, 3)
        assert e["up2.weight"].shape == (4, 1, 4, 4)

    def test_init_statistics(self, tiny_arch):
        """Biases start at zero and weights have small spread"""
        params = init_params(tiny_arch.model_copy(update={"features": 16}), Rng(0))
        for name, tensor in params.theta_gb.items():
            if name.endswith(".bias"):
                assert not tensor.data.any()
        weights = np.concatenate([t.data.ravel() for t in params.theta_gb.weights()])
        assert abs(weights.std() - 0.02) < 0.002

    def test_init_is_seeded(self, tiny_arch):
        """Same stream gives the same parameters"""
        a = init_params(tiny_arch, Rng(3)).flatten()
        b = init_params(tiny_arch, Rng(3)).flatten()
        assert a.keys() == b.keys()
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)

    def test_flatten_roundtrip(self, tiny_params):
        """unflatten inverts flatten"""
        flat = tiny_params.flatten()
        assert "theta_ga/conv_in.weight" in flat
        restored = ModelParams.unflatten(flat)
        assert restored.theta_eb.keys() == tiny_params.theta_eb.keys()
        assert restored.theta_db["head.bias"] is tiny_params.theta_db["head.bias"]

    def test_trainable_and_frozen(self, tiny_params):
        """trainable() yields fresh leaves; frozen() excludes tracking"""
        trainable = tiny_params.theta_da.trainable()
        assert all(t.requires_grad for t in trainable.values())
        assert not any(t.requires_grad for t in trainable.frozen().values())
        assert trainable.count() == tiny_params.theta_da.count()


class TestGenerator:
    """Test the cycle generator"""

    def test_output_shape_and_range(self, tiny_params, images):
        """Output matches the image shape and lies in (−1, 1)"""
        x = images(2)
        out = generator_forward(tiny_params.theta_ga, F.concat_channels(x, Tensor(np.zeros((2, 1, 8, 8)))))
        assert out.shape == (2, 3, 8, 8)
        assert np.all(np.abs(out.data) < 1.0)

    def test_requires_latent_channel(self, tiny_params, images):
        """A plain C-channel input is rejected"""
        with pytest.raises(ShapeError):
            generator_forward(tiny_params.theta_ga, images(1))

    def test_latent_changes_output(self, tiny_params, images, rng):
        """Different latent maps give different translations"""
        x = images(1)
        outs = [
            generator_forward(
                tiny_params.theta_ga, F.concat_channels(x, Tensor(rng.normal((1, 1, 8, 8), dtype=np.float64)))
            )
            for _ in range(2)
        ]
        assert not np.allclose(outs[0].data, outs[1].data)


class TestDiscriminator:
    """Test the patch discriminator"""

    def test_patch_map_shape(self, tiny_params, images):
        """An 8×8 input reduces to a single patch"""
        out = discriminator_forward(tiny_params.theta_da, images(2))
        assert out.shape == (2, 1, 1, 1)

    def test_standard_head_is_probability(self, tiny_params, images):
        """The standard variant squashes scores into (0, 1)"""
        x = images(3)
        scores = discriminator_score(tiny_params.theta_da, x, ObjectiveVariant.STANDARD)
        assert scores.shape == (3,)
        assert np.all((scores.data > 0) & (scores.data < 1))
        raw = discriminator_score(tiny_params.theta_da, x, ObjectiveVariant.LEAST_SQUARES)
        assert np.allclose(scores.data, 1.0 / (1.0 + np.exp(-raw.data)))

    @pytest.mark.parametrize("size, patches", [(8, 1), (16, 2), (24, 3)])
    def test_every_valid_size_gives_a_patch_map(self, tiny_arch, images, size, patches):
        """Each size the config accepts reduces to at least one patch"""
        arch = tiny_arch.model_copy(update={"height": size, "width": size})
        d = init_params(arch, Rng(0)).theta_da
        assert discriminator_forward(d, images(1, h=size, w=size)).shape == (1, 1, patches, patches)

    def test_wrong_channels(self, tiny_params, images):
        """Channel mismatch raises ShapeError"""
        with pytest.raises(ShapeError):
            discriminator_forward(tiny_params.theta_da, images(1, c=1))


class TestEncoder:
    """Test the statistic-feature-map encoder"""

    def test_shapes(self, tiny_params, images):
        """SFM is one channel at full size; statistics sit at quarter size"""
        sfm, mu, logvar = encoder_forward(tiny_params.theta_ea, images(2), Rng(0))
        assert sfm.shape == (2, 1, 8, 8)
        assert mu.shape == logvar.shape == (2, 2, 2, 2)

    def test_deterministic_without_rng(self, tiny_params, images):
        """rng=None fixes ε = 0"""
        x = images(2)
        a = encoder_forward(tiny_params.theta_ea, x, None)[0]
        b = encoder_forward(tiny_params.theta_ea, x, None)[0]
        assert np.array_equal(a.data, b.data)

    def test_sampling_varies_with_stream(self, tiny_params, images):
        """Different ε streams give different SFMs"""
        x = images(1)
        a = encoder_forward(tiny_params.theta_ea, x, Rng(1))[0]
        b = encoder_forward(tiny_params.theta_ea, x, Rng(2))[0]
        assert not np.array_equal(a.data, b.data)


class TestKLLoss:
    """Test the encoder KL term"""

    def test_zero_at_standard_normal(self):
        """μ = 0, log σ² = 0 gives zero"""
        zeros = Tensor(np.zeros((2, 2, 2, 2)))
        assert kl_loss(zeros, zeros).item() == pytest.approx(0.0)

    def test_closed_form(self):
        """½/batch · Σ(μ² + e^logvar − logvar − 1)"""
        mu = Tensor(np.full((2, 1, 1, 1), 2.0))
        logvar = Tensor(np.full((2, 1, 1, 1), 1.0))
        expected = 0.5 / 2 * 2 * (4.0 + np.e - 1.0 - 1.0)
        assert kl_loss(mu, logvar).item() == pytest.approx(expected)

    def test_shape_mismatch(self):
        """mu and logvar must share a shape"""
        with pytest.raises(ShapeError):
            kl_loss(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))


class TestInference:
    """Test translation, diversified generation and evaluation"""

    def test_translate_broadcasts_latent(self, tiny_params, images):
        """A single 1×H×W map serves the whole batch"""
        x = images(3)
        out = infer_translate(tiny_params, x, np.zeros((1, 8, 8)))
        assert out.shape == (3, 3, 8, 8)

    def test_translate_rejects_bad_latent(self, tiny_params, images):
        """Latent maps must be one channel"""
        with pytest.raises(ShapeError):
            infer_translate(tiny_params, images(1), np.zeros((1, 2, 8, 8)))

    def test_direction_selects_generator(self, tiny_params, images):
        """a2b uses G_A and b2a uses G_B"""
        x = images(1)
        lat = np.zeros((1, 1, 8, 8))
        direct = generator_forward(tiny_params.theta_gb, F.concat_channels(x, Tensor(lat)))
        assert np.allclose(infer_translate(tiny_params, x, lat, "b2a").data, direct.data)
        with pytest.raises(ValueError):
            infer_translate(tiny_params, x, lat, "sideways")

    def test_diversify_is_seeded(self, tiny_params, images):
        """Same latent seed, same outputs; distinct latents, distinct outputs"""
        x = images(1)
        first = infer_diversify(tiny_params, x, noise_latents(5, 3, 8, 8, np.float64))
        again = infer_diversify(tiny_params, x, noise_latents(5, 3, 8, 8, np.float64))
        assert len(first) == 3
        assert all(np.array_equal(a.data, b.data) for a, b in zip(first, again))
        diversity = pairwise_diversity(first)
        assert diversity[0][0] == 0.0
        assert diversity[0][1] == diversity[1][0] > 0.0

    def test_diversify_repeated_latent_repeats_output(self, tiny_params, images):
        """The same map passed k times gives k identical translations"""
        x = images(2)
        latent = noise_latents(7, 1, 8, 8, np.float64)[0]
        outputs = infer_diversify(tiny_params, x, [latent, latent, latent])
        assert all(np.array_equal(out.data, outputs[0].data) for out in outputs[1:])
        assert all(value == 0.0 for row in pairwise_diversity(outputs) for value in row)

    def test_diversify_needs_latents(self, tiny_params, images):
        """An empty latent list is rejected"""
        with pytest.raises(ValueError):
            infer_diversify(tiny_params, images(1), [])

    def test_sfm_latent_uses_target_encoder(self, tiny_params, images):
        """a2b SFMs come from E_B"""
        ref = images(1)
        expected = encoder_forward(tiny_params.theta_eb, ref, None)[0]
        assert np.array_equal(sfm_latent(tiny_params, ref).data, expected.data)

    def test_evaluate_translation(self, tiny_params, shift_data):
        """Outputs cover every item and pairing enables translate_l1"""
        data_a, data_b = shift_data
        for kind in (LatentKind.SFM, LatentKind.NOISE):
            out = evaluate_translation(tiny_params, data_a, data_b, kind, seed=0, batch_size=3)
            assert out.translated_b.shape == data_a.items.shape
            assert out.recon_a.shape == data_a.items.shape
            assert out.recon_l1 > 0.0
            assert out.translate_l1 is not None

    def test_evaluate_is_batch_invariant(self, tiny_params, shift_data):
        """Evaluation batch size does not change the results"""
        data_a, data_b = shift_data
        one = evaluate_translation(tiny_params, data_a, data_b, LatentKind.SFM, seed=0, batch_size=1)
        four = evaluate_translation(tiny_params, data_a, data_b, LatentKind.SFM, seed=0, batch_size=4)
        assert one.recon_l1 == pytest.approx(four.recon_l1, rel=1e-9)
