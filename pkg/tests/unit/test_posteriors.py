"""
Unit tests for the negative log-posterior objectives
"""
import math

import numpy as np
import pytest

from bcgn.core.errors import ShapeError
from bcgn.schemas.config_schemas import LatentKind, Objective, ObjectiveVariant
from bcgn.services.data import LatentBank
from bcgn.services.nets import discriminator_score, generator_forward
from bcgn.services.tensor import Rng, Tape, Tensor, gradients_for
from bcgn.services.tensor import functional as F
from bcgn.services.training import (
    Batch,
    build_generator_graph,
    d_loss,
    g_loss,
    make_variant_inputs,
    marginal_reduce,
    prior_penalty,
    supervised_pair_loss,
)

LOG2 = math.log(2.0)


def _zero_head(d):
    return d.map(lambda name, t: Tensor(np.zeros_like(t.data)) if name.startswith("head.") else t)


def _constant_head(d, bias):
    """Discriminator whose raw patch score is ``bias`` for every input."""
    return d.map(
        lambda name, t: Tensor(np.full_like(t.data, bias if name == "head.bias" else 0.0))
        if name.startswith("head.")
        else t
    )


def _noise_batch(x, y, m, seed=0):
    rng = Rng(seed)
    latents_y = LatentBank.noise(rng, m, x.shape[0], 8, 8, x.dtype)
    latents_x = LatentBank.noise(rng, m, y.shape[0], 8, 8, y.dtype)
    return Batch(real_x=x, real_y=y, latents_x=latents_x, latents_y=latents_y)


class TestVariantInputs:
    """Test latent concatenation"""

    def test_concatenates_one_channel_per_map(self, images):
        """Each map becomes the last channel of its own input"""
        x = images(2)
        maps = [Tensor(np.full((2, 1, 8, 8), float(k))) for k in range(3)]
        inputs = make_variant_inputs(x, maps)
        assert len(inputs) == 3
        assert inputs[2].shape == (2, 4, 8, 8)
        assert np.all(inputs[2].data[:, 3] == 2.0)
        assert np.array_equal(inputs[0].data[:, :3], x.data)

    def test_broadcasts_single_map(self, images):
        """A 1×1×H×W map is repeated over the batch"""
        inputs = make_variant_inputs(images(3), [Tensor(np.ones((1, 1, 8, 8)))])
        assert inputs[0].shape == (3, 4, 8, 8)

    def test_rejects_mismatches(self, images):
        """Spatial or batch mismatches raise ShapeError; no maps raises ValueError"""
        x = images(2)
        with pytest.raises(ShapeError):
            make_variant_inputs(x, [Tensor(np.ones((2, 1, 4, 4)))])
        with pytest.raises(ShapeError):
            make_variant_inputs(x, [Tensor(np.ones((3, 1, 8, 8)))])
        with pytest.raises(ValueError):
            make_variant_inputs(x, [])


class TestPriorPenalty:
    """Test the weight prior"""

    def test_l2(self):
        """α·Σθ²"""
        assert prior_penalty([Tensor(np.array([2.0]))], 0.1).item() == pytest.approx(0.4)
        assert prior_penalty([Tensor(np.array([2.0, -1.0]))], 0.1, "l2").item() == pytest.approx(0.5)

    def test_l1_squared(self):
        """α·(Σ|θ|)²"""
        value = prior_penalty([Tensor(np.array([2.0, -1.0]))], 0.1, "l1_squared").item()
        assert value == pytest.approx(0.9)

    def test_zero_alpha(self):
        """α = 0 contributes nothing"""
        assert prior_penalty([Tensor(np.array([5.0]))], 0.0).item() == 0.0

    def test_invalid_arguments(self):
        """Negative α and unknown norms are rejected"""
        with pytest.raises(ValueError):
            prior_penalty([Tensor(np.array([1.0]))], -0.1)
        with pytest.raises(ValueError):
            prior_penalty([Tensor(np.array([1.0]))], 0.1, "l3")

    def test_accepts_param_set(self, tiny_params):
        """A ParamSet covers biases as well as kernels"""
        d = tiny_params.theta_da
        expected = 0.5 * sum(float(np.sum(t.data ** 2)) for t in d.values())
        assert prior_penalty(d, 0.5).item() == pytest.approx(expected)


class TestMarginalReduce:
    """Test the Monte-Carlo average"""

    def test_average(self):
        """Mean of the per-sample losses"""
        losses = [Tensor(np.array(v)) for v in (1.0, 2.0, 3.0)]
        assert marginal_reduce(losses).item() == pytest.approx(2.0)

    def test_empty(self):
        """No samples is an error"""
        with pytest.raises(ValueError):
            marginal_reduce([])


class TestDiscriminatorLoss:
    """Test d_loss weighting of reals, fakes and reconstructions"""

    def test_standard_at_half(self, tiny_params, images):
        """D ≡ ½ gives 2·log 2 without reconstructions and 3·log 2 at γ = ½"""
        d = _zero_head(tiny_params.theta_da)
        real, fakes, recons = images(2), [images(2), images(2)], [images(2), images(2)]
        plain = Objective(variant=ObjectiveVariant.STANDARD, gamma=0.0, weight_decay=0.0)
        balanced = Objective(variant=ObjectiveVariant.STANDARD, gamma=0.5, weight_decay=0.0)
        assert d_loss(plain, d, real, fakes).item() == pytest.approx(2 * LOG2)
        assert d_loss(balanced, d, real, fakes, recons).item() == pytest.approx(3 * LOG2)

    def test_least_squares_at_zero(self, tiny_params, images):
        """D ≡ 0 gives 1+γ"""
        d = _zero_head(tiny_params.theta_da)
        obj = Objective(variant=ObjectiveVariant.LEAST_SQUARES, gamma=0.25, weight_decay=0.0)
        value = d_loss(obj, d, images(3), [images(3)], [images(3)]).item()
        assert value == pytest.approx(1.25)

    def test_reconstructions_ignored_without_gamma(self, tiny_params, images):
        """γ = 0 drops the reconstruction term"""
        obj = Objective(gamma=0.0)
        real, fakes = images(2), [images(2)]
        base = d_loss(obj, tiny_params.theta_da, real, fakes).item()
        assert d_loss(obj, tiny_params.theta_da, real, fakes, [images(2)]).item() == base

    def test_prior_added(self, tiny_params, images):
        """The prior penalty enters additively"""
        real, fakes = images(2), [images(2)]
        without = d_loss(Objective(weight_decay=0.0), tiny_params.theta_da, real, fakes).item()
        with_prior = d_loss(Objective(weight_decay=0.3), tiny_params.theta_da, real, fakes).item()
        expected = prior_penalty(tiny_params.theta_da, 0.3).item()
        assert with_prior - without == pytest.approx(expected, rel=1e-9)

    def test_needs_fakes(self, tiny_params, images):
        """At least one fake batch is required"""
        with pytest.raises(ValueError):
            d_loss(Objective(), tiny_params.theta_da, images(1), [])

    def test_reconstruction_count_must_match_fakes(self, tiny_params, images):
        """With γ > 0 every fake batch needs its reconstruction batch"""
        obj = Objective(gamma=0.5)
        real, fakes = images(2), [images(2), images(2)]
        with pytest.raises(ShapeError, match="2 fakes, 1 recons"):
            d_loss(obj, tiny_params.theta_da, real, fakes, [images(2)])
        with pytest.raises(ShapeError):
            d_loss(obj, tiny_params.theta_da, real, fakes)

    def test_descent_step_moves_scores_toward_labels(self, tiny_params, images):
        """A small gradient step on a discriminator that rejects reals lowers the loss and raises D(real)"""
        obj = Objective(variant=ObjectiveVariant.STANDARD, gamma=0.5, weight_decay=0.0)
        real, fakes, recons = images(2), [images(2)], [images(2)]
        d = _constant_head(tiny_params.theta_da, -3.0)

        with Tape() as tape:
            live = d.trainable()
            before = d_loss(obj, live, real, fakes, recons)
        grads = dict(zip(live, gradients_for(tape.backward(before), live.values())))
        stepped = live.frozen().map(lambda name, t: Tensor(t.data - 0.05 * grads[name].data))

        after = d_loss(obj, stepped, real, fakes, recons)
        assert after.item() < before.item()
        score_before = discriminator_score(d, real, ObjectiveVariant.STANDARD).data
        score_after = discriminator_score(stepped, real, ObjectiveVariant.STANDARD).data
        assert score_after.mean() > score_before.mean()

    def test_least_squares_non_decreasing_in_gamma(self, tiny_params, images):
        """Extra γ weight only adds non-negative squared terms"""
        real, fakes, recons = images(2), [images(2), images(2)], [images(2), images(2)]
        values = [
            d_loss(
                Objective(variant=ObjectiveVariant.LEAST_SQUARES, gamma=gamma, weight_decay=0.0),
                tiny_params.theta_da,
                real,
                fakes,
                recons,
            ).item()
            for gamma in (0.0, 0.25, 0.5, 1.0)
        ]
        assert all(a <= b for a, b in zip(values, values[1:]))


class TestGeneratorLoss:
    """Test the generator objective"""

    def test_reduces_to_cycle_consistent_objective(self, tiny_params, images):
        """m=1, γ=0, α=0, λ_KL=0 with noise latents matches the plain two-cycle objective"""
        obj = Objective(
            variant=ObjectiveVariant.LEAST_SQUARES, gamma=0.0, lambda_cyc=10.0, lambda_kl=0.0, weight_decay=0.0
        )
        x, y = images(2), images(2)
        batch = _noise_batch(x, y, m=1)
        p = tiny_params

        f_y, f_x = batch.latents_y[0], batch.latents_x[0]
        y_fake = generator_forward(p.theta_ga, F.concat_channels(x, f_y))
        x_rec = generator_forward(p.theta_gb, F.concat_channels(y_fake, f_x))
        x_fake = generator_forward(p.theta_gb, F.concat_channels(y, f_x))
        y_rec = generator_forward(p.theta_ga, F.concat_channels(x_fake, f_y))
        adv = np.mean((discriminator_score(p.theta_da, y_fake).data - 1.0) ** 2) + np.mean(
            (discriminator_score(p.theta_db, x_fake).data - 1.0) ** 2
        )
        cyc = np.abs(x_rec.data - x.data).sum() / 2 + np.abs(y_rec.data - y.data).sum() / 2
        expected = adv + 10.0 * cyc

        assert g_loss(obj, p, batch).item() == pytest.approx(expected, rel=1e-6)

    def test_graph_terms(self, tiny_params, images):
        """Components add up to the total and images are kept per sample"""
        obj = Objective(gamma=0.5, weight_decay=1e-3, lambda_kl=0.0)
        graph = build_generator_graph(obj, tiny_params, _noise_batch(images(2), images(2), m=3))
        assert len(graph.fakes_y) == len(graph.recons_x) == 3
        assert len(graph.fakes_x) == len(graph.recons_y) == 3
        parts = graph.adversarial.item() + graph.cycle.item() + graph.kl.item() + graph.prior.item()
        assert graph.total.item() == pytest.approx(parts, rel=1e-9)
        assert graph.recon_l1 > 0.0

    def test_gamma_changes_standard_loss(self, tiny_params, images):
        """Reconstructions are judged by the source discriminator when γ > 0"""
        batch = _noise_batch(images(2), images(2), m=2)
        plain = g_loss(Objective(variant=ObjectiveVariant.STANDARD, gamma=0.0), tiny_params, batch).item()
        balanced = g_loss(Objective(variant=ObjectiveVariant.STANDARD, gamma=0.5), tiny_params, batch).item()
        assert balanced > plain

    def test_threads_do_not_change_result(self, tiny_params, images):
        """Threaded samples reproduce the serial loss and gradients exactly"""
        obj = Objective(gamma=0.5)
        x, y = images(2), images(2)

        def run(threads):
            with Tape() as tape:
                params = tiny_params.replace(theta_ga=tiny_params.theta_ga.trainable())
                loss = g_loss(obj, params, _noise_batch(x, y, m=3), threads=threads)
            grads = gradients_for(tape.backward(loss), params.theta_ga.values())
            return loss.item(), [g.data for g in grads]

        serial_loss, serial_grads = run(1)
        threaded_loss, threaded_grads = run(3)
        assert serial_loss == threaded_loss
        assert all(np.array_equal(a, b) for a, b in zip(serial_grads, threaded_grads))

    def test_batch_mismatch(self, tiny_params, images):
        """Latent banks must match the batch they are combined with"""
        batch = _noise_batch(images(2), images(2), m=1)
        bad = Batch(
            real_x=images(3),
            real_y=batch.real_y,
            latents_x=batch.latents_x,
            latents_y=batch.latents_y,
        )
        with pytest.raises(ShapeError):
            g_loss(Objective(), tiny_params, bad)

    def test_least_squares_adversarial_vanishes_when_fooled(self, tiny_params, images):
        """Discriminators that score every image 1 leave only the cycle term"""
        obj = Objective(
            variant=ObjectiveVariant.LEAST_SQUARES, gamma=0.5, lambda_kl=0.0, weight_decay=0.0
        )
        params = tiny_params.replace(
            theta_da=_constant_head(tiny_params.theta_da, 1.0),
            theta_db=_constant_head(tiny_params.theta_db, 1.0),
        )
        graph = build_generator_graph(obj, params, _noise_batch(images(2), images(2), m=2))
        assert graph.adversarial.item() == 0.0
        assert graph.total.item() == pytest.approx(graph.cycle.item(), rel=1e-12)

    def test_increases_with_cycle_weight(self, tiny_params, images):
        """A larger λ never lowers the generator loss"""
        batch = _noise_batch(images(2), images(2), m=2)
        values = [
            g_loss(Objective(lambda_cyc=lam, lambda_kl=0.0), tiny_params, batch).item()
            for lam in (0.5, 1.0, 5.0, 10.0)
        ]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_sfm_bank_kind(self, tiny_params, images):
        """Banks built from maps keep their kind"""
        bank = LatentBank.from_maps(LatentKind.SFM, [Tensor(np.zeros((2, 1, 8, 8)))])
        assert bank.kind == LatentKind.SFM and len(bank) == 1


class TestSupervisedPairLoss:
    """Test the paired warm-up loss"""

    def test_matches_direct_l1(self, tiny_params, images):
        """L1(G_A(x ⊕ f_y), y) + L1(G_B(y ⊕ f_x), x)"""
        x, y = images(2), images(2)
        f_x, f_y = Tensor(np.zeros((2, 1, 8, 8))), Tensor(np.ones((2, 1, 8, 8)))
        y_hat = generator_forward(tiny_params.theta_ga, F.concat_channels(x, f_y))
        x_hat = generator_forward(tiny_params.theta_gb, F.concat_channels(y, f_x))
        expected = np.abs(y_hat.data - y.data).sum() / 2 + np.abs(x_hat.data - x.data).sum() / 2
        loss = supervised_pair_loss(tiny_params.theta_ga, tiny_params.theta_gb, x, y, f_x, f_y)
        assert loss.item() == pytest.approx(expected, rel=1e-9)
