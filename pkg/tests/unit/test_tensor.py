"""
Unit tests for the tensor engine, random streams and gradient checking
"""
import numpy as np
import pytest

from bcgn.core.errors import NumericalError, ShapeError
from bcgn.services.tensor import Rng, Tape, Tensor, backward, finite_diff_check, gradients_for
from bcgn.services.tensor import functional as F
from bcgn.services.training.gradcheck_suite import all_cases, run_gradcheck
from bcgn.services.training.parallel import map_samples


class TestRng:
    """Test seeded streams"""

    def test_same_seed_same_draws(self):
        """Two streams with one seed agree"""
        assert np.array_equal(Rng(7).normal((3, 4)), Rng(7).normal((3, 4)))
        assert np.array_equal(Rng(7).uniform(5), Rng(7).uniform(5))

    def test_draws_independent_of_chunking(self):
        """Raw outputs do not depend on how they are requested"""
        a = Rng(11)
        b = Rng(11)
        chunked = np.concatenate([a.next_u64(3), a.next_u64(2)])
        assert np.array_equal(chunked, b.next_u64(5))

    def test_derive_separates_purposes(self):
        """Derived streams differ by key and are reproducible"""
        first = Rng.derive(0, "order", "A", 1).uniform(4)
        assert np.array_equal(first, Rng.derive(0, "order", "A", 1).uniform(4))
        assert not np.array_equal(first, Rng.derive(0, "order", "B", 1).uniform(4))
        assert not np.array_equal(first, Rng.derive(1, "order", "A", 1).uniform(4))

    def test_ranges(self):
        """Uniforms lie in [0, 1) and integers in [0, high)"""
        rng = Rng(3)
        u = rng.uniform(1000)
        assert u.min() >= 0.0 and u.max() < 1.0
        ints = rng.integers(5, 1000)
        assert ints.min() >= 0 and ints.max() < 5

    def test_choice_without_replacement(self):
        """choice returns distinct indices"""
        picked = Rng(5).choice(10, 6)
        assert len(set(picked.tolist())) == 6
        with pytest.raises(ValueError):
            Rng(5).choice(3, 4)

    def test_normal_moments(self):
        """Gaussian draws have roughly zero mean and unit variance"""
        z = Rng(9).normal(20000, dtype=np.float64)
        assert abs(z.mean()) < 0.05
        assert abs(z.std() - 1.0) < 0.05


class TestTensor:
    """Test the value type"""

    def test_default_dtype(self):
        """Lists become float32 and float64 arrays stay float64"""
        assert Tensor([1, 2, 3]).dtype == np.float32
        assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64

    def test_item_requires_single_element(self):
        """item() rejects multi-element tensors"""
        assert Tensor([2.5]).item() == 2.5
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_arithmetic_operators(self):
        """Operators dispatch to the elementwise ops"""
        a = Tensor(np.array([1.0, 2.0]))
        b = Tensor(np.array([3.0, 5.0]))
        assert np.allclose((a + b).data, [4.0, 7.0])
        assert np.allclose((a - b).data, [-2.0, -3.0])
        assert np.allclose((a * b).data, [3.0, 10.0])
        assert np.allclose((1.0 - a).data, [0.0, -1.0])
        assert np.allclose((-a).data, [-1.0, -2.0])

    def test_broadcast_rules(self):
        """Scalars and leading-1 shapes broadcast; other shapes fail"""
        x = Tensor(np.ones((2, 3)))
        assert F.add(x, Tensor(np.ones((1, 3)))).shape == (2, 3)
        assert F.add(x, 2.0).shape == (2, 3)
        with pytest.raises(ShapeError):
            F.add(x, Tensor(np.ones((3, 2))))

    def test_non_finite_output_raises(self):
        """Ops producing Inf raise NumericalError naming the op"""
        with np.errstate(over="ignore"):
            with pytest.raises(NumericalError, match="exp"):
                F.exp(Tensor(np.array([1000.0], dtype=np.float32)))

    def test_log_clamps_operand(self):
        """log(0) is log(1e-12), not -Inf"""
        out = F.log(Tensor(np.array([0.0])))
        assert np.isclose(out.item(), np.log(1e-12))


class TestTape:
    """Test reverse-mode differentiation"""

    def test_square_sum_gradient(self):
        """d/dx Σx² = 2x"""
        x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        with Tape() as tape:
            loss = F.sum_all(F.square(x))
        grads = tape.backward(loss)
        assert np.allclose(grads[x.node_id].data, [2.0, -4.0, 6.0])

    def test_shared_input_accumulates(self):
        """A tensor used twice receives both contributions"""
        x = Tensor(np.array([3.0]), requires_grad=True)
        with Tape() as tape:
            loss = F.sum_all(F.mul(x, x))
        assert np.allclose(backward(loss, tape)[x.node_id].data, [6.0])

    def test_non_scalar_loss_rejected(self):
        """Backward from a vector raises ShapeError"""
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = F.square(x)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_backward_without_tape(self):
        """backward() outside a tape is an error"""
        with pytest.raises(RuntimeError):
            backward(Tensor(np.array(1.0)))

    def test_untouched_leaf_gets_zeros(self):
        """gradients_for fills zeros for tensors off the graph"""
        x = Tensor(np.array([1.0]), requires_grad=True)
        unused = Tensor(np.array([4.0, 5.0]), requires_grad=True)
        with Tape() as tape:
            loss = F.sum_all(x)
        grads = tape.backward(loss)
        gx, gu = gradients_for(grads, [x, unused])
        assert np.allclose(gx.data, [1.0])
        assert np.allclose(gu.data, [0.0, 0.0])

    def test_no_recording_without_requires_grad(self):
        """Constants are not recorded"""
        with Tape() as tape:
            F.square(Tensor(np.ones(2)))
        assert len(tape) == 0


class TestConvolution:
    """Test convolution shapes and adjointness"""

    def test_conv_output_shape(self):
        """3×3 kernel with padding 1 keeps spatial size; stride 2 halves it"""
        x = Tensor(np.ones((2, 3, 8, 8)))
        k3 = Tensor(np.ones((5, 3, 3, 3)))
        k4 = Tensor(np.ones((5, 3, 4, 4)))
        assert F.conv2d(x, k3, 1, 1).shape == (2, 5, 8, 8)
        assert F.conv2d(x, k4, 2, 1).shape == (2, 5, 4, 4)

    def test_conv_of_ones(self):
        """Interior outputs of an all-ones 3×3 conv equal 9·C"""
        out = F.conv2d(Tensor(np.ones((1, 2, 5, 5))), Tensor(np.ones((1, 2, 3, 3))), 1, 1)
        assert out.data[0, 0, 2, 2] == pytest.approx(18.0)
        assert out.data[0, 0, 0, 0] == pytest.approx(8.0)

    def test_transpose_is_adjoint(self, rng):
        """<conv(x), y> = <x, conv_transpose(y)> for the same kernel"""
        x = rng.normal((1, 2, 8, 8), dtype=np.float64)
        k = rng.normal((3, 2, 4, 4), dtype=np.float64)
        y = rng.normal((1, 3, 4, 4), dtype=np.float64)
        lhs = np.sum(F.conv2d(Tensor(x), Tensor(k), 2, 1).data * y)
        rhs = np.sum(x * F.conv_transpose2d(Tensor(y), Tensor(k), 2, 1).data)
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_channel_mismatch(self):
        """Kernel and input channel counts must agree"""
        with pytest.raises(ShapeError):
            F.conv2d(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((2, 2, 3, 3))))

    def test_non_integral_output(self):
        """Sizes that do not tile raise ShapeError"""
        with pytest.raises(ShapeError):
            F.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 2, 2))), stride=2)

    def test_instance_norm_statistics(self, rng):
        """Each plane is normalized to zero mean and unit variance"""
        x = Tensor(rng.normal((2, 3, 4, 4), std=3.0, mean=1.0, dtype=np.float64))
        out = F.instance_norm(x).data
        assert np.allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-10)
        assert np.allclose(out.var(axis=(2, 3)), 1.0, atol=1e-3)


class TestFiniteDifferences:
    """Test the finite-difference checker"""

    def test_smooth_function(self, rng):
        """tanh passes in double precision"""
        x = Tensor(rng.normal((3, 4), dtype=np.float64))
        err = finite_diff_check(lambda t: F.sum_all(F.tanh(t)), x, eps=1e-6)
        assert err < 1e-6

    def test_kink_crossing_is_skipped(self):
        """A relu step straddling 0 is not compared"""
        x = Tensor(np.array([0.0, 1.0, -1.0]))
        err = finite_diff_check(lambda t: F.sum_all(F.relu(t)), x, eps=1e-6)
        assert err < 1e-6

    def test_wrong_gradient_detected(self):
        """A function with a broken backward fails the check"""

        class Broken(F.Square):
            def backward(self, grad):
                return (grad * self.x,)

        x = Tensor(np.array([1.0, 2.0]))
        err = finite_diff_check(lambda t: F.sum_all(Broken.apply(t)), x, eps=1e-6)
        assert err > 0.1


class TestGradcheckSuite:
    """Test the assembled gradient suite"""

    def test_case_names_cover_ops_networks_and_losses(self):
        """Every op, network and loss has a case"""
        names = {case.name for case in all_cases()}
        for expected in ("op.relu", "op.conv2d.input", "op.conv_transpose2d.kernel", "net.generator",
                         "net.encoder", "loss.prior.l2"):
            assert expected in names
        assert {n for n in names if n.startswith("loss.g_loss")} == {
            "loss.g_loss.standard[gamma=0.0]",
            "loss.g_loss.standard[gamma=0.5]",
            "loss.g_loss.least_squares[gamma=0.0]",
            "loss.g_loss.least_squares[gamma=0.5]",
        }

    def test_ops_float64(self):
        """Elementwise and structural ops pass at 1e-6 in double precision"""
        report = run_gradcheck(seed=0, seeds=2, dtype="float64", only=["op."])
        assert report.passed, [c for c in report.checks if not c.passed]
        assert report.tolerance == pytest.approx(1e-6)

    def test_ops_float32(self):
        """Single-precision analytic gradients agree with float64 differences"""
        report = run_gradcheck(seed=0, seeds=2, dtype="float32", only=["op.", "loss.kl", "loss.prior"])
        assert report.passed, [c for c in report.checks if not c.passed]

    def test_networks_and_losses_float64(self):
        """Networks and assembled losses pass in double precision"""
        report = run_gradcheck(seed=1, seeds=1, dtype="float64", only=["net.", "loss.d_loss", "loss.g_loss"])
        assert report.passed, [c for c in report.checks if not c.passed]
        assert len(report.checks) == 3 + 4 + 4

    def test_rejects_unknown_dtype(self):
        """Only float32 and float64 are supported"""
        with pytest.raises(ValueError):
            run_gradcheck(seeds=1, dtype="float16")


class TestParallelSamples:
    """Test threaded latent-sample evaluation"""

    def test_threaded_matches_serial(self, rng):
        """Forked tapes merged in index order give identical gradients"""
        base = rng.normal((4, 3), dtype=np.float64)
        weights = [rng.normal((4, 3), dtype=np.float64) for _ in range(3)]

        def run(threads):
            x = Tensor(base, requires_grad=True)
            with Tape() as tape:
                parts = map_samples(
                    lambda k: F.sum_all(F.mul(F.tanh(x), Tensor(weights[k]))), len(weights), threads
                )
                loss = F.add_all(parts)
            return loss.item(), tape.backward(loss)[x.node_id].data

        serial_loss, serial_grad = run(1)
        threaded_loss, threaded_grad = run(3)
        assert serial_loss == threaded_loss
        assert np.array_equal(serial_grad, threaded_grad)

    def test_results_in_index_order(self):
        """Results come back in sample order"""
        assert map_samples(lambda k: k * k, 5, threads=3) == [0, 1, 4, 9, 16]
