"""
Finite-difference suite over every tensor op, the three networks and the
assembled training losses.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from bcgn.core.config import get_settings
from bcgn.schemas.config_schemas import (
    ArchConfig,
    LatentKind,
    Objective,
    ObjectiveVariant,
    TrainConfig,
)
from bcgn.schemas.report_schemas import CheckResult, GradcheckReport
from bcgn.services.nets import (
    ModelParams,
    discriminator_forward,
    encoder_forward,
    generator_forward,
    init_params,
    kl_loss,
)
from bcgn.services.tensor import Rng, Tensor, finite_diff_check
from bcgn.services.tensor import functional as F
from bcgn.services.training.posteriors import d_loss, g_loss, prior_penalty
from bcgn.services.training.trainer import sample_batch

logger = logging.getLogger(__name__)

TensorFn = Callable[[Tensor], Tensor]
Builder = Callable[[int, np.dtype], Tuple[TensorFn, Tensor]]

GRADCHECK_EPS = 1e-6
COORDS_PER_CASE = 16
TINY_ARCH = dict(channels=3, height=8, width=8, features=4, res_blocks=1, latent_channels=2)


@dataclass(frozen=True)
class GradCase:
    name: str
    build: Builder


def _draw(rng: Rng, shape: Tuple[int, ...], dtype: np.dtype, scale: float = 1.0, shift: float = 0.0) -> np.ndarray:
    # drawn in float64 so both precisions see the same point
    return (rng.normal(shape, dtype=np.float64) * scale + shift).astype(dtype)


def _t(data: np.ndarray) -> Tensor:
    return Tensor(data, dtype=data.dtype)


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return F.sum_all(F.mul(out, _t(weights.astype(out.dtype))))


def _unary_case(kind: str, shift: float = 0.0) -> GradCase:
    def build(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "unary", kind)
        x = _draw(rng, (2, 3, 4), dtype, shift=shift)
        if kind == "log":
            x = np.abs(x) + 0.5
        w = _draw(rng, (2, 3, 4), dtype)
        return (lambda t: _weighted_sum(F.elementwise(kind, t), w)), _t(x)

    return GradCase(f"op.{kind}", build)


def _binary_case(kind: str, other_shape: Tuple[int, ...]) -> GradCase:
    def build(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "binary", kind, len(other_shape))
        x = _draw(rng, (2, 3, 4), dtype)
        b = _t(_draw(rng, other_shape, dtype))
        return (lambda t: F.sum_all(F.square(F.elementwise(kind, t, b)))), _t(x)

    suffix = "x".join(map(str, other_shape)) or "scalar"
    return GradCase(f"op.{kind}[{suffix}]", build)


def _op_cases() -> List[GradCase]:
    cases = [_unary_case(kind) for kind in ("relu", "leaky_relu", "tanh", "sigmoid", "exp", "square", "abs")]
    cases.append(_unary_case("log"))
    for kind in ("add", "sub", "mul"):
        cases += [_binary_case(kind, (2, 3, 4)), _binary_case(kind, (1, 3, 4)), _binary_case(kind, ())]

    def matmul(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "matmul")
        a = _t(_draw(rng, (3, 4), dtype))
        return (lambda t: F.sum_all(F.square(F.matmul(a, t)))), _t(_draw(rng, (4, 5), dtype))

    def conv_input(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "conv_input")
        k = _t(_draw(rng, (4, 3, 3, 3), dtype, 0.3))
        w = _draw(rng, (2, 4, 6, 6), dtype)
        return (lambda t: _weighted_sum(F.conv2d(t, k, 1, 1), w)), _t(_draw(rng, (2, 3, 6, 6), dtype))

    def conv_kernel(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "conv_kernel")
        x = _t(_draw(rng, (2, 3, 8, 8), dtype))
        w = _draw(rng, (2, 4, 4, 4), dtype)
        return (lambda t: _weighted_sum(F.conv2d(x, t, 2, 1), w)), _t(_draw(rng, (4, 3, 4, 4), dtype, 0.3))

    def convt_input(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "convt_input")
        k = _t(_draw(rng, (4, 3, 4, 4), dtype, 0.3))
        w = _draw(rng, (2, 3, 8, 8), dtype)
        return (lambda t: _weighted_sum(F.conv_transpose2d(t, k, 2, 1), w)), _t(_draw(rng, (2, 4, 4, 4), dtype))

    def convt_kernel(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "convt_kernel")
        y = _t(_draw(rng, (2, 4, 4, 4), dtype))
        w = _draw(rng, (2, 3, 8, 8), dtype)
        return (lambda t: _weighted_sum(F.conv_transpose2d(y, t, 2, 1), w)), _t(_draw(rng, (4, 3, 4, 4), dtype, 0.3))

    def add_bias(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "add_bias")
        x = _t(_draw(rng, (2, 3, 4, 4), dtype))
        return (lambda t: F.sum_all(F.square(F.add_bias(x, t)))), _t(_draw(rng, (3,), dtype))

    def instance_norm(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "instance_norm")
        w = _draw(rng, (2, 3, 4, 4), dtype)
        return (lambda t: _weighted_sum(F.instance_norm(t), w)), _t(_draw(rng, (2, 3, 4, 4), dtype))

    def channels(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "channels")
        other = _t(_draw(rng, (1, 2, 4, 4), dtype))
        w = _draw(rng, (3, 3, 4, 4), dtype)

        def f(t: Tensor) -> Tensor:
            joined = F.concat_channels(F.repeat_batch(t, 3), F.repeat_batch(other, 3))
            return _weighted_sum(F.slice_channels(joined, 1, 4), w)

        return f, _t(_draw(rng, (1, 2, 4, 4), dtype))

    def reductions(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "reductions")
        target = _t(_draw(rng, (2, 3, 4, 4), dtype))
        w = _draw(rng, (2,), dtype)

        def f(t: Tensor) -> Tensor:
            total = F.add(F.l1_distance(t, target), F.mse(t, target))
            total = F.add(total, F.mean(F.square(t)))
            return F.add(total, _weighted_sum(F.item_mean(t), w))

        return f, _t(_draw(rng, (2, 3, 4, 4), dtype))

    def kl(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "kl")
        logvar = _t(_draw(rng, (2, 2, 2, 2), dtype, 0.5))
        return (lambda t: kl_loss(t, logvar)), _t(_draw(rng, (2, 2, 2, 2), dtype))

    def kl_logvar(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "kl_logvar")
        mu = _t(_draw(rng, (2, 2, 2, 2), dtype))
        return (lambda t: kl_loss(mu, t)), _t(_draw(rng, (2, 2, 2, 2), dtype, 0.5))

    def prior(norm: str) -> Builder:
        def build(seed: int, dtype: np.dtype):
            rng = Rng.derive(seed, "prior", norm)
            fixed = _t(_draw(rng, (3, 3), dtype))
            return (lambda t: prior_penalty([t, fixed], 0.1, norm)), _t(_draw(rng, (4, 2), dtype))

        return build

    cases += [
        GradCase("op.matmul", matmul),
        GradCase("op.conv2d.input", conv_input),
        GradCase("op.conv2d.kernel", conv_kernel),
        GradCase("op.conv_transpose2d.input", convt_input),
        GradCase("op.conv_transpose2d.kernel", convt_kernel),
        GradCase("op.add_bias", add_bias),
        GradCase("op.instance_norm", instance_norm),
        GradCase("op.channel_plumbing", channels),
        GradCase("op.reductions", reductions),
        GradCase("loss.kl.mu", kl),
        GradCase("loss.kl.logvar", kl_logvar),
        GradCase("loss.prior.l2", prior("l2")),
        GradCase("loss.prior.l1_squared", prior("l1_squared")),
    ]
    return cases


def _tiny_params(seed: int, dtype: np.dtype) -> ModelParams:
    arch = ArchConfig(**TINY_ARCH, dtype="float64")
    params = init_params(arch, Rng.derive(seed, "gradcheck", "params"))
    return ModelParams(**{group: p.astype(dtype) for group, p in params.groups().items()})


def _images(rng: Rng, batch: int, dtype: np.dtype) -> np.ndarray:
    shape = (batch, TINY_ARCH["channels"], TINY_ARCH["height"], TINY_ARCH["width"])
    return np.tanh(_draw(rng, shape, np.float64)).astype(dtype)


def _network_cases() -> List[GradCase]:
    def generator(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "net", "generator")
        g = _tiny_params(seed, dtype).theta_ga
        latent = _draw(rng, (2, 1, 8, 8), dtype)
        w = _draw(rng, (2, 3, 8, 8), dtype)

        def f(t: Tensor) -> Tensor:
            return _weighted_sum(generator_forward(g, F.concat_channels(t, _t(latent))), w)

        return f, _t(_images(rng, 2, dtype))

    def discriminator(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "net", "discriminator")
        d = _tiny_params(seed, dtype).theta_da
        w = _draw(rng, (2, 1, 1, 1), dtype)
        return (lambda t: _weighted_sum(discriminator_forward(d, t), w)), _t(_images(rng, 2, dtype))

    def encoder(seed: int, dtype: np.dtype):
        rng = Rng.derive(seed, "net", "encoder")
        e = _tiny_params(seed, dtype).theta_ea
        w = _draw(rng, (2, 1, 8, 8), dtype)

        def f(t: Tensor) -> Tensor:
            sfm, mu, logvar = encoder_forward(e, t, Rng.derive(seed, "net", "encoder", "eps"))
            return F.add(_weighted_sum(sfm, w), kl_loss(mu, logvar))

        return f, _t(_images(rng, 2, dtype))

    return [
        GradCase("net.generator", generator),
        GradCase("net.discriminator", discriminator),
        GradCase("net.encoder", encoder),
    ]


def _loss_cases() -> List[GradCase]:
    cases = []
    for variant in (ObjectiveVariant.STANDARD, ObjectiveVariant.LEAST_SQUARES):
        for gamma in (0.0, 0.5):
            obj = Objective(variant=variant, gamma=gamma)
            tag = f"{variant.value}[gamma={gamma}]"

            def d_case(seed: int, dtype: np.dtype, obj: Objective = obj):
                rng = Rng.derive(seed, "loss", "d", obj.variant.value, str(obj.gamma))
                params = _tiny_params(seed, dtype)
                real = _t(_images(rng, 2, dtype))
                fakes = [_t(_images(rng, 2, dtype)) for _ in range(2)]
                recons = [_t(_images(rng, 2, dtype)) for _ in range(2)]
                d = params.theta_da

                def f(t: Tensor) -> Tensor:
                    swapped = d.map(lambda name, v: t if name == "conv2.weight" else v)
                    return d_loss(obj, swapped, real, fakes, recons)

                return f, d["conv2.weight"]

            def g_case(seed: int, dtype: np.dtype, obj: Objective = obj):
                rng = Rng.derive(seed, "loss", "g", obj.variant.value, str(obj.gamma))
                params = _tiny_params(seed, dtype)
                cfg = TrainConfig(
                    m_x=2,
                    m_y=2,
                    batch_size=2,
                    latent_kind=LatentKind.SFM,
                    objective=obj,
                    arch=ArchConfig(**TINY_ARCH, dtype="float64"),
                )
                y = _t(_images(rng, 2, dtype))

                def f(t: Tensor) -> Tensor:
                    batch = sample_batch(params, t, y, cfg, Rng.derive(seed, "loss", "g", "latents"))
                    return g_loss(obj, params, batch)

                return f, _t(_images(rng, 2, dtype))

            cases.append(GradCase(f"loss.d_loss.{tag}", d_case))
            cases.append(GradCase(f"loss.g_loss.{tag}", g_case))
    return cases


def all_cases() -> List[GradCase]:
    return _op_cases() + _network_cases() + _loss_cases()


def run_gradcheck(
    seed: int = 0,
    seeds: int = 20,
    dtype: str = "float32",
    tolerance: Optional[float] = None,
    eps: float = GRADCHECK_EPS,
    only: Optional[Sequence[str]] = None,
) -> GradcheckReport:
    """
    Run every case for ``seeds`` consecutive seeds.

    Float32 cases are compared against central differences of their float64
    twin; float64 cases against themselves.

    Args:
        seed: First seed
        seeds: Number of seeds per case
        dtype: "float32" or "float64"
        tolerance: Maximum relative error (defaults to the configured tolerance)
        eps: Central-difference step
        only: Optional case-name prefixes to restrict the run

    Returns:
        GradcheckReport with the worst error per case
    """
    settings = get_settings()
    np_dtype = np.dtype(dtype)
    if np_dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"dtype must be float32 or float64, got {dtype}")
    if tolerance is None:
        tolerance = (
            settings.gradcheck_tolerance_f64
            if np_dtype == np.float64
            else settings.gradcheck_tolerance_f32
        )

    cases = all_cases()
    if only:
        cases = [case for case in cases if any(case.name.startswith(prefix) for prefix in only)]

    worst: Dict[str, float] = {}
    for case in cases:
        errors = []
        for s in range(seed, seed + seeds):
            f, x = case.build(s, np_dtype)
            reference = case.build(s, np.dtype(np.float64))[0] if np_dtype == np.float32 else None
            coords = Rng.derive(s, "coords", case.name).choice(x.size, min(COORDS_PER_CASE, x.size))
            errors.append(finite_diff_check(f, x, eps=eps, coords=coords, reference=reference))
        worst[case.name] = max(errors)
        logger.debug(f"gradcheck {case.name}: max rel err {worst[case.name]:.3e}")

    report = GradcheckReport(
        seed=seed,
        seeds=seeds,
        dtype=np_dtype.name,
        tolerance=tolerance,
        checks=[
            CheckResult(name=name, passed=err < tolerance, observed=err, bound=tolerance)
            for name, err in worst.items()
        ],
    )
    failed = [c.name for c in report.checks if not c.passed]
    logger.info(
        f"Gradient check ({np_dtype.name}, {seeds} seeds): {len(report.checks) - len(failed)}"
        f"/{len(report.checks)} cases passed" + (f"; failed: {', '.join(failed)}" if failed else "")
    )
    return report
