"""
Exact finite-distribution analysis of the balanced adversarial criterion.

Each domain contributes a triple of distributions over K points: real data p,
generated fakes p̃ and reconstructions p̂, mixed with balance factor γ in the
ratio 1+γ : 1 : γ. All math is float64.

Array helpers (prefixed ``batch_``) work on stacked triples with the support
on the last axis; the public functions wrap them for single `DomainTriple`s.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from bcgn.core.errors import ConfigValidationError
from bcgn.services.tensor import Rng

MASS_TOLERANCE = 1e-12
MASS_MISMATCH_TOLERANCE = 1e-9
LOG2 = math.log(2.0)


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """Probability vector over K points."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise ConfigValidationError(f"a distribution needs a nonempty 1-D vector, got {probs.shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ConfigValidationError("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > MASS_TOLERANCE:
            raise ConfigValidationError(f"probabilities sum to {probs.sum()!r}, expected 1")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return int(self.probs.size)

    @classmethod
    def normalized(cls, weights: np.ndarray) -> "DiscreteDist":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / w.sum())


@dataclass(frozen=True, eq=False)
class DomainTriple:
    """Real, generated and reconstructed distributions of one domain."""

    real: DiscreteDist
    gen: DiscreteDist
    rec: DiscreteDist
    gamma: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma < 0:
            raise ConfigValidationError("gamma must be non-negative")
        if not len(self.real) == len(self.gen) == len(self.rec):
            raise ConfigValidationError(
                f"support sizes differ: {len(self.real)}, {len(self.gen)}, {len(self.rec)}"
            )

    def weighted(self) -> Tuple[np.ndarray, np.ndarray]:
        """(a, q) = ((1+γ)p, p̃ + γp̂)."""
        return (1.0 + self.gamma) * self.real.probs, self.gen.probs + self.gamma * self.rec.probs


# ---------------------------------------------------------------------------
# Array helpers
# ---------------------------------------------------------------------------


def batch_opt_d(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """a / (a + q) with 0/0 → 0."""
    total = a + q
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(total > 0, a / np.where(total > 0, total, 1.0), 0.0)
    return d


def _xlogy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """x·log(y) with 0·log(anything) = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, y, 1.0)), 0.0)


def batch_v_standard(a: np.ndarray, q: np.ndarray, d: np.ndarray) -> np.ndarray:
    return (_xlogy(a, d) + _xlogy(q, 1.0 - d)).sum(axis=-1)


def batch_v_ls(a: np.ndarray, q: np.ndarray, d: np.ndarray) -> np.ndarray:
    return (a * (d - 1.0) ** 2 + q * d**2).sum(axis=-1)


def batch_c_standard(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """max_D V for one domain: Σ a log(a/(a+q)) + q log(q/(a+q))."""
    return batch_v_standard(a, q, batch_opt_d(a, q))


def batch_c_ls(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """min_D V for one domain: Σ aq/(a+q)."""
    total = a + q
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, a * q / np.where(total > 0, total, 1.0), 0.0).sum(axis=-1)


def batch_kl(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(u > 0, u / np.where(v > 0, v, 1.0), 1.0)
    return _xlogy(u, ratio).sum(axis=-1)


def batch_jsd(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = 0.5 * (u + v)
    return 0.5 * batch_kl(u, m) + 0.5 * batch_kl(v, m)


def batch_f_div(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Σ v·f(u/v) for f(t) = 1/(1+t) − ½, i.e. Σ v²/(u+v) − ½Σv (0 where v = 0)."""
    total = u + v
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.where(total > 0, v * v / np.where(total > 0, total, 1.0), 0.0)
    return sq.sum(axis=-1) - 0.5 * v.sum(axis=-1)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def opt_d_standard(t: DomainTriple) -> np.ndarray:
    """Optimal discriminator D* = (1+γ)p / ((1+γ)p + p̃ + γp̂), 0 where all vanish."""
    return batch_opt_d(*t.weighted())


def opt_d_ls(t: DomainTriple) -> np.ndarray:
    """Least-squares optimal discriminator; the same closed form as the standard one."""
    return batch_opt_d(*t.weighted())


def v_standard(t: DomainTriple, d: np.ndarray) -> float:
    """Σ (1+γ)p log d + (p̃+γp̂) log(1−d) for d ∈ [0, 1]^K."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != t.real.probs.shape:
        raise ConfigValidationError(f"discriminator vector has shape {d.shape}, expected {t.real.probs.shape}")
    if np.any(d < 0) or np.any(d > 1):
        raise ConfigValidationError("standard discriminator values must lie in [0, 1]")
    return float(batch_v_standard(*t.weighted(), d))


def v_ls(t: DomainTriple, d: np.ndarray) -> float:
    """Σ (1+γ)p (d−1)² + (p̃+γp̂) d² for real-valued d."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != t.real.probs.shape:
        raise ConfigValidationError(f"discriminator vector has shape {d.shape}, expected {t.real.probs.shape}")
    if not np.all(np.isfinite(d)):
        raise ConfigValidationError("discriminator values must be finite")
    return float(batch_v_ls(*t.weighted(), d))


def _check_pair(ty: DomainTriple, tx: DomainTriple) -> None:
    if ty.gamma != tx.gamma:
        raise ConfigValidationError(f"both domains must share gamma ({ty.gamma} vs {tx.gamma})")


def c_of_g_standard(ty: DomainTriple, tx: DomainTriple) -> float:
    """Training criterion with both discriminators at their optimum (standard objective)."""
    _check_pair(ty, tx)
    return float(batch_c_standard(*ty.weighted()) + batch_c_standard(*tx.weighted()))


def c_of_g_ls(ty: DomainTriple, tx: DomainTriple) -> float:
    """Training criterion with both discriminators at their optimum (least squares)."""
    _check_pair(ty, tx)
    return float(batch_c_ls(*ty.weighted()) + batch_c_ls(*tx.weighted()))


def _nonneg(u: np.ndarray, name: str) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(u)) or np.any(u < 0):
        raise ConfigValidationError(f"{name} must be finite and non-negative")
    return u


def _equal_mass(u: np.ndarray, v: np.ndarray, op: str) -> None:
    if u.shape != v.shape:
        raise ConfigValidationError(f"{op}: shapes differ ({u.shape} vs {v.shape})")
    if abs(u.sum() - v.sum()) > MASS_MISMATCH_TOLERANCE:
        raise ConfigValidationError(f"{op}: masses differ ({u.sum()!r} vs {v.sum()!r})")


def kl(u: np.ndarray, v: np.ndarray) -> float:
    """
    Generalized KL Σ u log(u/v) for non-negative vectors, with 0·log 0 = 0.

    Raises:
        ConfigValidationError: If v vanishes where u does not
    """
    u, v = _nonneg(u, "u"), _nonneg(v, "v")
    if u.shape != v.shape:
        raise ConfigValidationError(f"kl: shapes differ ({u.shape} vs {v.shape})")
    if np.any((u > 0) & (v == 0)):
        raise ConfigValidationError("kl: u is not absolutely continuous with respect to v")
    return float(batch_kl(u, v))


def jsd(u: np.ndarray, v: np.ndarray) -> float:
    """Jensen–Shannon divergence of two equal-mass non-negative vectors."""
    u, v = _nonneg(u, "u"), _nonneg(v, "v")
    _equal_mass(u, v, "jsd")
    return float(batch_jsd(u, v))


def f_div(u: np.ndarray, v: np.ndarray) -> float:
    """
    f-divergence D_f(u‖v) = Σ v·f(u/v) with f(t) = 1/(1+t) − ½ for equal-mass
    vectors. Non-negative, zero iff u = v.
    """
    u, v = _nonneg(u, "u"), _nonneg(v, "v")
    _equal_mass(u, v, "f_div")
    return float(batch_f_div(u, v))


def random_dist(rng: Rng, k: int) -> DiscreteDist:
    """Dirichlet(1, …, 1) draw (normalized exponentials)."""
    weights = -np.log(1.0 - rng.uniform(k))
    return DiscreteDist.normalized(weights)


def equality_witness(gamma: float, k: int, rng: Rng) -> Tuple[DomainTriple, DomainTriple]:
    """Random triples with p = p̃ = p̂ on both domains (the global optimum)."""
    if k < 1:
        raise ConfigValidationError("k must be at least 1")
    p_y, p_x = random_dist(rng, k), random_dist(rng, k)
    return DomainTriple(p_y, p_y, p_y, gamma), DomainTriple(p_x, p_x, p_x, gamma)


def standard_minimum(gamma: float) -> float:
    """Global minimum −4(1+γ)log 2 of the standard criterion."""
    return -4.0 * (1.0 + gamma) * LOG2


def ls_equilibrium(gamma: float) -> float:
    """Value 1+γ of the least-squares criterion at equilibrium."""
    return 1.0 + gamma
