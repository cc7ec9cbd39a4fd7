"""
Finite-difference gradient checking.
"""

from typing import Callable, List, Optional, Sequence

import numpy as np

from bcgn.services.tensor.functional import kink_trace
from bcgn.services.tensor.tensor import Tape, Tensor

TensorFn = Callable[[Tensor], Tensor]


def _same_sides(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def finite_diff_check(
    f: TensorFn,
    x: Tensor,
    eps: float = 1e-3,
    coords: Optional[Sequence[int]] = None,
    reference: Optional[TensorFn] = None,
) -> float:
    """
    Compare the tape gradient of a scalar function with central differences.

    Coordinates whose two evaluation points land on different sides of a kink (relu,
    leaky relu, abs, log clamp) have no meaningful central difference and
    are left out.

    The error is max_i |analytic_i - numeric_i| divided by the largest
    gradient magnitude seen on either side, so it is relative to the scale
    of the gradient rather than to each coordinate.

    Args:
        f: Deterministic scalar-valued tensor function
        x: Point at which to check
        eps: Central-difference step
        coords: Flat coordinate indices to check (all when None)
        reference: Optional higher-precision twin of ``f`` used for the
            numeric side; it receives ``x`` cast to float64

    Returns:
        Maximum relative error over the checked coordinates
    """
    with Tape() as tape:
        xt = Tensor(x.data.copy(), requires_grad=True, dtype=x.dtype)
        out = f(xt)
    grads = tape.backward(out)
    grad = grads.get(xt.node_id)
    analytic = (grad.data if grad is not None else np.zeros_like(x.data)).ravel()

    numeric_fn = reference or f
    base = x.data.astype(np.float64) if reference is not None else x.data.copy()
    flat = base.ravel()
    indices = range(flat.size) if coords is None else coords

    numeric_values, checked_values = [], []
    for idx in indices:
        original = flat[idx]
        flat[idx] = original + eps
        with kink_trace() as sides_plus:
            f_plus = numeric_fn(Tensor(base.copy(), dtype=base.dtype)).item()
        flat[idx] = original - eps
        with kink_trace() as sides_minus:
            f_minus = numeric_fn(Tensor(base.copy(), dtype=base.dtype)).item()
        flat[idx] = original
        if not _same_sides(sides_plus, sides_minus):
            continue
        numeric_values.append((f_plus - f_minus) / (2 * eps))
        checked_values.append(float(analytic[idx]))
    numeric = np.asarray(numeric_values, dtype=np.float64)
    checked = np.asarray(checked_values, dtype=np.float64)

    if numeric.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(numeric))), float(np.max(np.abs(checked))))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(checked - numeric)) / scale)
