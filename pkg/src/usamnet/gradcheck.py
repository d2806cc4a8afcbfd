"""Central finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .errors import UsageError
from .tensor import Tensor, backward

# Relative size of evaluation noise in f; second differences below this are treated as zero.
NOISE_REL = 1e-10


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    excluded_kinks: list = field(default_factory=list)
    worst_index: Optional[int] = None

    def __float__(self) -> float:
        return self.max_rel_error


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(floor, abs(analytic) + abs(numeric))


def finite_diff_check(
    f: Callable[[], Tensor],
    x: Tensor,
    h: float = 1e-5,
    indices: Optional[Iterable[int]] = None,
    kink_tol: float = 0.1,
    floor: float = 1e-8,
) -> GradCheckResult:
    """Compare the analytic gradient of ``f`` w.r.t. ``x`` with central differences.

    ``f`` is a zero-argument closure that reads ``x.data`` and returns a scalar
    tensor; ``x`` is perturbed in place one coordinate at a time and restored.

    Coordinates with a kink (e.g. a leaky_relu input within ``h`` of 0) are
    excluded.  For a smooth function the second difference
    ``D(t) = f(x+t) - 2 f(x) + f(x-t)`` scales as ``t**2``, so ``D(h) = 4 D(h/2)``
    and ``D(h/2) = 4 D(h/4)`` up to higher-order terms; a kink inside the
    stencil breaks at least one of these relations.  A coordinate is excluded
    when either residual exceeds ``kink_tol`` times the larger second
    difference (plus an evaluation-noise floor).

    ``floor`` bounds the denominator of the relative error from below, so that
    coordinates whose true gradient is (nearly) zero are judged on absolute
    agreement instead of on the ratio of two rounding residues.
    """
    if x.dtype != np.float64:
        raise UsageError("finite_diff_check needs a 64-bit tensor (use float64_mode)")
    x.requires_grad = True
    x.grad = None
    loss = f()
    if loss.data.size != 1:
        raise UsageError(f"checked function must return a scalar, got shape {loss.shape}")
    backward(loss)
    analytic = (np.zeros_like(x.data) if x.grad is None else x.grad).reshape(-1)
    f0 = loss.item()

    flat = x.data.reshape(-1)
    coords = range(flat.size) if indices is None else indices

    def second_difference(i: int, orig: float, t: float) -> tuple:
        flat[i] = orig + t
        fp = f().item()
        flat[i] = orig - t
        fm = f().item()
        flat[i] = orig
        return fp - 2.0 * f0 + fm, fp, fm

    worst, worst_idx, checked, kinks = 0.0, None, 0, []
    for i in coords:
        i = int(i)
        orig = flat[i]
        d_h, fp, fm = second_difference(i, orig, h)
        d_h2, _, _ = second_difference(i, orig, h / 2)
        d_h4, _, _ = second_difference(i, orig, h / 4)
        noise = NOISE_REL * max(abs(f0), abs(fp), abs(fm))
        r1 = abs(d_h - 4.0 * d_h2)
        r2 = abs(d_h2 - 4.0 * d_h4)
        if r1 > kink_tol * abs(d_h) + 8 * noise or r2 > kink_tol * abs(d_h2) + 8 * noise:
            kinks.append(i)
            continue
        err = relative_error(float(analytic[i]), (fp - fm) / (2.0 * h), floor)
        checked += 1
        if err > worst:
            worst, worst_idx = err, i
    return GradCheckResult(worst, checked, kinks, worst_idx)
