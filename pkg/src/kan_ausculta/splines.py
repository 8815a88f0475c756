"""Uniform B-spline knot grids and basis evaluation.

Every KAN edge function in this package is a linear combination of the
B-spline basis produced here. The basis is evaluated with the Cox-de Boor
recursion, vectorized over arbitrary input shapes, and supports analytic
first derivatives via the standard order-reduction formula.

Conventions:
- ``order`` is the polynomial degree (cubic splines => order 3).
- A grid with ``grid_size`` interior intervals on [t_min, t_max] carries
  ``order`` extra uniformly spaced knots beyond each end, so evaluation
  degrades gracefully (values decay to zero) instead of failing when an
  input strays outside the nominal domain.
- The basis count is ``grid_size + order``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["KnotVector", "make_uniform_grid", "bspline_basis"]


@dataclass(frozen=True)
class KnotVector:
    """An extended uniform knot grid for B-splines of a fixed order."""

    knots: np.ndarray  # shape (grid_size + 2*order + 1,), non-decreasing
    order: int
    grid_size: int
    t_min: float
    t_max: float

    @property
    def n_basis(self) -> int:
        """Number of basis functions supported by this grid."""
        return self.grid_size + self.order

    @property
    def spacing(self) -> float:
        return (self.t_max - self.t_min) / self.grid_size


def make_uniform_grid(t_min: float, t_max: float, grid_size: int, order: int) -> KnotVector:
    """Build a uniform knot grid on [t_min, t_max] with extension knots.

    The interior is split into ``grid_size`` equal intervals and ``order``
    extra knots are mirrored at the same spacing beyond each endpoint
    (uniform extension, not clamped repetition), giving
    ``grid_size + 2*order + 1`` knots and ``grid_size + order`` basis
    functions.
    """
    if not np.isfinite(t_min) or not np.isfinite(t_max) or t_min >= t_max:
        raise ValueError(f"degenerate domain [{t_min}, {t_max}]")
    if grid_size < 1:
        raise ValueError(f"grid_size must be >= 1, got {grid_size}")
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    h = (t_max - t_min) / grid_size
    knots = t_min + h * np.arange(-order, grid_size + order + 1, dtype=float)
    return KnotVector(
        knots=knots,
        order=int(order),
        grid_size=int(grid_size),
        t_min=float(t_min),
        t_max=float(t_max),
    )


def bspline_basis(x, kv: KnotVector, with_derivative: bool = False):
    """Evaluate all basis functions (and optionally derivatives) at ``x``.

    ``x`` may be a scalar or an array of any shape; the result appends one
    axis of length ``kv.n_basis``. Values are computed by the Cox-de Boor
    recursion; derivatives by the degree-(k-1) difference formula. At most
    ``order + 1`` entries are nonzero for any single input. Inputs outside
    the extended knot span simply evaluate to zero.

    Returns ``values`` or ``(values, derivatives)``.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("bspline_basis requires finite inputs")

    t = kv.knots
    k = kv.order
    xe = x[..., None]

    # Degree-0 indicators on every interval of the extended grid.
    b = ((xe >= t[:-1]) & (xe < t[1:])).astype(float)

    # Raise the degree up to k-1; uniform knots guarantee nonzero denominators.
    for d in range(1, k):
        left = (xe - t[: -(d + 1)]) / (t[d:-1] - t[: -(d + 1)])
        right = (t[d + 1 :] - xe) / (t[d + 1 :] - t[1:-d])
        b = left * b[..., :-1] + right * b[..., 1:]

    lower = b  # degree k-1 bases, needed for the derivative formula
    left = (xe - t[: -(k + 1)]) / (t[k:-1] - t[: -(k + 1)])
    right = (t[k + 1 :] - xe) / (t[k + 1 :] - t[1 : -k])
    values = left * lower[..., :-1] + right * lower[..., 1:]

    if not with_derivative:
        return values

    denom_left = t[k:-1] - t[: -(k + 1)]
    denom_right = t[k + 1 :] - t[1:-k]
    derivatives = k * (lower[..., :-1] / denom_left - lower[..., 1:] / denom_right)
    return values, derivatives
