"""KAN layers: matrices of learnable univariate spline edge functions.

A layer maps x in R^n_in to y in R^n_out through one spline per (output,
input) edge; node outputs are bare sums of edge outputs (no bias, no fixed
activation). Each edge spline is a linear combination of the shared
B-spline basis from :mod:`kan_ausculta.splines`, so the layer's learnable
state is a single coefficient tensor of shape (n_out, n_in, n_basis).

An optional residual "base branch" (a linear map of silu(x), found in some
public KAN variants) is supported behind a flag but disabled by default;
the plain configuration is pure-spline.

Forward/backward are vectorized: ``x`` may be a single vector (n_in,) or a
batch (B, n_in). Gradients are exact; see ``kan_backward``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .splines import KnotVector, bspline_basis

__all__ = [
    "EdgeFunction",
    "KanLayer",
    "KanNetwork",
    "KanCache",
    "KanLayerGrads",
    "SplineCurve",
    "SplineDump",
    "kan_init",
    "kan_forward",
    "kan_backward",
    "kan_network_init",
    "network_forward",
    "network_backward",
    "export_splines",
]


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _silu(x):
    return x * _sigmoid(x)


def _silu_grad(x):
    s = _sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


class EdgeFunction:
    """Read-only view of one learnable univariate edge spline."""

    def __init__(self, coefficients: np.ndarray, grid: KnotVector):
        if coefficients.shape != (grid.n_basis,):
            raise ShapeError(
                f"edge needs {grid.n_basis} coefficients, got {coefficients.shape}"
            )
        self.coefficients = coefficients
        self.grid = grid

    def __call__(self, x):
        return bspline_basis(x, self.grid) @ self.coefficients


@dataclass
class KanLayer:
    """One KAN layer: coefficient tensor (n_out, n_in, n_basis) over a shared grid."""

    coeffs: np.ndarray
    grid: KnotVector
    base_weight: np.ndarray | None = None  # optional (n_out, n_in) residual branch

    @property
    def n_out(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_in(self) -> int:
        return self.coeffs.shape[1]

    def edge(self, i: int, j: int) -> EdgeFunction:
        return EdgeFunction(self.coeffs[i, j], self.grid)


@dataclass
class KanNetwork:
    """A chain of KAN layers with matching inner dimensions."""

    layers: list[KanLayer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(
                    f"layer dims do not chain: {a.n_out} -> {b.n_in}"
                )

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def coefficient_count(self) -> int:
        return sum(layer.coeffs.size for layer in self.layers)


@dataclass
class KanCache:
    """Per-edge basis values retained by a forward pass for the backward pass."""

    x: np.ndarray
    basis: np.ndarray  # x.shape + (n_basis,)


@dataclass
class KanLayerGrads:
    coeffs: np.ndarray
    base_weight: np.ndarray | None = None


def kan_init(
    n_in: int,
    n_out: int,
    grid: KnotVector,
    scale: float | None = None,
    rng: np.random.Generator | None = None,
    base_branch: bool = False,
) -> KanLayer:
    """Create a layer with coefficients i.i.d. uniform in [-scale, scale].

    ``scale`` defaults to 0.1/sqrt(n_in), which keeps node outputs inside
    the spline domain for standardized inputs. Deterministic given the rng.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"dimensions must be positive, got ({n_in}, {n_out})")
    if rng is None:
        rng = np.random.default_rng()
    if scale is None:
        scale = 0.1 / np.sqrt(n_in)
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    coeffs = rng.uniform(-scale, scale, size=(n_out, n_in, grid.n_basis))
    base = None
    if base_branch:
        bound = 1.0 / np.sqrt(n_in)
        base = rng.uniform(-bound, bound, size=(n_out, n_in))
    return KanLayer(coeffs=coeffs, grid=grid, base_weight=base)


def kan_forward(layer: KanLayer, x) -> tuple[np.ndarray, KanCache]:
    """y_i = sum_j sum_k c[i,j,k] * B_k(x_j), for single vectors or batches."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != layer.n_in:
        raise ShapeError(f"expected input width {layer.n_in}, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("kan_forward requires finite inputs")
    basis = bspline_basis(x, layer.grid)  # (..., n_in, n_basis)
    y = np.einsum("...jk,ijk->...i", basis, layer.coeffs)
    if layer.base_weight is not None:
        y = y + _silu(x) @ layer.base_weight.T
    return y, KanCache(x=x, basis=basis)


def kan_backward(
    layer: KanLayer, x, cache: KanCache, upstream
) -> tuple[np.ndarray, KanLayerGrads]:
    """Exact gradients of the layer output.

    Returns ``(grad_x, grads)`` where ``grads.coeffs[i, j, k]`` is the
    derivative of ``sum(upstream * y)`` w.r.t. coefficient (i, j, k)
    (summed over the batch when batched) and ``grad_x`` matches ``x``.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if x.shape != cache.x.shape:
        raise ShapeError("x does not match the cached forward input")
    if upstream.shape[:-1] != x.shape[:-1] or upstream.shape[-1] != layer.n_out:
        raise ShapeError(
            f"upstream shape {upstream.shape} inconsistent with ({x.shape}, n_out={layer.n_out})"
        )
    # collapse any leading batch axes so the parameter reductions sum over them
    up2 = upstream.reshape(-1, layer.n_out)
    basis2 = cache.basis.reshape(-1, layer.n_in, layer.grid.n_basis)
    grad_coeffs = np.einsum("bi,bjk->ijk", up2, basis2)
    _, dbasis = bspline_basis(x, layer.grid, with_derivative=True)
    dbasis2 = dbasis.reshape(-1, layer.n_in, layer.grid.n_basis)
    grad_x = np.einsum("bi,ijk,bjk->bj", up2, layer.coeffs, dbasis2).reshape(x.shape)
    grad_base = None
    if layer.base_weight is not None:
        grad_base = up2.T @ _silu(x).reshape(-1, layer.n_in)
        grad_x = grad_x + (upstream @ layer.base_weight) * _silu_grad(x)
    return grad_x, KanLayerGrads(coeffs=grad_coeffs, base_weight=grad_base)


def kan_network_init(
    dims: list[int],
    grid: KnotVector,
    rng: np.random.Generator,
    scale: float | None = None,
    base_branch: bool = False,
) -> KanNetwork:
    """Initialize a chain of layers with widths ``dims[0] -> ... -> dims[-1]``."""
    if len(dims) < 2:
        raise ValueError("need at least input and output widths")
    layers = [
        kan_init(dims[i], dims[i + 1], grid, scale=scale, rng=rng, base_branch=base_branch)
        for i in range(len(dims) - 1)
    ]
    return KanNetwork(layers=layers)


def network_forward(net: KanNetwork, x) -> tuple[np.ndarray, list[KanCache]]:
    caches = []
    for layer in net.layers:
        x, cache = kan_forward(layer, x)
        caches.append(cache)
    return x, caches


def network_backward(
    net: KanNetwork, caches: list[KanCache], upstream
) -> tuple[np.ndarray, list[KanLayerGrads]]:
    if len(caches) != len(net.layers):
        raise ShapeError("cache list does not match the network depth")
    grads: list[KanLayerGrads] = [None] * len(net.layers)  # type: ignore[list-item]
    for idx in range(len(net.layers) - 1, -1, -1):
        upstream, grads[idx] = kan_backward(
            net.layers[idx], caches[idx].x, caches[idx], upstream
        )
    return upstream, grads


@dataclass
class SplineCurve:
    layer: int
    out_index: int
    in_index: int
    x: np.ndarray
    phi: np.ndarray


@dataclass
class SplineDump:
    """Sampled (x, phi(x)) polylines for every edge of a network."""

    curves: list[SplineCurve] = field(default_factory=list)


def export_splines(network: KanNetwork, samples_per_curve: int) -> SplineDump:
    """Sample every edge function over its grid domain for inspection/plotting."""
    if samples_per_curve < 2:
        raise ValueError(f"samples_per_curve must be >= 2, got {samples_per_curve}")
    dump = SplineDump()
    for layer_idx, layer in enumerate(network.layers):
        grid = layer.grid
        xs = np.linspace(grid.t_min, grid.t_max, samples_per_curve)
        basis = bspline_basis(xs, grid)  # (samples, n_basis)
        # phi values for all edges at once: (n_out, n_in, samples)
        phis = np.einsum("ijk,sk->ijs", layer.coeffs, basis)
        if layer.base_weight is not None:
            phis = phis + layer.base_weight[:, :, None] * _silu(xs)[None, None, :]
        for i in range(layer.n_out):
            for j in range(layer.n_in):
                dump.curves.append(
                    SplineCurve(
                        layer=layer_idx,
                        out_index=i,
                        in_index=j,
                        x=xs.copy(),
                        phi=phis[i, j].copy(),
                    )
                )
    return dump
