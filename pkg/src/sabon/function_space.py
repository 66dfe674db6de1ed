"""Grid discretisation, random trigonometric observables, and discrete norms.

Observables live on a fixed uniform grid over the state space and are
handled as vectors of point values.  Random trigonometric polynomials
provide the training class; the transfer operator acts on them exactly
through backward orbits of the dynamics.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .dynamics import TWO_PI, embed_state, forward_map, inverse_orbit_weight


class GridMismatch(ValueError):
    """Fields defined on different grids were combined."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid with left-endpoint nodes on the circle or torus.

    Circle (dim 1): angles ``2*pi*i/m``.  Torus (dim 2): points
    ``(i/m, j/m)`` enumerated row-major in ``i`` (so values reshape to
    ``(m, m)`` with the first axis the x index).
    """

    dim: int
    m: int
    points: np.ndarray = field(repr=False)
    embedded: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.m ** self.dim

    @property
    def period(self):
        return TWO_PI if self.dim == 1 else 1.0

    @property
    def key(self):
        return (self.dim, self.m)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.key == other.key

    def __hash__(self):
        return hash(self.key)


def build_grid(dim, m):
    """Uniform grid with ``m`` points per side (n = m for d'=1, m^2 for d'=2)."""
    if dim not in (1, 2):
        raise ValueError("dimension must be 1 or 2")
    if m < 2:
        raise ValueError("need at least 2 points per side")
    if dim == 1:
        points = (TWO_PI * np.arange(m) / m)[:, None]
    else:
        side = np.arange(m) / m
        xs, ys = np.meshgrid(side, side, indexing="ij")
        points = np.column_stack([xs.ravel(), ys.ravel()])
    return Grid(dim=dim, m=m, points=points, embedded=embed_state(points))


@dataclass(frozen=True)
class FieldSample:
    """An observable represented by its values on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.n,):
            raise GridMismatch(
                f"field has {self.values.shape} values for a grid of size {self.grid.n}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


@dataclass(frozen=True)
class TrigPoly:
    """Tensor-product trigonometric polynomial of maximum order K.

    Per dimension the dictionary is ``cos(k.)`` for k = 0..K followed by
    ``sin(k.)`` for k = 1..K (2K+1 entries), in units of the domain
    period: plain angles on the circle, ``2*pi*k*x`` on the unit torus.
    """

    dim: int
    order: int
    coeffs: np.ndarray = field(repr=False)

    @property
    def dictionary_size(self):
        return 2 * self.order + 1


def sample_trig_poly(rng, dim, order):
    """Draw all (2K+1)^d' coefficients i.i.d. uniform on [-1, 1]."""
    if order < 1:
        raise ValueError("order must be >= 1")
    shape = (2 * order + 1,) * dim
    return TrigPoly(dim=dim, order=order, coeffs=rng.uniform(-1.0, 1.0, size=shape))


def trig_dictionary(u, order):
    """Dictionary matrix [cos(0u) .. cos(Ku), sin(u) .. sin(Ku)] per point."""
    u = np.asarray(u, dtype=float)
    k = np.arange(order + 1)
    arg = u[:, None] * k[None, :]
    cols = [np.cos(arg), np.sin(arg[:, 1:])]
    return np.concatenate(cols, axis=1)


def eval_trig_poly(poly, x):
    """Exact evaluation of the tensor-product expansion at points x."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[-1] != poly.dim:
        raise ValueError(f"points have {x.shape[-1]} coords, poly has dim {poly.dim}")
    scale = 1.0 if poly.dim == 1 else TWO_PI
    if poly.dim == 1:
        d = trig_dictionary(scale * x[:, 0], poly.order)
        return d @ poly.coeffs
    d1 = trig_dictionary(scale * x[:, 0], poly.order)
    d2 = trig_dictionary(scale * x[:, 1], poly.order)
    return np.einsum("ip,pq,iq->i", d1, poly.coeffs, d2, optimize=True)


@functools.lru_cache(maxsize=32)
def grid_backward_orbit(desc, grid_key, k, tol=1e-12):
    """Cached backward orbit of a uniform grid: points and cumulative weights.

    Newton inversions dominate data-generation cost and depend only on the
    grid, so they are shared across all observables.  Returns a tuple of
    ``(points, weight)`` pairs for steps 1..k; arrays are set read-only.
    """
    grid = build_grid(*grid_key)
    out = []
    x = grid.points
    w = np.ones(grid.n)
    for _ in range(k):
        x = dynamics.inverse_map(desc, x, tol=tol)
        w = w * dynamics.jacobian_det(desc, x)
        x.setflags(write=False)
        wc = w.copy()
        wc.setflags(write=False)
        out.append((x, wc))
    return tuple(out)


def transfer_apply(desc, poly, grid, k=1):
    """Sample the k-step transfer action (L^k p)(x_i) = p(T^{-k} x_i) / w_i."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if desc.dim != grid.dim:
        raise GridMismatch("map and grid dimensions differ")
    if isinstance(desc, dynamics.CircleRotation):
        # unit determinant; the backward orbit is an exact rotation
        pts = np.mod(grid.points - k * desc.alpha, TWO_PI)
        return FieldSample(grid, eval_trig_poly(poly, pts))
    pts, w = grid_backward_orbit(desc, grid.key, k)[k - 1]
    return FieldSample(grid, eval_trig_poly(poly, pts) / w)


def koopman_apply(desc, poly, grid):
    """Sample the Koopman action p(T(x_i))."""
    if desc.dim != grid.dim:
        raise GridMismatch("map and grid dimensions differ")
    return FieldSample(grid, eval_trig_poly(poly, forward_map(desc, grid.points)))


def sample_poly_on_grid(poly, grid):
    return FieldSample(grid, eval_trig_poly(poly, grid.points))


def inner_product(u, v):
    """Discrete L2 pairing (1/n) sum_i u_i v_i."""
    if u.grid != v.grid:
        raise GridMismatch("fields live on different grids")
    return float(np.dot(u.values, v.values) / u.grid.n)


def discrete_norms(u):
    """Grid-quadrature norms: l2 = sqrt((1/n) sum u^2), l1 = (1/n) sum |u|."""
    n = u.grid.n
    return {
        "l2": float(np.sqrt(np.dot(u.values, u.values) / n)),
        "l1": float(np.sum(np.abs(u.values)) / n),
    }
