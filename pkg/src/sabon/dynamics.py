"""Dynamical systems on the circle and the 2-torus.

Three invertible maps are supported:

* a rigid circle rotation ``theta -> theta + alpha (mod 2*pi)``,
* a nonlinear perturbation of Arnold's cat map on the unit torus,
* the same perturbed map conjugated by a smooth torus diffeomorphism.

State points are stored reduced to the fundamental domain: ``[0, 2*pi)``
for the circle angle, ``[0, 1)`` per coordinate on the torus.  All
operations are vectorised over arrays of points with a trailing
coordinate axis, shape ``(..., d')`` with ``d'`` 1 or 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

# Arnold's cat matrix and its (unimodular) inverse.
CAT = np.array([[2.0, 1.0], [1.0, 1.0]])
CAT_INV = np.array([[1.0, -1.0], [-1.0, 2.0]])


class NonConvergence(RuntimeError):
    """Newton iteration failed to reach the requested tolerance."""


@dataclass(frozen=True)
class CircleRotation:
    """Rotation of the circle by ``alpha`` radians."""

    alpha: float = -1.0

    @property
    def dim(self):
        return 1

    @property
    def period(self):
        return TWO_PI

    def label(self):
        return f"circle_rotation(alpha={self.alpha})"


@dataclass(frozen=True)
class PerturbedCat:
    """Nonlinearly perturbed cat map on the unit 2-torus.

    T(x, y) = (2x + y + 2*delta*cos(2*pi*x), x + y + delta*sin(4*pi*y + 1)) mod 1.
    Remains Anosov for small ``delta``; area preserving only at delta = 0.
    """

    delta: float = 0.01

    @property
    def dim(self):
        return 2

    @property
    def period(self):
        return 1.0

    def label(self):
        return f"perturbed_cat(delta={self.delta})"


@dataclass(frozen=True)
class ConjugatedCat:
    """Perturbed cat map conjugated by F(x,y) = (x - a sin(2 pi x), y + b sin(2 pi y + pi/4)).

    The conjugated map is F^{-1} o T o F with T the perturbed cat map.
    Both components of F are strictly monotone for ``a, b < 1/(2*pi)``,
    so F is invertible componentwise.
    """

    delta: float = 0.01
    a: float = 0.1
    b: float = 0.1

    def __post_init__(self):
        if not (abs(self.a) < 1.0 / TWO_PI and abs(self.b) < 1.0 / TWO_PI):
            raise ValueError("conjugacy amplitudes must satisfy |a|, |b| < 1/(2*pi)")

    @property
    def dim(self):
        return 2

    @property
    def period(self):
        return 1.0

    @property
    def base_map(self):
        return PerturbedCat(self.delta)

    def label(self):
        return f"conjugated_cat(delta={self.delta},a={self.a},b={self.b})"


MapDescriptor = CircleRotation | PerturbedCat | ConjugatedCat


def reduce_state(x, period):
    """Reduce coordinates to the half-open fundamental domain [0, period)."""
    return np.mod(x, period)


def _as_points(x, dim):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and dim == 1:
        # allow bare angle arrays for the circle
        x = x[:, None]
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != dim:
        raise ValueError(f"expected trailing axis of size {dim}, got shape {x.shape}")
    return x


def _perturbed_cat_raw(delta, x):
    """Lifted (un-reduced) perturbed cat map on R^2."""
    u, v = x[..., 0], x[..., 1]
    return np.stack(
        [
            2.0 * u + v + 2.0 * delta * np.cos(TWO_PI * u),
            u + v + delta * np.sin(4.0 * np.pi * v + 1.0),
        ],
        axis=-1,
    )


def _perturbed_cat_jacobian(delta, x):
    """Jacobian matrices of the perturbed cat map, shape (..., 2, 2)."""
    u, v = x[..., 0], x[..., 1]
    j = np.empty(x.shape[:-1] + (2, 2))
    j[..., 0, 0] = 2.0 - 4.0 * np.pi * delta * np.sin(TWO_PI * u)
    j[..., 0, 1] = 1.0
    j[..., 1, 0] = 1.0
    j[..., 1, 1] = 1.0 + 4.0 * np.pi * delta * np.cos(4.0 * np.pi * v + 1.0)
    return j


def conjugacy_forward(desc, z):
    """F(z) for the conjugated map, reduced mod 1."""
    z = _as_points(z, 2)
    u, v = z[..., 0], z[..., 1]
    out = np.stack(
        [
            u - desc.a * np.sin(TWO_PI * u),
            v + desc.b * np.sin(TWO_PI * v + np.pi / 4.0),
        ],
        axis=-1,
    )
    return reduce_state(out, 1.0)


def _newton_scalar_monotone(f, fprime, target, seed, tol, max_iter):
    """Solve f(x) = target componentwise for strictly monotone scalar f."""
    x = np.array(seed, dtype=float)
    for _ in range(max_iter):
        r = f(x) - target
        if np.max(np.abs(r)) <= tol:
            return x
        x = x - r / fprime(x)
    r = f(x) - target
    if np.max(np.abs(r)) <= tol:
        return x
    raise NonConvergence(
        f"scalar Newton stalled at residual {np.max(np.abs(r)):.3e} (tol {tol:.1e})"
    )


def conjugacy_inverse(desc, w, tol=1e-14, max_iter=60):
    """F^{-1}(w), solved componentwise by 1D Newton on the lift.

    Each lifted component of F is strictly increasing (derivative bounded
    below by 1 - 2*pi*max(a,b) > 0), so the root is unique and Newton
    seeded at the target converges quadratically.
    """
    w = _as_points(w, 2)
    u, v = w[..., 0], w[..., 1]
    a, b = desc.a, desc.b
    x = _newton_scalar_monotone(
        lambda t: t - a * np.sin(TWO_PI * t),
        lambda t: 1.0 - TWO_PI * a * np.cos(TWO_PI * t),
        u,
        u.copy(),
        tol,
        max_iter,
    )
    y = _newton_scalar_monotone(
        lambda t: t + b * np.sin(TWO_PI * t + np.pi / 4.0),
        lambda t: 1.0 + TWO_PI * b * np.cos(TWO_PI * t + np.pi / 4.0),
        v,
        v.copy(),
        tol,
        max_iter,
    )
    return reduce_state(np.stack([x, y], axis=-1), 1.0)


def conjugacy_jacobian_det(desc, z):
    """|det DF(z)| for the (diagonal-Jacobian) conjugacy."""
    z = _as_points(z, 2)
    u, v = z[..., 0], z[..., 1]
    du = 1.0 - TWO_PI * desc.a * np.cos(TWO_PI * u)
    dv = 1.0 + TWO_PI * desc.b * np.cos(TWO_PI * v + np.pi / 4.0)
    return np.abs(du * dv)


def forward_map(desc, x):
    """Apply T once; result reduced to the fundamental domain."""
    if isinstance(desc, CircleRotation):
        x = _as_points(x, 1)
        return reduce_state(x + desc.alpha, TWO_PI)
    if isinstance(desc, PerturbedCat):
        x = _as_points(x, 2)
        return reduce_state(_perturbed_cat_raw(desc.delta, x), 1.0)
    if isinstance(desc, ConjugatedCat):
        x = _as_points(x, 2)
        return conjugacy_inverse(desc, forward_map(desc.base_map, conjugacy_forward(desc, x)))
    raise TypeError(f"unknown map descriptor {desc!r}")


def _perturbed_cat_inverse(delta, y, tol, max_iter):
    """Invert the perturbed cat map by Newton on the lift.

    Seeded at the linear cat map's inverse; the residual is wrapped to the
    nearest integer translate, which selects the unique torus preimage for
    small perturbations.
    """
    x = reduce_state(y @ CAT_INV.T, 1.0)
    for it in range(max_iter):
        r = _perturbed_cat_raw(delta, x) - y
        r -= np.round(r)
        if np.max(np.abs(r)) <= tol:
            return reduce_state(x, 1.0)
        jac = _perturbed_cat_jacobian(delta, x)
        x = x - np.linalg.solve(jac, r[..., None])[..., 0]
    r = _perturbed_cat_raw(delta, x) - y
    r -= np.round(r)
    if np.max(np.abs(r)) <= tol:
        return reduce_state(x, 1.0)
    raise NonConvergence(
        f"cat-map Newton stalled at residual {np.max(np.abs(r)):.3e} (tol {tol:.1e})"
    )


def inverse_map(desc, y, tol=1e-12, max_iter=50):
    """Return x with T(x) = y on the torus/circle metric, within ``tol``."""
    if isinstance(desc, CircleRotation):
        y = _as_points(y, 1)
        return reduce_state(y - desc.alpha, TWO_PI)
    if isinstance(desc, PerturbedCat):
        y = _as_points(y, 2)
        return _perturbed_cat_inverse(desc.delta, y, tol, max_iter)
    if isinstance(desc, ConjugatedCat):
        y = _as_points(y, 2)
        inner = inverse_map(desc.base_map, conjugacy_forward(desc, y), tol, max_iter)
        return conjugacy_inverse(desc, inner)
    raise TypeError(f"unknown map descriptor {desc!r}")


def jacobian_det(desc, x):
    """|det DT(x)|, closed form for every map."""
    if isinstance(desc, CircleRotation):
        x = _as_points(x, 1)
        return np.ones(x.shape[:-1])
    if isinstance(desc, PerturbedCat):
        x = _as_points(x, 2)
        jac = _perturbed_cat_jacobian(desc.delta, x)
        return np.abs(jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0])
    if isinstance(desc, ConjugatedCat):
        # chain rule through the conjugacy:
        # |det DT_conj(z)| = |det DT(F z)| |det DF(z)| / |det DF(T_conj z)|
        x = _as_points(x, 2)
        fz = conjugacy_forward(desc, x)
        tconj = forward_map(desc, x)
        return (
            jacobian_det(desc.base_map, fz)
            * conjugacy_jacobian_det(desc, x)
            / conjugacy_jacobian_det(desc, tconj)
        )
    raise TypeError(f"unknown map descriptor {desc!r}")


def inverse_orbit_weight(desc, y, k, tol=1e-12, max_iter=50):
    """Backward orbit point and accumulated determinant weight.

    Returns ``(T^{-k}(y), w)`` with ``w = prod_{j=1..k} |det DT(T^{-j} y)|``,
    so that the k-step transfer action is ``f(T^{-k} y) / w``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = y
    w = None
    for _ in range(k):
        x = inverse_map(desc, x, tol=tol, max_iter=max_iter)
        d = jacobian_det(desc, x)
        w = d if w is None else w * d
    return x, w


def embed_state(x):
    """Embed points into ambient Euclidean coordinates.

    Circle angles map to ``(cos t, sin t)``; torus points map to
    ``(cos 2pi x, sin 2pi x, cos 2pi y, sin 2pi y)``.  The intrinsic
    dimension is inferred from the trailing axis.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[-1] == 1:
        t = x[..., 0]
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    if x.shape[-1] == 2:
        u = TWO_PI * x[..., 0]
        v = TWO_PI * x[..., 1]
        return np.stack([np.cos(u), np.sin(u), np.cos(v), np.sin(v)], axis=-1)
    raise ValueError(f"expected 1 or 2 coordinates, got shape {x.shape}")


def torus_distance(x, y, period=1.0):
    """Max-norm distance on the periodic domain."""
    d = np.abs(np.asarray(x) - np.asarray(y))
    d = np.minimum(d, period - d)
    return np.max(d)
