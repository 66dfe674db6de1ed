"""Deterministic Fourier-Galerkin reference pipeline.

Provides tensor-product Fourier bases of prescribed cardinality, Galerkin
projections of the true transfer operator computed by quadrature with
exact basis evaluation at backward-orbit points, a high-resolution
ground-truth invariant density obtained from a large complex-Fourier
Galerkin operator applied matrix-free, and the relative projection /
approximation error metrics used to compare bases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, net
from .function_space import FieldSample, build_grid, grid_backward_orbit
from .spectral import (
    fourier_coefficients,
    h_minus_one_norm,
    sobolev_weights,
)

TWO_PI = dynamics.TWO_PI


class IllConditionedGram(RuntimeError):
    """Basis Gram matrix too ill-conditioned for a reliable solve."""


class PowerIterationStall(RuntimeError):
    """Power iteration failed to settle the leading eigenvalue."""


def fourier_modes_1d(count):
    """Mode list for one dimension: constant, sin/cos pairs, optional top cosine.

    Odd counts use pairs up to order (count-1)/2; even counts additionally
    append a single cosine at the next order (the matching sine is omitted),
    e.g. 18 -> constant + pairs 1..8 + cos at order 9.
    """
    if count < 1:
        raise ValueError("need at least one mode")
    modes = [("cos", 0)]
    pairs = (count - 1) // 2
    for k in range(1, pairs + 1):
        modes.append(("cos", k))
        modes.append(("sin", k))
    if count % 2 == 0:
        modes.append(("cos", pairs + 1))
    return modes


def _mode_matrix(u, modes):
    """Sampled L2-normalised 1D modes: 1, sqrt(2) cos(k u), sqrt(2) sin(k u)."""
    cols = np.empty((u.shape[0], len(modes)))
    root2 = np.sqrt(2.0)
    for j, (kind, k) in enumerate(modes):
        if k == 0:
            cols[:, j] = 1.0
        elif kind == "cos":
            cols[:, j] = root2 * np.cos(k * u)
        else:
            cols[:, j] = root2 * np.sin(k * u)
    return cols


@dataclass(frozen=True)
class FourierBasis:
    """Real tensor-product Fourier basis, orthonormal in L2 of the domain."""

    dim: int
    per_dim: int

    @property
    def size(self):
        return self.per_dim ** self.dim

    @property
    def modes(self):
        return fourier_modes_1d(self.per_dim)

    def evaluate(self, points):
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        scale = 1.0 if self.dim == 1 else TWO_PI
        d1 = _mode_matrix(scale * points[:, 0], self.modes)
        if self.dim == 1:
            return d1
        d2 = _mode_matrix(scale * points[:, 1], self.modes)
        return (d1[:, :, None] * d2[:, None, :]).reshape(points.shape[0], self.size)

    def sample(self, grid):
        return self.evaluate(grid.points)


@dataclass(frozen=True)
class LearnedBasis:
    """Neural basis wrapper exposing exact evaluation at arbitrary points."""

    model: net.SabonModel

    @property
    def size(self):
        return self.model.config.n_basis

    def evaluate(self, points):
        embedded = dynamics.embed_state(np.asarray(points, dtype=float))
        encoder = net.EncoderParams(
            [w.astype(float) for w in self.model.encoder.weights],
            [b.astype(float) for b in self.model.encoder.biases],
        )
        return net.encoder_forward(encoder, embedded)

    def sample(self, grid):
        return self.evaluate(grid.points)


def build_fourier_basis(per_dim, grid):
    """Fourier basis matched to the grid's dimension, sampled lazily."""
    return FourierBasis(dim=grid.dim, per_dim=per_dim)


def galerkin_operator(desc, basis, quad_grid, chunk=20000):
    """Galerkin matrix of the transfer operator on the basis span.

    Entries B_{kj} = <L phi_j, phi_k> by quadrature on ``quad_grid`` with
    exact basis evaluation at the backward-orbit points (no interpolation).
    Returns M^{-1} B for non-orthonormal bases, B when the sampled Gram is
    the identity to round-off.
    """
    if desc.dim != quad_grid.dim:
        raise ValueError("map and quadrature grid dimensions differ")
    if isinstance(desc, dynamics.CircleRotation):
        inv_pts = np.mod(quad_grid.points - desc.alpha, quad_grid.period)
        weights = np.ones(quad_grid.n)
    else:
        inv_pts, weights = grid_backward_orbit(desc, quad_grid.key, 1)[0]
    size = basis.size
    some_complex = np.iscomplexobj(basis.evaluate(quad_grid.points[:2]))
    dtype = complex if some_complex else float
    b = np.zeros((size, size), dtype=dtype)
    m = np.zeros((size, size), dtype=dtype)
    n = quad_grid.n
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        phi = basis.evaluate(quad_grid.points[start:stop])
        psi = basis.evaluate(inv_pts[start:stop]) / weights[start:stop, None]
        b += phi.conj().T @ psi
        m += phi.conj().T @ phi
    b /= n
    m /= n
    if np.max(np.abs(m - np.eye(size))) <= 1e-9:
        return b
    cond = np.linalg.cond(m)
    if cond > 1e8:
        raise IllConditionedGram(f"cond(M) = {cond:.3e}")
    return np.linalg.solve(m, b)


def _phase_columns(u, modes):
    """Columns exp(2 pi i k u) for k in FFT order 0..m/2-1, -m/2..-1."""
    half = modes // 2
    pos = np.empty((u.shape[0], half + 1), dtype=complex)
    pos[:, 0] = 1.0
    base = np.exp(2j * np.pi * u)
    for k in range(1, half + 1):
        pos[:, k] = pos[:, k - 1] * base
    out = np.empty((u.shape[0], modes), dtype=complex)
    out[:, :half] = pos[:, :half]
    out[:, half:] = np.conj(pos[:, half:0:-1])
    return out


def evaluate_fourier_block(coeffs, points):
    """Evaluate a truncated 2D Fourier series (FFT-layout block) at points."""
    points = np.asarray(points, dtype=float)
    e1 = _phase_columns(points[:, 0], coeffs.shape[0])
    e2 = _phase_columns(points[:, 1], coeffs.shape[1])
    return np.einsum("ik,ik->i", e1, e2 @ coeffs.T)


class SpectralSeriesOperator:
    """Matrix-free action of the transfer operator on a truncated Fourier block.

    The iterate is a coefficient array over the centred ``modes x modes``
    frequency block (numpy FFT layout).  One application evaluates the
    series at the cached backward-orbit points of the oversampled
    quadrature grid, divides by the cached determinants, and projects back
    onto the block with a forward FFT.
    """

    def __init__(self, desc, modes=100, oversample=4):
        if desc.dim != 2:
            raise ValueError("series operator is defined on the torus")
        self.desc = desc
        self.modes = modes
        self.quad_m = oversample * modes
        inv_pts, self.weights = grid_backward_orbit(desc, (2, self.quad_m), 1)[0]
        self.e1 = _phase_columns(inv_pts[:, 0], modes)
        self.e2 = _phase_columns(inv_pts[:, 1], modes)
        half = modes // 2
        self.block = np.concatenate(
            [np.arange(0, half), np.arange(self.quad_m - half, self.quad_m)]
        )

    def evaluate_series(self, coeffs, points=None):
        """Evaluate the truncated series; defaults to the cached orbit points."""
        if points is not None:
            return evaluate_fourier_block(coeffs, points)
        inner = self.e2 @ coeffs.T
        return np.einsum("ik,ik->i", self.e1, inner)

    def apply(self, coeffs):
        values = self.evaluate_series(coeffs).real / self.weights
        grid_vals = values.reshape(self.quad_m, self.quad_m)
        full = np.fft.fft2(grid_vals) / (self.quad_m ** 2)
        return full[np.ix_(self.block, self.block)]


@dataclass
class SRBGroundTruth:
    """Leading invariant density from the high-resolution Galerkin operator."""

    grid: object
    values: np.ndarray
    coeffs: np.ndarray
    eigenvalue: float
    map_label: str
    modes: int
    quad_m: int

    @property
    def field(self):
        return FieldSample(self.grid, self.values)

    def evaluate(self, points):
        """Exact series evaluation of the density at arbitrary points."""
        return evaluate_fourier_block(self.coeffs, points).real


def ground_truth_srb(desc, modes=100, oversample=4, analysis_m=100, tol=1e-10, max_iter=5000):
    """Invariant density of the truncated transfer operator by power iteration.

    Matrix-free equivalent of assembling the dense ``modes^2`` Galerkin
    matrix via FFT quadrature and taking its leading eigenvector.  The
    result is synthesised on the analysis grid, L1-normalised with
    positive mean.
    """
    op = SpectralSeriesOperator(desc, modes=modes, oversample=oversample)
    c = np.zeros((modes, modes), dtype=complex)
    c[0, 0] = 1.0
    eig_prev = None
    eigenvalue = None
    for _ in range(max_iter):
        c_new = op.apply(c)
        eigenvalue = complex(np.vdot(c, c_new) / np.vdot(c, c))
        c = c_new / np.sqrt(np.sum(np.abs(c_new) ** 2))
        if eig_prev is not None and abs(eigenvalue - eig_prev) <= tol * abs(eigenvalue):
            break
        eig_prev = eigenvalue
    else:
        raise PowerIterationStall(
            f"eigenvalue change above {tol:.1e} after {max_iter} iterations"
        )
    grid = build_grid(2, analysis_m)
    if analysis_m == modes:
        values = (np.fft.ifft2(c) * modes ** 2).real
    else:
        values = op.evaluate_series(c, grid.points).real
    scale = np.sum(np.abs(values)) / grid.n
    sign = 1.0 if values.mean() >= 0 else -1.0
    values = sign * values / scale
    return SRBGroundTruth(
        grid=grid,
        values=values.reshape(-1),
        coeffs=sign * c / scale,
        eigenvalue=float(eigenvalue.real),
        map_label=desc.label(),
        modes=modes,
        quad_m=op.quad_m,
    )


@dataclass
class ErrorPair:
    l2: float
    h_minus_one: float


@dataclass
class ApproximationResult:
    errors: ErrorPair
    eigenvalue: float
    density: np.ndarray


def _l2_projection(basis_matrix, target):
    n = basis_matrix.shape[0]
    gram = basis_matrix.T @ basis_matrix / n
    rhs = basis_matrix.T @ target / n
    cond = np.linalg.cond(gram)
    if cond > 1e8:
        raise IllConditionedGram(f"cond(M) = {cond:.3e}")
    return np.linalg.solve(gram, rhs)


def _h1_gram_solve(basis_matrix, target, grid):
    weights = sobolev_weights(grid).reshape(-1)
    n = basis_matrix.shape[0]
    m = grid.m
    if grid.dim == 1:
        hats = np.fft.fft(basis_matrix, axis=0) / m
        target_hat = np.fft.fft(target) / m
    else:
        cols = basis_matrix.T.reshape(-1, m, m)
        hats = np.fft.fft2(cols).reshape(-1, n).T / n
        target_hat = np.fft.fft2(target.reshape(m, m)).reshape(-1) / n
    weighted = hats * weights[:, None]
    gram = np.real(weighted.conj().T @ hats)
    rhs = np.real(weighted.conj().T @ target_hat)
    try:
        factor = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(gram) / gram.shape[0]
        factor = np.linalg.cholesky(gram + jitter * np.eye(gram.shape[0]))
    coeffs = np.linalg.solve(factor.T, np.linalg.solve(factor, rhs))
    return coeffs


def projection_errors(mu, basis):
    """Relative L2 and H^{-1} errors of the best-in-norm basis representation.

    The L2 projection solves the normal equations with the discrete Gram;
    the H^{-1} projection is orthogonal in the (1+|k|^2)^{-1}-weighted
    Fourier inner product, assembled by FFT of each basis function.
    """
    grid, target = mu.grid, mu.values
    basis_matrix = basis.sample(grid) if hasattr(basis, "sample") else np.asarray(basis)
    coeffs = _l2_projection(basis_matrix, target)
    resid = target - basis_matrix @ coeffs
    l2 = float(np.linalg.norm(resid) / np.linalg.norm(target))
    coeffs_h = _h1_gram_solve(basis_matrix, target, grid)
    resid_h = target - basis_matrix @ coeffs_h
    h1 = h_minus_one_norm(FieldSample(grid, resid_h)) / h_minus_one_norm(
        FieldSample(grid, target)
    )
    return ErrorPair(l2=l2, h_minus_one=float(h1))


def approximation_errors(mu, basis, desc, quad_grid=None):
    """Errors of the invariant density estimated inside the basis span.

    The estimate is the leading eigenvector of the Galerkin operator on the
    span, reconstructed on the analysis grid and L1-normalised with
    positive mean, compared against the ground truth in both norms.
    """
    grid = mu.grid
    if quad_grid is None:
        quad_grid = build_grid(2, mu.quad_m)
    operator = galerkin_operator(desc, basis, quad_grid)
    values, vectors = np.linalg.eig(operator)
    lead = np.argmax(np.abs(values))
    xi = vectors[:, lead]
    pivot = xi[np.argmax(np.abs(xi))]
    xi = np.real(xi * np.conj(pivot) / abs(pivot))
    density = basis.sample(grid) @ xi
    density = density / (np.sum(np.abs(density)) / grid.n)
    if density.mean() < 0:
        density = -density
    diff = FieldSample(grid, mu.values - density)
    l2 = float(np.linalg.norm(diff.values) / np.linalg.norm(mu.values))
    h1 = h_minus_one_norm(diff) / h_minus_one_norm(mu.field)
    return ApproximationResult(
        errors=ErrorPair(l2=l2, h_minus_one=float(h1)),
        eigenvalue=float(np.abs(values[lead])),
        density=density,
    )


def pullback_density(srb, conj_desc):
    """Ground-truth density of the conjugated map predicted by pullback.

    If h is the invariant density of T, the conjugated map F^{-1} o T o F
    has invariant density (h o F) |det DF|; returns the L1-normalised field
    on the analysis grid.
    """
    grid = srb.grid
    fz = dynamics.conjugacy_forward(conj_desc, grid.points)
    values = srb.evaluate(fz)
    values = values * dynamics.conjugacy_jacobian_det(conj_desc, grid.points)
    values = values / (np.sum(np.abs(values)) / grid.n)
    if values.mean() < 0:
        values = -values
    return FieldSample(grid, values)
