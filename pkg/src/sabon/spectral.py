"""Spectral analysis of the learned operator.

The finite-dimensional operator acts on basis coefficients as G M, with M
the Gram matrix of the (generally non-orthonormal) basis, so eigenpairs
come from the N x N eigenproblem  G M xi = lambda xi.  Reconstructed
eigenfunctions are screened with the H^{-1}/L^2 ratio heuristic and with
relative L^2 residuals evaluated against the true dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics
from .function_space import FieldSample, GridMismatch, grid_backward_orbit


class DegenerateBasis(ValueError):
    """A basis column has (numerically) zero norm."""


class SolverFailure(RuntimeError):
    """The dense eigensolver did not converge."""


class NonUniformGrid(ValueError):
    """FFT-based norms require the uniform grid discretisation."""


def gram_matrix(basis):
    """M_{kj} = <phi_k, phi_j> with the discrete (1/n) inner product."""
    basis = np.asarray(basis, dtype=float)
    return basis.T @ basis / basis.shape[0]


def normalize_basis(basis):
    """Divide each column by its discrete L2 norm; returns (basis, scales)."""
    basis = np.asarray(basis, dtype=float)
    scales = np.sqrt(np.einsum("ij,ij->j", basis, basis) / basis.shape[0])
    if np.any(scales < 1e-10):
        raise DegenerateBasis(f"column norms down to {scales.min():.3e}")
    return basis / scales, scales


@dataclass
class EigenPair:
    value: complex
    coeffs: np.ndarray
    field: FieldSample | None = None


def solve_eigenpairs(latent, gram):
    """All eigenpairs of the real matrix G M, sorted by |lambda| descending.

    Eigenvector coefficients are normalised to unit Euclidean length with
    the phase fixed so the largest-magnitude entry is real positive; ties
    in |lambda| break by descending real part.
    """
    g = latent.matrix if hasattr(latent, "matrix") else np.asarray(latent)
    m = np.asarray(gram)
    if g.shape != m.shape or g.shape[0] != g.shape[1]:
        raise ValueError(f"shape mismatch: G {g.shape} vs M {m.shape}")
    try:
        values, vectors = np.linalg.eig(g.astype(float) @ m.astype(float))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise SolverFailure(
            f"eigensolver failed (cond(GM) = {np.linalg.cond(g @ m):.3e})"
        ) from exc
    order = np.lexsort((-values.real, -np.abs(values)))
    pairs = []
    for idx in order:
        xi = vectors[:, idx]
        xi = xi / np.linalg.norm(xi)
        lead = np.argmax(np.abs(xi))
        phase = xi[lead] / abs(xi[lead])
        pairs.append(EigenPair(value=complex(values[idx]), coeffs=xi * np.conj(phase)))
    return pairs


def reconstruct_eigenfunction(basis, coeffs, grid):
    """Expand coefficient vector in the basis (real and imaginary parts)."""
    coeffs = np.asarray(coeffs)
    if basis.shape[1] != coeffs.shape[0]:
        raise ValueError("coefficient length does not match basis size")
    values = basis.astype(float) @ coeffs.real + 1j * (basis.astype(float) @ coeffs.imag)
    return FieldSample(grid, values)


def grid_frequencies(grid):
    """Integer frequency lattice of the grid, Nyquist folded to +m/2."""
    m = grid.m
    k = np.rint(np.fft.fftfreq(m) * m).astype(int)
    if m % 2 == 0:
        k[m // 2] = m // 2
    return k


def fourier_coefficients(sample):
    """DFT coefficients f_hat_k = (1/n) sum_j f(x_j) exp(-2 pi i k.x_j).

    Returned in numpy FFT layout: shape (m,) for the circle, (m, m) for
    the torus (x index first).
    """
    grid = sample.grid
    values = sample.values
    if values.shape != (grid.n,):
        raise NonUniformGrid("values do not fill the uniform grid")
    if grid.dim == 1:
        return np.fft.fft(values) / grid.m
    return np.fft.fft2(values.reshape(grid.m, grid.m)) / grid.n


def sobolev_weights(grid):
    """(1 + |k|^2)^{-1} over the grid's folded frequency lattice."""
    k = grid_frequencies(grid)
    if grid.dim == 1:
        return 1.0 / (1.0 + k.astype(float) ** 2)
    k2 = k.astype(float) ** 2
    return 1.0 / (1.0 + k2[:, None] + k2[None, :])


def h_minus_one_norm(sample):
    """Negative-order Sobolev norm sqrt(sum_k (1+|k|^2)^{-1} |f_hat_k|^2)."""
    coeffs = fourier_coefficients(sample)
    return float(np.sqrt(np.sum(sobolev_weights(sample.grid) * np.abs(coeffs) ** 2)))


def fourier_l2_norm(sample):
    """Fourier-side L2 norm (identical weights 1); Parseval cross-check."""
    coeffs = fourier_coefficients(sample)
    return float(np.sqrt(np.sum(np.abs(coeffs) ** 2)))


def complex_l2_norm(values, n):
    return float(np.sqrt(np.real(np.vdot(values, values)) / n))


def interpolate_periodic(grid, values, points):
    """Periodic linear (circle) / bilinear (torus) interpolation at points."""
    if grid.dim == 1:
        u = np.mod(points[:, 0] / grid.period, 1.0) * grid.m
        i0 = np.floor(u).astype(int) % grid.m
        f = u - np.floor(u)
        return (1.0 - f) * values[i0] + f * values[(i0 + 1) % grid.m]
    v2 = values.reshape(grid.m, grid.m)
    u = np.mod(points[:, 0], 1.0) * grid.m
    v = np.mod(points[:, 1], 1.0) * grid.m
    i0 = np.floor(u).astype(int) % grid.m
    j0 = np.floor(v).astype(int) % grid.m
    fu = u - np.floor(u)
    fv = v - np.floor(v)
    i1 = (i0 + 1) % grid.m
    j1 = (j0 + 1) % grid.m
    return (
        (1 - fu) * (1 - fv) * v2[i0, j0]
        + fu * (1 - fv) * v2[i1, j0]
        + (1 - fu) * fv * v2[i0, j1]
        + fu * fv * v2[i1, j1]
    )


def transfer_apply_field(desc, sample, interpolate=True):
    """Apply the true transfer operator to a gridded field.

    Off-grid values of the field at the preimages T^{-1}(x_i) are obtained
    by periodic (bi)linear interpolation; the determinant weight uses the
    exact dynamics.
    """
    grid = sample.grid
    if isinstance(desc, dynamics.CircleRotation):
        pts = np.mod(grid.points - desc.alpha, grid.period)
        weights = 1.0
    else:
        pts, weights = grid_backward_orbit(desc, grid.key, 1)[0]
    if not interpolate:
        raise NotImplementedError("only interpolated evaluation is supported")
    vals = sample.values
    if np.iscomplexobj(vals):
        interp = interpolate_periodic(grid, vals.real, pts) + 1j * interpolate_periodic(
            grid, vals.imag, pts
        )
    else:
        interp = interpolate_periodic(grid, vals, pts)
    return FieldSample(grid, interp / weights)


@dataclass
class ReportRow:
    value: complex
    ratio: float
    l2_norm: float
    h_minus_one: float
    residual: float


@dataclass
class SpectralReport:
    pairs: list
    rows: list

    def leading(self):
        return self.pairs[0]


def eigen_diagnostics(desc, basis, pairs, grid):
    """Ratio test and true-dynamics residuals for every eigenpair.

    ratio r_k = ||psi_k||_{H^-1} / ||psi_k||_{L^2}; the residual is
    ||L psi_k - lambda_k psi_k||_2 / ||psi_k||_2 with L evaluated through
    the exact inverse orbit plus interpolation of the reconstructed field.
    """
    if basis.shape[0] != grid.n:
        raise GridMismatch("basis is not sampled on the analysis grid")
    rows = []
    enriched = []
    for pair in pairs:
        psi = reconstruct_eigenfunction(basis, pair.coeffs, grid)
        l2 = complex_l2_norm(psi.values, grid.n)
        hm1 = h_minus_one_norm(psi)
        applied = transfer_apply_field(desc, psi)
        resid_vals = applied.values - pair.value * psi.values
        residual = complex_l2_norm(resid_vals, grid.n) / l2 if l2 > 0 else np.inf
        rows.append(
            ReportRow(
                value=pair.value,
                ratio=hm1 / l2 if l2 > 0 else np.inf,
                l2_norm=l2,
                h_minus_one=hm1,
                residual=residual,
            )
        )
        enriched.append(EigenPair(value=pair.value, coeffs=pair.coeffs, field=psi))
    return SpectralReport(pairs=enriched, rows=rows)
