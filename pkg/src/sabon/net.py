"""The learned-basis operator network: encoder, projection, latent map,
reconstruction, composite loss, exact gradients, and the optimiser step.

The encoder is a plain ReLU MLP evaluated pointwise on the embedded grid;
its columns are the learned basis functions.  The latent map is a bias-free
linear map acting on projection coefficients.  Training minimises

    J = beta1*E1 + beta2*E2 + beta3*E3

with E1 the relative operator-approximation error, E2 the mean L1 norm of
the basis columns (sparsity), and E3 the relative reconstruction error of
k-step iterates.  All gradients are computed in closed form (reverse mode),
including the flow into the encoder through both the projection and the
reconstruction paths.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .function_space import FieldSample, GridMismatch


class ZeroDenominator(ValueError):
    """A relative-error target has zero norm; reject such functions upstream."""


class NonFinite(FloatingPointError):
    """A loss or gradient came out NaN/Inf (learning-rate or data pathology)."""


@dataclass
class ModelConfig:
    input_width: int
    hidden_width: int
    hidden_layers: int
    n_basis: int
    beta1: float = 1.0
    beta2: float = 0.0
    beta3: float = 1.0
    beta_p1: float = 0.0  # optional input-reconstruction penalty, off by default
    transfer_steps: int = 0  # k for E3; 0 disables the term
    precision: str = "single"

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64


@dataclass
class EncoderParams:
    """Affine layers (weight, bias); ReLU between hidden layers, linear output."""

    weights: list
    biases: list


@dataclass
class LatentMap:
    """Bias-free linear action on projection coefficients."""

    matrix: np.ndarray


@dataclass
class SabonModel:
    config: ModelConfig
    encoder: EncoderParams
    latent: LatentMap

    def param_count(self):
        n = sum(w.size + b.size for w, b in zip(self.encoder.weights, self.encoder.biases))
        return n + self.latent.matrix.size

    def copy(self):
        return copy.deepcopy(self)


def init_model(config, seed):
    """He-initialised encoder (scale 2/fan_in, zero biases); latent map = identity."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    widths = (
        [config.input_width]
        + [config.hidden_width] * config.hidden_layers
        + [config.n_basis]
    )
    dtype = config.dtype
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        weights.append(w.astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    latent = LatentMap(np.eye(config.n_basis, dtype=dtype))
    return SabonModel(config=config, encoder=EncoderParams(weights, biases), latent=latent)


def encoder_forward(encoder, x):
    """Evaluate the stacked scalar networks at points x, shape (P, d) -> (P, N)."""
    a = x
    last = len(encoder.weights) - 1
    for i, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
        a = a @ w.T + b
        if i < last:
            np.maximum(a, 0.0, out=a)
    return a


def _encoder_forward_cached(encoder, x):
    a = x
    activations = [a]
    last = len(encoder.weights) - 1
    for i, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
        a = a @ w.T + b
        if i < last:
            np.maximum(a, 0.0, out=a)
        activations.append(a)
    return activations


def _encoder_backward(encoder, activations, grad_out):
    """Backpropagate d(loss)/d(basis matrix) into every weight and bias."""
    grad_w = [None] * len(encoder.weights)
    grad_b = [None] * len(encoder.weights)
    g = grad_out
    for i in range(len(encoder.weights) - 1, -1, -1):
        if i < len(encoder.weights) - 1:
            # ReLU mask: activations[i + 1] stores max(z, 0)
            g = g * (activations[i + 1] > 0)
        grad_w[i] = g.T @ activations[i]
        grad_b[i] = g.sum(axis=0)
        if i > 0:
            g = g @ encoder.weights[i]
    return grad_w, grad_b


def encode_basis(model, grid):
    """Sample every basis function on the grid; column j is phi_j."""
    x = grid.embedded.astype(model.config.dtype)
    if x.shape[1] != model.config.input_width:
        raise GridMismatch(
            f"grid embeds into R^{x.shape[1]} but the encoder expects "
            f"R^{model.config.input_width}"
        )
    return encoder_forward(model.encoder, x)


def project(basis, g):
    """Projection coefficients c_j = <g, phi_j> = (1/n) Basis^T g."""
    values = g.values if isinstance(g, FieldSample) else np.asarray(g)
    if basis.shape[0] != values.shape[0]:
        raise GridMismatch("basis and field are sampled on different grids")
    return basis.T @ (values.astype(basis.dtype) / basis.shape[0])


def latent_apply(latent, c):
    """Strictly linear latent action G c (no bias, no activation)."""
    return latent.matrix @ c


def reconstruct(basis, a, grid=None):
    """Expand coefficients in the basis: sum_j a_j phi_j on the grid."""
    values = basis @ a
    if grid is None:
        return values
    return FieldSample(grid, np.asarray(values, dtype=float))


def model_forward(model, grid, g):
    """The learned operator action R o G o P applied to one observable."""
    basis = encode_basis(model, grid)
    coeffs = latent_apply(model.latent, project(basis, g))
    return reconstruct(basis, coeffs, grid)


@dataclass
class Batch:
    """Column-stacked observables with their transfer targets.

    ``inputs`` holds g, ``transferred`` holds L(g); ``iterates`` holds
    L^k(g) when the k-step reconstruction term is active.
    """

    inputs: np.ndarray
    transferred: np.ndarray
    iterates: np.ndarray | None = None

    @property
    def size(self):
        return self.inputs.shape[1]


@dataclass
class LossBreakdown:
    e1: float
    e2: float
    e3: float
    ep1: float
    total: float


@dataclass
class Gradients:
    weights: list
    biases: list
    latent: np.ndarray

    def tensors(self):
        return self.weights + self.biases + [self.latent]


def _column_norms(x):
    # discrete L2 with the 1/n quadrature weight
    return np.sqrt(np.einsum("ib,ib->b", x, x) / x.shape[0])


def _relative_term(reconstructed, target, target_norms):
    resid = target - reconstructed
    resid_norms = _column_norms(resid)
    value = float(np.mean(resid_norms / target_norms))
    return value, resid, resid_norms


def loss_from_basis(basis, latent_matrix, batch, config):
    """Loss terms for a fixed sampled basis (shared by training and tests)."""
    n = basis.shape[0]
    g, h, t = batch.inputs, batch.transferred, batch.iterates
    h_norms = _column_norms(h)
    if np.any(h_norms == 0.0):
        raise ZeroDenominator("a transfer target has zero L2 norm")
    coeffs = basis.T @ (g / n)
    prediction = basis @ (latent_matrix @ coeffs)
    e1, _, _ = _relative_term(prediction, h, h_norms)
    e2 = float(np.sum(np.abs(basis)) / (basis.shape[1] * n))
    e3 = 0.0
    if config.beta3 > 0.0 and config.transfer_steps > 0 and t is not None:
        t_norms = _column_norms(t)
        if np.any(t_norms == 0.0):
            raise ZeroDenominator("a k-step target has zero L2 norm")
        e3, _, _ = _relative_term(basis @ (basis.T @ (t / n)), t, t_norms)
    ep1 = 0.0
    if config.beta_p1 > 0.0:
        g_norms = _column_norms(g)
        if np.any(g_norms == 0.0):
            raise ZeroDenominator("an input observable has zero L2 norm")
        ep1, _, _ = _relative_term(basis @ (basis.T @ (g / n)), g, g_norms)
    total = (
        config.beta1 * e1
        + config.beta2 * e2
        + (config.beta3 * e3 if config.transfer_steps > 0 else 0.0)
        + config.beta_p1 * ep1
    )
    return LossBreakdown(e1=e1, e2=e2, e3=e3, ep1=ep1, total=total)


def compute_loss(model, grid, batch, loss_config=None):
    """Evaluate the composite loss on one batch (no gradients)."""
    config = loss_config or model.config
    return loss_from_basis(encode_basis(model, grid), model.latent.matrix, batch, config)


def _projection_term_grads(basis, targets, beta, n_points, batch_size):
    """Gradient of beta * mean_b ||t_b - Phi Phi^T t_b / n|| / ||t_b|| w.r.t. Phi.

    Returns (term value, grad contribution).  The basis enters twice: through
    the reconstruction and through the projection coefficients.
    """
    norms = _column_norms(targets)
    if np.any(norms == 0.0):
        raise ZeroDenominator("a reconstruction target has zero L2 norm")
    coeffs = basis.T @ (targets / n_points)
    resid = targets - basis @ coeffs
    resid_norms = _column_norms(resid)
    value = float(np.mean(resid_norms / norms))
    scale = np.zeros_like(resid_norms)
    nonzero = resid_norms > 0.0
    scale[nonzero] = beta / (n_points * batch_size * resid_norms[nonzero] * norms[nonzero])
    # d(value)/d(resid) column-scaled; resid = t - Phi c(Phi)
    s = resid * scale
    grad = -s @ coeffs.T
    grad += targets @ (-(basis.T @ s)).T / n_points
    return value, grad


def loss_and_gradients(model, grid, batch, basis=None, activations=None, loss_config=None):
    """One combined forward/backward pass; returns (LossBreakdown, Gradients)."""
    config = loss_config or model.config
    if activations is None:
        x = grid.embedded.astype(config.dtype)
        activations = _encoder_forward_cached(model.encoder, x)
    basis = activations[-1] if basis is None else basis
    n = basis.shape[0]
    bsz = batch.size
    g, h, t = batch.inputs, batch.transferred, batch.iterates

    h_norms = _column_norms(h)
    if np.any(h_norms == 0.0):
        raise ZeroDenominator("a transfer target has zero L2 norm")
    coeffs = basis.T @ (g / n)
    latent_out = model.latent.matrix @ coeffs
    prediction = basis @ latent_out
    e1, resid1, resid1_norms = _relative_term(prediction, h, h_norms)

    scale1 = np.zeros_like(resid1_norms)
    nz = resid1_norms > 0.0
    scale1[nz] = config.beta1 / (n * bsz * resid1_norms[nz] * h_norms[nz])
    d_pred = -(resid1 * scale1)  # dJ/d(prediction)
    grad_basis = d_pred @ latent_out.T
    d_latent_out = basis.T @ d_pred
    grad_latent = d_latent_out @ coeffs.T
    d_coeffs = model.latent.matrix.T @ d_latent_out
    grad_basis += g @ d_coeffs.T / n

    e2 = float(np.sum(np.abs(basis)) / (basis.shape[1] * n))
    if config.beta2 > 0.0:
        grad_basis += (config.beta2 / (basis.shape[1] * n)) * np.sign(basis)

    e3 = 0.0
    if config.beta3 > 0.0 and config.transfer_steps > 0 and t is not None:
        e3, grad3 = _projection_term_grads(basis, t, config.beta3, n, bsz)
        grad_basis += grad3

    ep1 = 0.0
    if config.beta_p1 > 0.0:
        ep1, gradp = _projection_term_grads(basis, g, config.beta_p1, n, bsz)
        grad_basis += gradp

    grad_w, grad_b = _encoder_backward(model.encoder, activations, grad_basis)
    total = (
        config.beta1 * e1
        + config.beta2 * e2
        + (config.beta3 * e3 if config.transfer_steps > 0 else 0.0)
        + config.beta_p1 * ep1
    )
    loss = LossBreakdown(e1=e1, e2=e2, e3=e3, ep1=ep1, total=total)
    grads = Gradients(weights=grad_w, biases=grad_b, latent=grad_latent)
    return loss, grads


def backward(model, grid, batch):
    """Exact gradients of J for every encoder parameter and the latent map."""
    loss, grads = loss_and_gradients(model, grid, batch)
    if not np.isfinite(loss.total):
        raise NonFinite(f"loss is not finite: {loss}")
    for tensor in grads.tensors():
        if not np.all(np.isfinite(tensor)):
            raise NonFinite("a parameter gradient is not finite")
    return grads


@dataclass
class AdamState:
    """Adaptive-moment accumulators mirroring the model parameters."""

    lr: float
    decay1: float
    decay2: float
    eps: float
    step: int
    m: list = field(repr=False, default=None)
    v: list = field(repr=False, default=None)


def init_adam(model, lr=1e-3, decay1=0.9, decay2=0.999, eps=1e-8):
    params = model.encoder.weights + model.encoder.biases + [model.latent.matrix]
    return AdamState(
        lr=lr,
        decay1=decay1,
        decay2=decay2,
        eps=eps,
        step=0,
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
    )


def adam_step(model, state, grads, lr=None):
    """Standard bias-corrected adaptive-moment update, in place."""
    params = model.encoder.weights + model.encoder.biases + [model.latent.matrix]
    tensors = grads.tensors()
    state.step += 1
    rate = state.lr if lr is None else lr
    bc1 = 1.0 - state.decay1 ** state.step
    bc2 = 1.0 - state.decay2 ** state.step
    step_size = rate / bc1
    for p, g, m, v in zip(params, tensors, state.m, state.v):
        g = g.astype(p.dtype, copy=False)
        m *= state.decay1
        m += (1.0 - state.decay1) * g
        v *= state.decay2
        v += (1.0 - state.decay2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + state.eps)
    return model, state
