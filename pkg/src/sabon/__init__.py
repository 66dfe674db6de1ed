"""Learned neural bases for transfer and Koopman operators, with
deterministic Fourier-Galerkin baselines for spectral comparison."""

from .dynamics import (
    CircleRotation,
    ConjugatedCat,
    MapDescriptor,
    NonConvergence,
    PerturbedCat,
    embed_state,
    forward_map,
    inverse_map,
    inverse_orbit_weight,
    jacobian_det,
)
from .function_space import (
    FieldSample,
    Grid,
    GridMismatch,
    TrigPoly,
    build_grid,
    discrete_norms,
    eval_trig_poly,
    inner_product,
    koopman_apply,
    sample_trig_poly,
    transfer_apply,
)
from .galerkin import (
    FourierBasis,
    LearnedBasis,
    approximation_errors,
    build_fourier_basis,
    galerkin_operator,
    ground_truth_srb,
    projection_errors,
)
from .net import (
    Batch,
    ModelConfig,
    SabonModel,
    adam_step,
    backward,
    compute_loss,
    encode_basis,
    init_adam,
    init_model,
    latent_apply,
    model_forward,
    project,
    reconstruct,
)
from .spectral import (
    eigen_diagnostics,
    gram_matrix,
    h_minus_one_norm,
    normalize_basis,
    reconstruct_eigenfunction,
    solve_eigenpairs,
)
from .trainer import (
    RunReport,
    TrainConfig,
    build_dataset,
    circle_desk_config,
    circle_paper_config,
    anosov_desk_config,
    anosov_paper_config,
    evaluate,
    train,
)

__version__ = "0.1.0"
