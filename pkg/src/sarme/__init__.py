"""Measurement-error-corrected quasi-maximum-likelihood estimation for
spatial autoregressive models on networks."""

from .design import (
    MeasurementErrorSpec,
    ObservedDesign,
    assemble_omega,
    no_measurement_error,
    shared_omega,
)
from .estimator import (
    FitResult,
    SarParams,
    concentrated_objective,
    default_rho_interval,
    fit_meqmle,
    fit_qmle_uncorrected,
    m2_projector,
    newton_rho_symmetric,
    sigma2_of_rho,
)
from .inference import (
    SandwichCovariance,
    ScoreVector,
    corrected_loglik,
    corrected_score,
    d_matrix,
    inflate_for_estimated_omega,
    observed_information,
    per_observation_scores,
    sandwich,
    score_outer_product,
)
from .mecov import (
    EmbeddingResult,
    ReplicateSet,
    ase_embed,
    calibrate_proxy,
    calibrate_validation,
    estimate_from_replicates,
    rdpg_row_covariances,
)
from .simgen import (
    ExperimentConfig,
    ExperimentSummary,
    config_from_dict,
    generate_covariates,
    generate_sar_outcome,
    generate_sbm,
    latent_positions_from_blocks,
    load_config,
    run_experiment,
    run_replication,
    substream,
)
from .weights import (
    SpatialWeights,
    build_row_normalized,
    haversine_km,
    load_coordinates_csv,
    load_dense_csv,
    load_edgelist_csv,
    save_row_normalized_csv,
    weights_from_coordinates,
)

__version__ = "0.1.0"
