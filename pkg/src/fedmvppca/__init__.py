"""Federated multi-view probabilistic PCA with optional differential privacy."""

from .client import (
    ClientState,
    LocalRoundResult,
    SufficientStats,
    e_step,
    init_params,
    local_round,
)
from .data import (
    CenterDataset,
    GroundTruth,
    Scaler,
    SyntheticSpec,
    concat_datasets,
    generate_synthetic,
    kfold,
    load_tabular,
    save_tabular,
    split_scenario,
    standardize,
)
from .dp import (
    LedgerEntry,
    PrivacyLedger,
    PrivacySpec,
    clip_difference,
    gaussian_mechanism,
    gaussian_noise_std,
    global_param_budget,
    laplace_mechanism,
    matrix_normal_mechanism,
    privatize_local_params,
    round_budget,
)
from .errors import FedPpcaError
from .federation import (
    FederationConfig,
    RoundRecord,
    RunHistory,
    run_dp_fed_mv_ppca,
    run_fed_mv_ppca,
    seed_prior,
)
from .master import (
    AggregationInput,
    InverseGammaFit,
    aggregate_mu,
    aggregate_round,
    aggregate_w,
    fit_inverse_gamma,
    moment_match_inverse_gamma,
)
from .model import (
    GlobalParams,
    LocalParams,
    PosteriorMoments,
    ViewLayout,
    ViewPrior,
    expected_complete_loglik,
    joint_marginal_loglik,
    latent_posterior,
    marginal_view_covariance,
    sample_subject,
    sample_subjects,
    view_marginal_loglik,
    view_marginal_loglik_rows,
)
from .evaluation import (
    MetricsReport,
    TwoClassLda,
    impute_view,
    latent_accuracy,
    latent_projections,
    mae,
    point_params,
    reconstruct,
    waic,
    waic_std_diff,
)
from .wire import deserialize_params, serialize_params

__version__ = "0.1.0"
