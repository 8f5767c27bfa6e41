"""Bayesian variable selection for binomial regression with latent Gaussian fields."""

from .data import (
    Dataset,
    IngestionError,
    ObservationSite,
    build_dataset,
    encode_covariates,
    read_sites_csv,
    split_dataset,
    write_sites_csv,
)
from .estimators import (
    frequency_probabilities,
    inclusion_probabilities,
    median_probability_model,
    mode_model,
    renormalized_probabilities,
    summarize,
    total_log_evidence_mass,
)
from .laplace import (
    EvidenceOracle,
    LaplaceConfig,
    LatentModel,
    fit_gaussian_approx,
    latent_marginals,
    make_latent_model,
    marginal_likelihood,
)
from .linalg import NumericalError
from .mjmcmc import (
    EvidenceFailureError,
    ModelRegistry,
    ProposalConfig,
    StopRule,
    enumerate_registry,
    run_chains,
)
from .model import PriorConfig, binomial_loglik, log_model_prior, model_key
from .prediction import (
    PredictionTrack,
    classify_sites,
    model_averaged_track,
    naive_track,
    probability_track,
)
from .structures import LatentStructureSpec, structure_from_label
from .synth import SyntheticSpec, generate_dataset, generate_sites
from .toy import (
    ToyModel,
    exact_toy_mlik,
    harmonic_mean_mlik,
    latent_structure_comparison,
    laplace_toy_mlik,
    toy_compare,
)

__version__ = "0.1.0"
