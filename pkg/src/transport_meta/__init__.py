"""Transport treatment effects from a collection of randomized trials to a
new target population: estimation, inference, diagnostics, sensitivity
analysis, per-protocol extensions, and a simulation/enumeration test bed."""

from .dataset import CompositeDataset, Row, SchemaConfig, ingest_csv, stratum_view
from .errors import TransportError
from .estimates import ContrastEstimate, format_estimate
from .glm import DesignSpec, FittedGlm, fit_glm, main_effects, predict, score_contributions
from .inference import (
    BootstrapConfig,
    BootstrapResult,
    EstimatingStack,
    bootstrap_ci,
    sandwich_variance,
)
from .models import EstimatedTreatment, KnownTreatment
from .oracle import OracleResult, enumerate_functional, enumerate_lambda, enumerate_theta
from .simulation import (
    AdherenceMechanism,
    DiscreteCovariate,
    LinearMean,
    NormalCovariate,
    SimWorld,
    simulate,
    truth_itt,
    truth_pp,
)
from .transport_pooled import (
    build_transformed_outcome,
    estimate_phi_te,
    estimate_phi_w,
    per_trial_transport_sweep,
)
from .transport_single import estimate_psi_te, estimate_psi_w, unadjusted_trial_effect

__version__ = "0.1.0"

__all__ = [
    "AdherenceMechanism",
    "BootstrapConfig",
    "BootstrapResult",
    "CompositeDataset",
    "ContrastEstimate",
    "DesignSpec",
    "DiscreteCovariate",
    "EstimatedTreatment",
    "EstimatingStack",
    "FittedGlm",
    "KnownTreatment",
    "LinearMean",
    "NormalCovariate",
    "OracleResult",
    "Row",
    "SchemaConfig",
    "SimWorld",
    "TransportError",
    "bootstrap_ci",
    "build_transformed_outcome",
    "enumerate_functional",
    "enumerate_lambda",
    "enumerate_theta",
    "estimate_phi_te",
    "estimate_phi_w",
    "estimate_psi_te",
    "estimate_psi_w",
    "fit_glm",
    "format_estimate",
    "ingest_csv",
    "main_effects",
    "per_trial_transport_sweep",
    "predict",
    "sandwich_variance",
    "score_contributions",
    "simulate",
    "stratum_view",
    "truth_itt",
    "truth_pp",
    "unadjusted_trial_effect",
]
