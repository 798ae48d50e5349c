"""Ordinal b-matching mechanisms under stochastic preferences: mechanisms,
exact analytics, an optimal-matching oracle, and a reproducible Monte Carlo
distortion estimator."""

from .core import (
    UNASSIGNED,
    Instance,
    Matching,
    PreferenceProfile,
    RandomStream,
    ValuationProfile,
    complete_matching,
    derive_preferences,
    social_welfare,
)
from .distributions import DistributionSpec, UFAuditReport, sample_profile, uf_audit
from .mechanisms import (
    MechanismSpec,
    run_hql,
    run_mechanism,
    run_rs,
    run_rsbs,
    run_secretary_rs,
    run_serial_dictator,
)
from .opt import OptResult, brute_force_opt, optimal_matching, optimal_value
from .estimator import (
    EstimateReport,
    GapReport,
    ProbMatrixReport,
    SecretaryGapReport,
    OneToOneReplayReport,
    estimate_assignment_probs,
    estimate_distortion,
    gap_report,
    run_lb_secretary,
    run_lb_theorem1,
)

__all__ = [
    "UNASSIGNED",
    "Instance",
    "Matching",
    "PreferenceProfile",
    "RandomStream",
    "ValuationProfile",
    "complete_matching",
    "derive_preferences",
    "social_welfare",
    "DistributionSpec",
    "UFAuditReport",
    "sample_profile",
    "uf_audit",
    "MechanismSpec",
    "run_hql",
    "run_mechanism",
    "run_rs",
    "run_rsbs",
    "run_secretary_rs",
    "run_serial_dictator",
    "OptResult",
    "brute_force_opt",
    "optimal_matching",
    "optimal_value",
    "EstimateReport",
    "GapReport",
    "ProbMatrixReport",
    "SecretaryGapReport",
    "OneToOneReplayReport",
    "estimate_assignment_probs",
    "estimate_distortion",
    "gap_report",
    "run_lb_secretary",
    "run_lb_theorem1",
]

__version__ = "0.1.0"
