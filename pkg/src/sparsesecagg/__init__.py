"""Sparsified secure aggregation for federated learning.

Clients mask their model updates with pairwise-cancelling pads and send
only the coordinates that pairwise binary masks select, so the server
learns the weighted sum over the selected support and nothing else.
Shamir-shared seeds make the scheme robust to dropouts up to half the
cohort.  The package bundles the protocol itself, a deterministic
multi-user simulator with a local-SGD training loop, and analysis tools
that check the closed-form guarantees against recorded traces.
"""

from .agreement import agree_pairwise_seed, dealer_pairwise_seed, generate_keypair
from .analysis import (
    ContributorReport,
    ConvergenceParams,
    PrivacyParams,
    compression_report,
    contributor_report,
    convergence_bound,
    expected_contributors,
    p_prime,
    p_tilde,
    privacy_guarantee,
    selection_probability,
    update_variance_bound,
)
from .errors import (
    ConfigError,
    DuplicateUser,
    InconsistentShares,
    InsufficientShares,
    OverflowBudgetViolation,
    SparseSecAggError,
    TooManyDropouts,
)
from .experiments import EXPERIMENT_KINDS, ExperimentResult, ExperimentSpec, run_experiment
from .field import DEFAULT_MODULUS, FieldModulus
from .masking import MaskSet, binary_support, build_mask_set, pair_masks
from .prg import DomainTag, PrgStream, Seed
from .protocol import (
    Cohort,
    ProtocolConfig,
    ProtocolMode,
    RoundTrace,
    baseline_secagg_round,
    recover_and_unmask,
    run_round,
    server_aggregate,
    setup_cohort,
)
from .quantize import QuantizationConfig, dequantize_aggregate, quantize_gradient
from .shamir import reconstruct_seed, share_seed
from .sim import (
    SyntheticTask,
    TrainingConfig,
    TrainingResult,
    fedavg_reference,
    make_synthetic_task,
    run_training,
)

__version__ = "0.1.0"

__all__ = [
    "agree_pairwise_seed",
    "dealer_pairwise_seed",
    "generate_keypair",
    "ContributorReport",
    "ConvergenceParams",
    "PrivacyParams",
    "compression_report",
    "contributor_report",
    "convergence_bound",
    "expected_contributors",
    "p_prime",
    "p_tilde",
    "privacy_guarantee",
    "selection_probability",
    "update_variance_bound",
    "ConfigError",
    "DuplicateUser",
    "InconsistentShares",
    "InsufficientShares",
    "OverflowBudgetViolation",
    "SparseSecAggError",
    "TooManyDropouts",
    "EXPERIMENT_KINDS",
    "ExperimentResult",
    "ExperimentSpec",
    "run_experiment",
    "DEFAULT_MODULUS",
    "FieldModulus",
    "MaskSet",
    "binary_support",
    "build_mask_set",
    "pair_masks",
    "DomainTag",
    "PrgStream",
    "Seed",
    "Cohort",
    "ProtocolConfig",
    "ProtocolMode",
    "RoundTrace",
    "baseline_secagg_round",
    "recover_and_unmask",
    "run_round",
    "server_aggregate",
    "setup_cohort",
    "QuantizationConfig",
    "dequantize_aggregate",
    "quantize_gradient",
    "reconstruct_seed",
    "share_seed",
    "SyntheticTask",
    "TrainingConfig",
    "TrainingResult",
    "fedavg_reference",
    "make_synthetic_task",
    "run_training",
    "__version__",
]
