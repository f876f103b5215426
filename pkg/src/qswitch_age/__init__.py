"""Age-based scheduling of multipartite entanglement requests at a
memory-constrained switch: model, policies, closed-form analytics,
optimizer, and Monte-Carlo simulator."""

from .analytics import (
    AgeReport,
    mma_age_report,
    mma_request_age,
    renewal_oracle_mma,
    renewal_oracle_ssr,
    ssr_average_age,
)
from .model import (
    Instance,
    MemoryConfiguration,
    NetworkConfig,
    Request,
    ValidationError,
    build_request_set,
    instance_from_json,
    instance_to_json,
    is_admissible,
    per_class_budget,
    service_success_prob,
    validate_instance,
)
from .optimize import (
    GammaResult,
    SolverError,
    capped_mass,
    coverage_probabilities,
    enumerate_maximal_subsets,
    gamma_search,
    mma_weights,
    optimal_cardinality_dist,
    optimal_marginals,
    optimal_subset_dist,
)
from .policies import (
    MMAParams,
    MMAPolicy,
    Policy,
    SMWParams,
    SMWPolicy,
    SSRParams,
    SSRPolicy,
    make_policy,
    optimal_mma_params,
    optimal_smw_params,
    optimal_ssr_params,
)
from .sampling import (
    MarginalVector,
    RngStream,
    sample_categorical,
    sample_without_replacement,
)
from .simulator import (
    AgeState,
    ReplicationStats,
    SimResult,
    SimulationError,
    SlotOutcome,
    run_replications,
    simulate,
    slot_step,
)

__version__ = "0.1.0"
