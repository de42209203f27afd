"""Positive linear systems on discretized transport domains.

Simulation of boundary-controlled positive semigroups together with the
audits that certify them: resolvent positivity, inverse estimates,
admissibility constants, small-gain radii, and exponential ISS verdicts.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    EigensolverError,
    GainValidationError,
    PossysError,
    PowerIterationError,
    SingularSystemError,
)
from .lattice import (
    GridSpace,
    GridVector,
    induced_operator_norm,
    is_positive,
    l1_norm,
    weighted_l1,
)
from .generators import (
    GeneratorModel,
    NonlocalBirth,
    ProportionalWrap,
    SpectralReport,
    ZeroInflow,
    build_upwind_generator,
    check_resolvent_positive,
    inverse_estimate_constant,
    inverse_estimate_curve,
    perron_mode,
    resolvent_apply,
    resolvent_matrix,
    spectral_bound,
    spectral_report,
)
from .semigroup import (
    EvolutionPlan,
    Trajectory,
    evolve,
    growth_estimate,
    left_invertibility_audit,
    operator_norm_trajectory,
    step_matrix,
)
from .control import (
    AdmissibilityReport,
    ControlOperator,
    InputSignal,
    admissibility_constant,
    admissibility_report,
    composition_law_check,
    impulse_response_norms,
    input_map,
    mild_solution,
    positivity_equivalence_audit,
    resolvent_bound_audit,
    sampled_input_gain,
    uniform_decay_curve,
)
from .perturbation import (
    DirichletOperator,
    DominationReport,
    PerturbedSystem,
    assemble_perturbed,
    boundary_control_operator,
    dirichlet_operator,
    domination_check,
    small_gain_radius,
    variation_of_constants_check,
)
from .iss import (
    EISS,
    INCONCLUSIVE,
    ISSReport,
    NOT_EISS,
    iss_equivalence_sweep,
    iss_gain_fit,
    iss_verdict,
)
from .scenarios import (
    RenewalScenario,
    markov_cycle_scenario,
    renewal_scenario,
    ring_transport_scenario,
)
