"""Discounted MDP toolkit built around advantage-preserving transformations.

The package models finite MDPs whose actions are state-unique, embeds
actions as reward/coefficient vectors, and provides: value-shift and
discount-change transformations (with normalization and the lowest safely
reachable discount factor), a general value-iteration loop with pluggable
stopping rules and action filtering, Howard policy iteration with an
independent brute-force oracle, convergence certificates for the span
contraction of synchronous runs, the exhaustive two-state policy-iteration
bound machinery, seeded random generators, and a CLI.
"""

from .core import (
    Action,
    ActionVector,
    Mdp,
    ModelError,
    Policy,
    action_vector,
    advantage,
    advantages,
    bellman_optimal,
    bellman_policy,
    policy_from_ids,
    span,
    validate,
)
from .transforms import (
    DiscountChange,
    LShift,
    NonUniqueOptimumWarning,
    TransformLog,
    UnsafeTransformError,
    apply_J,
    apply_L,
    effective_gamma,
    normalize,
)
from .solvers import (
    ConfigError,
    ConsistencyError,
    ExactSolution,
    PiTrace,
    RunTrace,
    ViConfig,
    brute_force_solve,
    evaluate_policy,
    filter_appendix,
    policy_iteration,
    solve_exact,
    value_iteration,
)
from .analysis import (
    AssumptionError,
    CertificationError,
    ConvergenceCertificate,
    certify,
    certify_alpha,
    check_error_recursion,
    check_lemma_adv_span,
    check_mixing_bound,
    check_update_sandwich,
    empirical_rate,
    primitivity,
    wielandt_bound,
)
from .twostate import (
    InefficiencyCertificate,
    PiBoundReport,
    formed_policies,
    inefficiency_certificate,
    produced_actions,
    set_dynamics,
    verify_pi_bound,
)
from .gen import GenSpec, generate
from .fixtures import m2, m2_mix

__version__ = "0.1.0"
