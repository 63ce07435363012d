"""Convergence certificates and theorem-level checkers.

A certificate packages the ingredients that control how fast synchronous
value iteration contracts the value span on a normalized MDP whose optimal
transition matrix mixes: the primitivity exponent N of that matrix, the
minimum entry omega of its N-th power, the optimality gap delta of the
runner-up action, and the run-dependent factor tau < 1 multiplying gamma^N
in the certified block inequality  span(V_N) <= gamma^N * tau * span(V_0).

The learning-rate variant certifies the same kind of block inequality for
the error vector of a blended run, with the exponent bounded by n-1 because
the blend acts like a self-loop at every state.

Checkers for the supporting facts live here too: the advantage-difference
span bound, the measured per-iteration contraction rate, the per-step error
recursion, the greedy update sandwich, and the mixing-coefficient lower
bound.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from math import log

import numpy as np

from .core import Mdp, ModelError, as_values, policy_rows, span
from .solvers import ExactSolution, RunTrace, solve_exact
from . import transforms

__all__ = [
    "AssumptionError",
    "CertificationError",
    "ConvergenceCertificate",
    "ErrorRecursionReport",
    "LemmaReport",
    "MixingBoundReport",
    "certify",
    "certify_alpha",
    "check_error_recursion",
    "check_lemma_adv_span",
    "check_mixing_bound",
    "check_update_sandwich",
    "empirical_rate",
    "primitivity",
    "support_exponent_with_loops",
    "wielandt_bound",
]

DELTA_UNIQUE_TOL = 1e-9
NORMALIZED_TOL = 1e-6
RECURRENCE_TOL = 1e-9


class AssumptionError(ValueError):
    """The certified statement's assumptions do not hold for this input."""


class CertificationError(ValueError):
    """The certificate cannot be computed from the given trace."""


def wielandt_bound(n: int) -> int:
    """Largest possible primitivity exponent of an n-state support graph."""
    return n * n - 2 * n + 2


def _check_stochastic(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ModelError(f"expected a square matrix, got shape {p.shape}")
    if np.any(p < 0.0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ModelError("matrix is not row-stochastic")
    return p


def primitivity(p_star: np.ndarray) -> tuple[int, float] | None:
    """Smallest N with (P*)^N entrywise positive, and the minimum entry there.

    The exponent is found on the boolean support (so float underflow cannot
    flip a structurally positive entry to zero), then omega is read off the
    numeric matrix power.  Returns None when no exponent up to the
    structural bound n^2 - 2n + 2 works, i.e. the matrix is not primitive.
    """
    p = _check_stochastic(p_star)
    n = p.shape[0]
    b = p > 0.0
    reach = b.copy()
    for k in range(1, wielandt_bound(n) + 1):
        if reach.all():
            omega = float(np.linalg.matrix_power(p, k).min())
            return k, omega
        reach = reach @ b
    return None


def support_exponent_with_loops(p_star: np.ndarray) -> int:
    """Smallest k with (support(P*) + I)^k entrywise positive; at most n-1.

    Adding the identity models a blended update touching every state each
    round, which removes periodicity, so irreducibility alone bounds the
    exponent by n-1.
    """
    p = _check_stochastic(p_star)
    n = p.shape[0]
    b = (p > 0.0) | np.eye(n, dtype=bool)
    reach = np.eye(n, dtype=bool)
    for k in range(0, n):
        if reach.all():
            return k
        reach = reach @ b
    raise AssumptionError("support graph is not irreducible: no exponent within n-1")


@dataclass
class ConvergenceCertificate:
    """Certified contraction data for one solver trace.

    Plain-rate fields (N, omega, phi, tau) are filled by :func:`certify`;
    the alpha fields by :func:`certify_alpha`; unused ones stay None.
    ``margin`` is the slack of the block inequality (negative means it
    failed; it is reported, never clamped).  Predicted iteration counts are
    evaluated at ``epsilon``.
    """

    n: int
    m: int
    gamma: float
    delta: float
    epsilon: float
    span_start: float
    span_end: float
    margin: float
    product_bound: float
    predicted_vi_iters: float
    predicted_pi_iters: float
    gamma_eff: float
    trace_hash: str
    N: int | None = None
    omega: float | None = None
    phi: float | None = None
    tau: float | None = None
    alpha: float | None = None
    N_alpha: int | None = None
    delta_alpha: float | None = None
    tau_alpha: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _verify_sync_recurrence(mdp: Mdp, values: np.ndarray, alpha: float) -> None:
    """Check that a trace is a synchronous greedy run with the given rate."""
    for t in range(values.shape[0] - 1):
        q = mdp.rewards + mdp.gamma * (mdp.P @ values[t])
        u = np.array([np.max(q[rows]) for rows in mdp.state_rows])
        expect = (1.0 - alpha) * values[t] + alpha * u
        if np.max(np.abs(values[t + 1] - expect)) > RECURRENCE_TOL:
            raise CertificationError(
                f"trace is not a synchronous greedy run with alpha={alpha} "
                f"(recurrence breaks at step {t})"
            )


def _greedy_rows_at(mdp: Mdp, v: np.ndarray) -> np.ndarray:
    q = mdp.rewards + mdp.gamma * (mdp.P @ v)
    return np.array([rows[int(np.argmax(q[rows]))] for rows in mdp.state_rows], dtype=np.intp)


def _require_assumptions(mdp: Mdp, need_normalized: bool) -> tuple[ExactSolution, np.ndarray]:
    if mdp.n_states < 2:
        raise AssumptionError("certification needs at least two states")
    sol = solve_exact(mdp)
    if need_normalized and float(np.max(np.abs(sol.values))) > NORMALIZED_TOL:
        raise AssumptionError("MDP is not normalized: optimal values are not ~0")
    if not np.isfinite(sol.delta):
        raise AssumptionError("no actions outside the optimal policy; delta is undefined")
    if sol.delta <= DELTA_UNIQUE_TOL:
        raise AssumptionError(
            f"optimal policy is not unique within tolerance (delta={sol.delta:.3e})"
        )
    p_star = mdp.P[policy_rows(mdp, sol.policy)]
    return sol, p_star


def _predicted_vi_iters(gamma: float, epsilon: float, tau: float, N: int) -> float:
    denom = log(1.0 / gamma) + (log(1.0 / tau) / N if tau > 0 else np.nan)
    if not np.isfinite(denom) or denom <= 0:
        return float("nan")
    return (log(1.0 / epsilon) + log(1.0 / (1.0 - gamma))) / denom


def certify(mdp: Mdp, trace: RunTrace, epsilon: float = 1e-6) -> ConvergenceCertificate:
    """Certify the N-step span contraction of a standard synchronous run.

    Requires a normalized MDP whose optimal transition matrix is primitive
    with a unique optimum, and a trace of at least N standard iterations
    (the recurrence is re-verified from the values, so traces loaded from
    files certify the same way as fresh ones).
    """
    sol, p_star = _require_assumptions(mdp, need_normalized=True)
    prim = primitivity(p_star)
    if prim is None:
        raise AssumptionError("optimal transition matrix is not primitive")
    N, omega = prim
    if trace.iterations < N:
        raise CertificationError(
            f"trace has {trace.iterations} iterations but certification needs {N}"
        )
    _verify_sync_recurrence(mdp, trace.values, alpha=1.0)

    gamma = mdp.gamma
    spans = trace.span_v
    # phi chains the per-step mixing floors delta / (gamma * span(V_t)); each
    # step's floor uses the span of the iterate entering it, t = 0 .. N-1.
    block = spans[0:N]
    if np.any(block <= 0.0):
        raise CertificationError("a span inside the certified block vanished")
    phi = omega * sol.delta**N / (gamma**N * float(np.prod(block)))
    tau = 1.0 - mdp.n_states * phi
    rhs = gamma**N * tau * spans[0]
    margin = float(rhs - spans[N])
    gamma_eff, _ = transforms.effective_gamma(mdp)
    return ConvergenceCertificate(
        n=mdp.n_states,
        m=mdp.m,
        gamma=gamma,
        delta=sol.delta,
        epsilon=epsilon,
        span_start=float(spans[0]),
        span_end=float(spans[N]),
        margin=margin,
        product_bound=float(gamma**N * tau),
        predicted_vi_iters=_predicted_vi_iters(gamma, epsilon, tau, N),
        predicted_pi_iters=mdp.m / (1.0 - gamma_eff),
        gamma_eff=gamma_eff,
        trace_hash=trace.content_hash(),
        N=N,
        omega=omega,
        phi=phi,
        tau=tau,
    )


def certify_alpha(
    mdp: Mdp, trace: RunTrace, alpha: float, epsilon: float = 1e-6
) -> ConvergenceCertificate:
    """Certify the blended-run block inequality on the error vector.

    The exponent counts rounds of (support + loops) reachability, so it is
    at most n-1.  The per-entry floor combines the slack alpha*delta' left
    by suboptimal choices with the (1-alpha)*gamma kept by the blend, where
    delta' = delta * (min positive entry of P*) / (gamma * max span of the
    errors entering the block): the optimal-matrix entry scales what a
    mixing step can guarantee for a single off-diagonal coordinate.
    """
    if not (0.0 < alpha < 1.0):
        raise CertificationError(f"alpha must lie strictly inside (0, 1), got {alpha}")
    sol, p_star = _require_assumptions(mdp, need_normalized=False)
    n_alpha = support_exponent_with_loops(p_star)
    if trace.iterations < n_alpha:
        raise CertificationError(
            f"trace has {trace.iterations} iterations but certification needs {n_alpha}"
        )
    _verify_sync_recurrence(mdp, trace.values, alpha=alpha)

    gamma = mdp.gamma
    errors = trace.values[: n_alpha + 1] - sol.values
    e_spans = np.array([span(e) for e in errors])
    if np.any(e_spans <= 0.0):
        raise CertificationError("an error span inside the certified block vanished")
    p_min = float(np.min(p_star[p_star > 0.0]))
    delta_prime = sol.delta * p_min / (gamma * float(np.max(e_spans[:n_alpha])))
    delta_alpha = min(alpha * delta_prime, (1.0 - alpha) * gamma)
    rho = (1.0 - alpha) / gamma + alpha
    tau_alpha = rho**n_alpha - mdp.n_states * delta_alpha**n_alpha
    rhs = gamma**n_alpha * tau_alpha * e_spans[0]
    margin = float(rhs - e_spans[n_alpha])
    gamma_eff, _ = transforms.effective_gamma(mdp)
    return ConvergenceCertificate(
        n=mdp.n_states,
        m=mdp.m,
        gamma=gamma,
        delta=sol.delta,
        epsilon=epsilon,
        span_start=float(e_spans[0]),
        span_end=float(e_spans[n_alpha]),
        margin=margin,
        product_bound=float(gamma**n_alpha * tau_alpha),
        predicted_vi_iters=_predicted_vi_iters(gamma, epsilon, tau_alpha, n_alpha),
        predicted_pi_iters=mdp.m / (1.0 - gamma_eff),
        gamma_eff=gamma_eff,
        trace_hash=trace.content_hash(),
        alpha=alpha,
        N_alpha=n_alpha,
        delta_alpha=delta_alpha,
        tau_alpha=tau_alpha,
    )


@dataclass(frozen=True)
class LemmaReport:
    """Both sides of the advantage-difference span bound for one pair."""

    lhs: float
    bound: float
    same_state: bool

    @property
    def holds(self) -> bool:
        return self.lhs <= self.bound + 1e-9


def check_lemma_adv_span(mdp: Mdp, a1: str, a2: str, v) -> LemmaReport:
    """|adv difference minus reward difference| against the span bound.

    The bound is gamma*span(v) for two actions on the same state and
    (1+gamma)*span(v) otherwise; both follow from the coefficient
    differences summing to zero with entries bounded by gamma resp.
    1+gamma.
    """
    v = as_values(v, mdp.n_states)
    k1, k2 = mdp.row_of[a1], mdp.row_of[a2]
    adv = mdp.rewards + mdp.coeffs @ v
    lhs = abs(float((adv[k1] - adv[k2]) - (mdp.rewards[k1] - mdp.rewards[k2])))
    same = mdp.state_of[k1] == mdp.state_of[k2]
    factor = mdp.gamma if same else (1.0 + mdp.gamma)
    return LemmaReport(lhs=lhs, bound=factor * span(v), same_state=bool(same))


def empirical_rate(trace: RunTrace, burn_in: int = 5) -> float:
    """Geometric mean of consecutive value-span ratios after a burn-in.

    Needs more than burn_in + 2 iterations and all post-burn-in spans above
    1e-13 (otherwise the ratio is dominated by float noise).
    """
    spans = trace.span_v
    if trace.iterations <= burn_in + 2:
        raise ValueError(
            f"trace too short: {trace.iterations} iterations, need > {burn_in + 2}"
        )
    used = spans[burn_in:]
    if np.any(used <= 1e-13):
        raise ValueError("span underflow: spans after burn-in fall below 1e-13")
    ratios = np.log(used[1:]) - np.log(used[:-1])
    return float(np.exp(np.mean(ratios)))


@dataclass(frozen=True)
class ErrorRecursionReport:
    """Worst slack of the per-step error recursion over a whole trace."""

    steps: int
    max_violation: float
    max_equality_gap: float
    equality_checks: int


def check_error_recursion(
    mdp: Mdp, trace: RunTrace, solution: ExactSolution | None = None
) -> ErrorRecursionReport:
    """Check e_{t+1}(s) <= gamma * (P_t e_t)(s) per step, elementwise.

    P_t is the transition matrix of the greedy actions recorded at step t.
    Where the recorded choice coincides with the optimal action the relation
    is an equality; the report carries the worst gap among those states.
    """
    sol = solution or solve_exact(mdp)
    opt_rows = policy_rows(mdp, sol.policy)
    errors = trace.values - sol.values
    worst = 0.0
    worst_eq = 0.0
    eq_checks = 0
    for t in range(trace.iterations):
        ids = trace.policies[t]
        rows = np.array([mdp.row_of[a] for a in ids], dtype=np.intp)
        bound = mdp.gamma * (mdp.P[rows] @ errors[t])
        diff = errors[t + 1] - bound
        worst = max(worst, float(np.max(diff)))
        agree = rows == opt_rows
        if np.any(agree):
            eq_checks += int(agree.sum())
            worst_eq = max(worst_eq, float(np.max(np.abs(diff[agree]))))
    return ErrorRecursionReport(
        steps=trace.iterations,
        max_violation=worst,
        max_equality_gap=worst_eq,
        equality_checks=eq_checks,
    )


def check_update_sandwich(
    mdp: Mdp, trace: RunTrace, solution: ExactSolution | None = None
) -> float:
    """Worst violation of gamma*P*V_t <= V_{t+1} <= gamma*P_t V_t.

    Valid for standard runs on normalized MDPs, where optimal rewards are 0
    and all rewards are <= 0.
    """
    sol = solution or solve_exact(mdp)
    if float(np.max(np.abs(sol.values))) > NORMALIZED_TOL:
        raise AssumptionError("update sandwich requires a normalized MDP")
    p_star = mdp.P[policy_rows(mdp, sol.policy)]
    worst = 0.0
    for t in range(trace.iterations):
        ids = trace.policies[t]
        rows = np.array([mdp.row_of[a] for a in ids], dtype=np.intp)
        lower = mdp.gamma * (p_star @ trace.values[t])
        upper = mdp.gamma * (mdp.P[rows] @ trace.values[t])
        v_next = trace.values[t + 1]
        worst = max(worst, float(np.max(lower - v_next)), float(np.max(v_next - upper)))
    return worst


@dataclass(frozen=True)
class MixingBoundReport:
    """Measured mixing coefficients against their certified lower bound."""

    checked: int
    skipped: int
    min_margin: float


def check_mixing_bound(
    mdp: Mdp, trace: RunTrace, solution: ExactSolution | None = None
) -> MixingBoundReport:
    """Lower-bound check for the diagonal mixing coefficients of a run.

    For every state and step where the greedy choice differs from the
    optimal action, the scalar d solving

        V_{t+1}(s) = gamma * (d * (P* V_t)(s) + (1 - d) * (P_t V_t)(s))

    must be at least delta / (gamma * span(V_t)).  Steps where the two
    backups coincide leave d undetermined and are skipped (counted).
    Requires a normalized MDP.
    """
    sol = solution or solve_exact(mdp)
    if float(np.max(np.abs(sol.values))) > NORMALIZED_TOL:
        raise AssumptionError("mixing bound requires a normalized MDP")
    opt_rows = policy_rows(mdp, sol.policy)
    p_star = mdp.P[opt_rows]
    checked = 0
    skipped = 0
    min_margin = float("inf")
    for t in range(trace.iterations):
        v = trace.values[t]
        sp = span(v)
        if sp <= 1e-13:
            skipped += mdp.n_states
            continue
        ids = trace.policies[t]
        rows = np.array([mdp.row_of[a] for a in ids], dtype=np.intp)
        star = p_star @ v
        cur = mdp.P[rows] @ v
        for s in range(mdp.n_states):
            if rows[s] == opt_rows[s]:
                continue
            denom = mdp.gamma * (cur[s] - star[s])
            if abs(denom) < 1e-12:
                skipped += 1
                continue
            d = (mdp.gamma * cur[s] - trace.values[t + 1][s]) / denom
            margin = d - sol.delta / (mdp.gamma * sp)
            checked += 1
            min_margin = min(min_margin, float(margin))
    return MixingBoundReport(checked=checked, skipped=skipped, min_margin=min_margin)
