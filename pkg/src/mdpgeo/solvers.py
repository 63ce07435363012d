"""Value iteration in its general form, Howard policy iteration, exact solvers.

Value iteration supports a learning rate, synchronous and asynchronous
update schedules, three stopping rules (iteration budget, span of successive
differences, active-action count) plus a fourth stop on the span of the
values themselves, and an optional action filter that permanently discards
actions once they are provably suboptimal.

Policy iteration is the classic Howard variant: exact evaluation by a dense
linear solve, then simultaneous greedy improvement.  ``solve_exact`` wraps
it with a brute-force cross-check on small instances; the brute-force path
is kept deliberately independent (full policy enumeration, one linear solve
each) so it can serve as an oracle for everything else.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from hashlib import sha256
from math import ceil, log

import numpy as np

from .core import (
    Mdp,
    Policy,
    as_values,
    policy_from_ids,
    policy_rows,
    span,
    validate,
)

__all__ = [
    "ConfigError",
    "ConsistencyError",
    "ExactSolution",
    "PiTrace",
    "RunTrace",
    "SolverError",
    "ViConfig",
    "brute_force_solve",
    "evaluate_policy",
    "filter_appendix",
    "hard_iteration_cap",
    "policy_iteration",
    "solve_exact",
    "value_iteration",
]

PI_TIE_TOL = 1e-9
BRUTE_MAX_STATES = 3
BRUTE_MAX_ACTIONS = 12


class ConfigError(ValueError):
    """A solver configuration violates one of its invariants."""


class SolverError(RuntimeError):
    """A solver run failed (for reasons other than configuration)."""


class ConsistencyError(RuntimeError):
    """Two independent solution routes disagree beyond tolerance."""


def hard_iteration_cap(gamma: float) -> int:
    """Generous multiple of the classical worst-case iteration count."""
    eps_machine = np.finfo(np.float64).eps
    return 10 * ceil(log(1.0 / eps_machine) / log(1.0 / gamma))


@dataclass(frozen=True)
class ViConfig:
    """Configuration for :func:`value_iteration`.

    stop: "time" (run exactly ``t_max`` updates), "span" (successive
    difference span <= eps*(1-gamma)/gamma), "value_span" (value span drops
    under eps*(1-gamma)/(gamma*(1+gamma))), or "actions" (active set is down
    to one action per state; requires the filter).

    schedule: "sync" updates every state, "round_robin" updates
    ``round_robin_k`` states per iteration in fixed index order, "explicit"
    cycles through ``explicit_sets``.

    v0: "zeros", "upper_bound" (constant 1/(1-gamma)), or "given" with
    ``v0_values``.
    """

    alpha: float = 1.0
    stop: str = "span"
    t_max: int | None = None
    epsilon: float | None = None
    filter: str = "none"
    schedule: str = "sync"
    round_robin_k: int = 1
    explicit_sets: tuple[tuple[int, ...], ...] | None = None
    v0: str = "zeros"
    v0_values: tuple[float, ...] | None = None
    record_wall_clock: bool = False

    def validate_for(self, mdp: Mdp) -> None:
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.stop not in ("time", "span", "value_span", "actions"):
            raise ConfigError(f"unknown stop rule {self.stop!r}")
        if self.stop == "time":
            if self.t_max is None or self.t_max < 0:
                raise ConfigError("time stop requires t_max >= 0")
        if self.stop in ("span", "value_span"):
            if self.epsilon is None or not (self.epsilon > 0.0):
                raise ConfigError(f"{self.stop} stop requires epsilon > 0")
        if self.stop == "actions" and self.filter == "none":
            raise ConfigError("action-count stop requires a filter")
        if self.filter not in ("none", "appendix"):
            raise ConfigError(f"unknown filter {self.filter!r}")
        if self.schedule not in ("sync", "round_robin", "explicit"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "round_robin" and not (1 <= self.round_robin_k <= mdp.n_states):
            raise ConfigError("round_robin_k must lie in [1, n_states]")
        if self.schedule == "explicit":
            if not self.explicit_sets:
                raise ConfigError("explicit schedule requires at least one state set")
            for group in self.explicit_sets:
                for s in group:
                    if not (0 <= s < mdp.n_states):
                        raise ConfigError(f"explicit schedule names unknown state {s}")
        if self.v0 not in ("zeros", "upper_bound", "given"):
            raise ConfigError(f"unknown v0 choice {self.v0!r}")
        if self.v0 == "given" and self.v0_values is None:
            raise ConfigError("v0='given' requires v0_values")
        if self.filter == "appendix":
            if np.any(mdp.rewards < -1e-12) or np.any(mdp.rewards > 1.0 + 1e-12):
                raise ConfigError("the action filter requires all rewards in [0, 1]")
            if self.v0 != "upper_bound":
                raise ConfigError("the action filter requires v0='upper_bound'")
            if self.alpha != 1.0 or self.schedule != "sync":
                raise ConfigError("the action filter requires alpha=1 and a sync schedule")

    def initial_values(self, mdp: Mdp) -> np.ndarray:
        if self.v0 == "zeros":
            return np.zeros(mdp.n_states)
        if self.v0 == "upper_bound":
            return np.full(mdp.n_states, 1.0 / (1.0 - mdp.gamma))
        return as_values(np.array(self.v0_values, dtype=np.float64), mdp.n_states)

    def states_for(self, t: int, n: int) -> np.ndarray:
        if self.schedule == "sync":
            return np.arange(n)
        if self.schedule == "round_robin":
            k = self.round_robin_k
            return (t * k + np.arange(k)) % n
        sets = self.explicit_sets
        return np.array(sorted(set(sets[t % len(sets)])), dtype=np.intp)


@dataclass
class RunTrace:
    """Everything recorded along one value-iteration run.

    Row t of ``values`` is V_t, so there are iterations+1 rows.  ``policies``
    holds the greedy policy computed at V_t for each performed update
    (length = iterations), ``filtered`` the ids discarded by that update's
    filtering pass.  Wall-clock timings stay in memory only; serialized
    traces are deterministic.
    """

    gamma: float
    alpha: float
    schedule: str
    values: np.ndarray
    span_v: np.ndarray
    span_dv: np.ndarray
    active_counts: np.ndarray
    policies: tuple[tuple[str, ...], ...]
    filtered: tuple[tuple[str, ...], ...]
    stop_reason: str
    final_policy: Policy | None
    wall_clock: np.ndarray | None = None

    @property
    def iterations(self) -> int:
        return self.values.shape[0] - 1

    @property
    def converged(self) -> bool:
        return self.stop_reason != "cap"

    def content_hash(self) -> str:
        """Stable digest of the deterministic trace payload."""
        h = sha256()
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update(np.ascontiguousarray(self.active_counts).tobytes())
        h.update(self.stop_reason.encode())
        return h.hexdigest()


def filter_appendix(mdp: Mdp, t: int, v, active: np.ndarray) -> tuple[np.ndarray, tuple[str, ...]]:
    """Drop actions whose optimal-values advantage is provably negative.

    ``v`` must be the iterate V_t of a standard run started from the
    constant upper bound 1/(1-gamma) on an MDP with rewards in [0, 1]; under
    those preconditions the error at time t is at most gamma^t/(1-gamma) in
    every coordinate, its span is too, and an action can be discarded once

        adv(a, V_t) + (1 - gamma * p^a_own) * gamma^t / (1 - gamma) < 0.

    The slack combines the worst-case drift of the advantage, gamma times
    the cross-state error span weighted by (1 - p_own) plus (1 - gamma)
    times the own-state error; a plain (1 - p_own) weight would understate
    it for self-loop-heavy actions and could discard an optimal action.
    The last surviving action of a state is never dropped.  Returns the new
    mask and the ids that were dropped.
    """
    v = as_values(v, mdp.n_states)
    adv = mdp.rewards + mdp.coeffs @ v
    p_own = mdp.P[np.arange(mdp.m), mdp.state_of]
    bound = (1.0 - mdp.gamma * p_own) * mdp.gamma**t / (1.0 - mdp.gamma)
    drop = active & (adv + bound < 0.0)
    if not np.any(drop):
        return active, ()
    new = active & ~drop
    for s in range(mdp.n_states):
        rows = mdp.state_rows[s]
        if not np.any(new[rows]):
            keep = rows[np.argmax(np.where(active[rows], adv[rows], -np.inf))]
            new[keep] = True
            drop[keep] = False
    removed = tuple(mdp.ids[k] for k in np.nonzero(drop)[0])
    return new, removed


def _greedy(mdp: Mdp, q: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """Per-state max and argmax ids of a masked action-value vector."""
    u = np.empty(mdp.n_states)
    ids: list[str] = []
    for s in range(mdp.n_states):
        rows = mdp.state_rows[s]
        vals = q[rows]
        j = int(np.argmax(vals))
        if vals[j] == -np.inf:
            raise SolverError(f"state {s} has no active action")
        u[s] = vals[j]
        ids.append(mdp.ids[rows[j]])
    return u, ids


def value_iteration(mdp: Mdp, cfg: ViConfig) -> RunTrace:
    """Run the general value-iteration loop until a stop rule fires.

    Each iteration greedily backs up the current values over the active
    action set, blends with the learning rate on the scheduled states, then
    applies the filter.  Non-time stops are additionally guarded by a hard
    iteration cap; hitting it ends the run with stop_reason="cap".
    """
    validate(mdp)
    cfg.validate_for(mdp)
    n = mdp.n_states
    gamma, alpha = mdp.gamma, cfg.alpha

    v = cfg.initial_values(mdp)
    active = np.ones(mdp.m, dtype=bool)
    cap = None if cfg.stop == "time" else hard_iteration_cap(gamma)

    values = [v]
    span_v = [span(v)]
    span_dv = [np.nan]
    counts = [mdp.m]
    policies: list[tuple[str, ...]] = []
    filtered: list[tuple[str, ...]] = []
    wall: list[float] = []

    if cfg.stop == "span":
        threshold = cfg.epsilon * (1.0 - gamma) / gamma
    elif cfg.stop == "value_span":
        threshold = cfg.epsilon * (1.0 - gamma) / (gamma * (1.0 + gamma))

    def should_stop(t: int) -> str | None:
        if cfg.stop == "time":
            return "time" if t == cfg.t_max else None
        if cfg.stop == "span":
            return "span" if t >= 1 and span_dv[t] <= threshold else None
        if cfg.stop == "value_span":
            return "value_span" if span_v[t] < threshold else None
        return "actions" if counts[t] == n else None

    t = 0
    stop_reason = None
    while True:
        stop_reason = should_stop(t)
        if stop_reason is not None:
            break
        if cap is not None and t >= cap:
            stop_reason = "cap"
            break
        t0 = time.perf_counter() if cfg.record_wall_clock else 0.0
        sel = cfg.states_for(t, n)
        q = mdp.rewards + gamma * (mdp.P @ v)
        q = np.where(active, q, -np.inf)
        u, greedy_ids = _greedy(mdp, q)
        v_new = v.copy()
        v_new[sel] = (1.0 - alpha) * v[sel] + alpha * u[sel]
        removed: tuple[str, ...] = ()
        if cfg.filter == "appendix":
            active, removed = filter_appendix(mdp, t + 1, v_new, active)
        values.append(v_new)
        span_v.append(span(v_new))
        span_dv.append(span(v_new - v))
        counts.append(int(active.sum()))
        policies.append(tuple(greedy_ids))
        filtered.append(removed)
        if cfg.record_wall_clock:
            wall.append(time.perf_counter() - t0)
        v = v_new
        t += 1

    _, final = bellman_optimal_masked(mdp, v, active)
    return RunTrace(
        gamma=gamma,
        alpha=alpha,
        schedule=cfg.schedule,
        values=np.vstack(values),
        span_v=np.array(span_v),
        span_dv=np.array(span_dv),
        active_counts=np.array(counts, dtype=np.intp),
        policies=tuple(policies),
        filtered=tuple(filtered),
        stop_reason=stop_reason,
        final_policy=final,
        wall_clock=np.array(wall) if cfg.record_wall_clock else None,
    )


def bellman_optimal_masked(mdp: Mdp, v, active: np.ndarray) -> tuple[np.ndarray, Policy]:
    q = mdp.rewards + mdp.gamma * (mdp.P @ v)
    q = np.where(active, q, -np.inf)
    u, ids = _greedy(mdp, q)
    return u, Policy(choice=tuple(ids))


def evaluate_policy(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Exact policy values via the dense linear solve (I - gamma P) V = r."""
    rows = policy_rows(mdp, policy)
    return evaluate_rows(mdp, rows)


def evaluate_rows(mdp: Mdp, rows: np.ndarray) -> np.ndarray:
    p = mdp.P[rows]
    r = mdp.rewards[rows]
    try:
        return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p, r)
    except np.linalg.LinAlgError as exc:  # cannot occur for gamma < 1, guarded anyway
        raise SolverError(f"policy evaluation solve failed: {exc}") from exc


@dataclass
class PiTrace:
    """Policies and their exact values along a policy-iteration run."""

    policies: tuple[tuple[str, ...], ...]
    values: np.ndarray
    iterations: int


def _improve(mdp: Mdp, rows: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Greedy improvement; the incumbent survives ties within tolerance."""
    adv = mdp.rewards + mdp.coeffs @ v
    out = rows.copy()
    for s in range(mdp.n_states):
        cand = mdp.state_rows[s]
        best = float(np.max(adv[cand]))
        if adv[rows[s]] >= best - PI_TIE_TOL:
            continue
        out[s] = cand[int(np.argmax(adv[cand]))]
    return out


def policy_iteration(mdp: Mdp, pi0: Policy) -> tuple[Policy, PiTrace]:
    """Howard policy iteration: evaluate exactly, improve everywhere, repeat.

    Stops when the improved policy equals the current one.  The iteration
    count includes that confirming round, so a fixed point costs one
    iteration.
    """
    validate(mdp)
    rows = policy_rows(mdp, policy_from_ids(mdp, pi0.choice))
    pols: list[tuple[str, ...]] = []
    vals: list[np.ndarray] = []
    while True:
        v = evaluate_rows(mdp, rows)
        pols.append(tuple(mdp.ids[k] for k in rows))
        vals.append(v)
        nxt = _improve(mdp, rows, v)
        if np.array_equal(nxt, rows):
            break
        rows = nxt
    final = Policy(choice=pols[-1], values=vals[-1])
    return final, PiTrace(policies=tuple(pols), values=np.vstack(vals), iterations=len(pols))


def brute_force_solve(mdp: Mdp) -> tuple[Policy, np.ndarray]:
    """Enumerate every policy, evaluate each exactly, return the dominant one.

    Restricted to small instances (n <= 3, m <= 12); this is the independent
    oracle used by tests and cross-checks, so it deliberately shares nothing
    with policy iteration beyond the linear solve.
    """
    validate(mdp)
    if mdp.n_states > BRUTE_MAX_STATES or mdp.m > BRUTE_MAX_ACTIONS:
        raise ValueError(
            f"brute force is limited to n <= {BRUTE_MAX_STATES} and "
            f"m <= {BRUTE_MAX_ACTIONS}; got n={mdp.n_states}, m={mdp.m}"
        )
    combos = list(itertools.product(*[tuple(r) for r in mdp.state_rows]))
    all_vals = np.vstack([evaluate_rows(mdp, np.array(c, dtype=np.intp)) for c in combos])
    v_star = all_vals.max(axis=0)
    dominant = [
        i for i, vals in enumerate(all_vals) if np.all(vals >= v_star - 1e-9)
    ]
    if not dominant:
        raise ConsistencyError("no policy dominates componentwise; model is inconsistent")
    best = min(dominant, key=lambda i: tuple(mdp.ids[k] for k in combos[i]))
    ids = tuple(mdp.ids[k] for k in combos[best])
    return Policy(choice=ids, values=all_vals[best]), all_vals[best]


@dataclass(frozen=True)
class ExactSolution:
    """Optimal policy and values plus the optimality gap of the runner-up.

    ``delta`` is minus the largest advantage among actions outside the
    policy (infinite when there are none); the optimum is unique exactly
    when delta is positive beyond tolerance.
    """

    policy: Policy
    values: np.ndarray
    delta: float
    unique: bool
    brute_checked: bool


def solve_exact(mdp: Mdp, brute_check: bool | None = None) -> ExactSolution:
    """Solve by Howard iteration from the per-state max-reward policy.

    On small instances (or when ``brute_check`` is forced on) the answer is
    cross-checked against full policy enumeration; disagreement beyond 1e-8
    raises ConsistencyError.
    """
    validate(mdp)
    start_ids = []
    for s in range(mdp.n_states):
        rows = mdp.state_rows[s]
        start_ids.append(mdp.ids[rows[int(np.argmax(mdp.rewards[rows]))]])
    pol, _ = policy_iteration(mdp, Policy(choice=tuple(start_ids)))
    values = pol.values

    if brute_check is None:
        brute_check = mdp.n_states <= BRUTE_MAX_STATES and mdp.m <= BRUTE_MAX_ACTIONS
    if brute_check:
        _, brute_vals = brute_force_solve(mdp)
        err = float(np.max(np.abs(values - brute_vals)))
        if err > 1e-8:
            raise ConsistencyError(
                f"policy iteration and brute force disagree by {err:.3e}"
            )

    adv = mdp.rewards + mdp.coeffs @ values
    chosen = np.zeros(mdp.m, dtype=bool)
    chosen[policy_rows(mdp, pol)] = True
    others = adv[~chosen]
    delta = float("inf") if others.size == 0 else float(-np.max(others))
    return ExactSolution(
        policy=pol,
        values=values,
        delta=delta,
        unique=bool(delta > PI_TIE_TOL),
        brute_checked=bool(brute_check),
    )
