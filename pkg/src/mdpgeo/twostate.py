"""Set dynamics of policy iteration on two-state MDPs.

An action set covering both states forms the set of all policies it can
assemble; a policy set produces, per policy and state, the actions of
maximal advantage.  Iterating form/produce from the full action set loses
at least one action per round whenever three or more actions remain, which
bounds Howard iteration counts by the number of actions.  The loss is
witnessed constructively: two auxiliary self-loop actions pinned to the
extreme-slope policies sandwich one concrete action's advantage below a
surviving action's advantage on every formed policy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .core import Mdp, ModelError, Policy, validate

__all__ = [
    "InefficiencyCertificate",
    "PiBoundReport",
    "formed_policies",
    "inefficiency_certificate",
    "produced_actions",
    "set_dynamics",
    "verify_pi_bound",
]

TIE_TOL = 1e-9
DEGENERATE_TOL = 1e-9


def _require_two_state(mdp: Mdp) -> None:
    if mdp.n_states != 2:
        raise ModelError(f"operation is defined for 2-state MDPs, got n={mdp.n_states}")


def _check_action_set(mdp: Mdp, action_ids) -> tuple[tuple[str, ...], tuple[str, ...]]:
    ids = sorted(str(a) for a in action_ids)
    per_state: list[list[str]] = [[], []]
    for aid in ids:
        a = mdp.action(aid)
        per_state[a.state].append(aid)
    if not per_state[0] or not per_state[1]:
        raise ModelError("action set must contain actions on both states")
    return tuple(per_state[0]), tuple(per_state[1])


def formed_policies(mdp: Mdp, action_ids) -> tuple[Policy, ...]:
    """All cross-product policies of an action set, each exactly evaluated.

    Evaluation uses the closed form of the 2x2 linear system, vectorized
    over all pairs (it matches the dense solve to machine precision and the
    exhaustive suites call this in bulk).
    """
    _require_two_state(mdp)
    ids0, ids1 = _check_action_set(mdp, action_ids)
    g = mdp.gamma
    r0 = np.array([mdp.rewards[mdp.row_of[a]] for a in ids0])
    p0 = np.array([mdp.P[mdp.row_of[a]] for a in ids0])
    r1 = np.array([mdp.rewards[mdp.row_of[a]] for a in ids1])
    p1 = np.array([mdp.P[mdp.row_of[a]] for a in ids1])
    a00 = (1.0 - g * p0[:, 0])[:, None]  # rows: choice at state 0
    a01 = (g * p0[:, 1])[:, None]
    b10 = (g * p1[:, 0])[None, :]  # cols: choice at state 1
    b11 = (1.0 - g * p1[:, 1])[None, :]
    det = a00 * b11 - a01 * b10
    v0 = (r0[:, None] * b11 + a01 * r1[None, :]) / det
    v1 = (r1[None, :] * a00 + b10 * r0[:, None]) / det
    out = []
    for i, j in itertools.product(range(len(ids0)), range(len(ids1))):
        values = np.array([v0[i, j], v1[i, j]])
        out.append(Policy(choice=(ids0[i], ids1[j]), values=values))
    return tuple(out)


def produced_actions(mdp: Mdp, policies, action_ids) -> frozenset[str]:
    """Actions of maximal advantage on some policy of the set, within the set.

    Per policy and state, every action tied with the maximum within 1e-9 is
    included, so the elimination claim is tested against the superset.
    """
    _require_two_state(mdp)
    ids0, ids1 = _check_action_set(mdp, action_ids)
    out: set[str] = set()
    for pol in policies:
        adv = mdp.rewards + mdp.coeffs @ pol.values
        for ids in (ids0, ids1):
            rows = [mdp.row_of[a] for a in ids]
            best = max(adv[k] for k in rows)
            out.update(ids[j] for j, k in enumerate(rows) if adv[k] >= best - TIE_TOL)
    return frozenset(out)


def set_dynamics(mdp: Mdp, action_ids=None) -> list[frozenset[str]]:
    """Iterate produce(form(.)) from an action set until it stops shrinking."""
    _require_two_state(mdp)
    current = frozenset(mdp.ids) if action_ids is None else frozenset(map(str, action_ids))
    sets = [current]
    while len(current) > mdp.n_states:
        nxt = produced_actions(mdp, formed_policies(mdp, current), current)
        sets.append(nxt)
        if len(nxt) >= len(current):
            break
        current = nxt
    return sets


@dataclass(frozen=True)
class InefficiencyCertificate:
    """A concrete never-produced action, with the inequalities that prove it.

    The chain is evaluated once per formed policy:

        adv(dropped, pi) <= adv(aux_low, pi) < adv(aux_high, pi) <= adv(kept, pi)

    where the two auxiliary actions are self-loops at ``state`` whose rewards
    put them on the extreme-slope policies' lines there.  ``reading`` records
    how the state was selected: by the larger per-state value gap between the
    two extreme policies.  Degenerate instances (all slopes equal within
    tolerance) get no named action; every formed policy then produces the
    same maximizers, so the dynamics converge in one round.
    """

    degenerate: bool
    slope_gap: float
    reading: str = "extreme-policy-per-state-value-gap"
    state: int | None = None
    inefficient_action: str | None = None
    surviving_action: str | None = None
    pi_low: tuple[str, ...] | None = None
    pi_high: tuple[str, ...] | None = None
    aux_low_reward: float | None = None
    aux_high_reward: float | None = None
    chain_rows: tuple[tuple[tuple[str, ...], float, float, float, float], ...] = ()
    min_margins: tuple[float, float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "degenerate": self.degenerate,
            "slope_gap": self.slope_gap,
            "reading": self.reading,
            "state": self.state,
            "inefficient_action": self.inefficient_action,
            "surviving_action": self.surviving_action,
            "pi_low": list(self.pi_low) if self.pi_low else None,
            "pi_high": list(self.pi_high) if self.pi_high else None,
            "aux_low_reward": self.aux_low_reward,
            "aux_high_reward": self.aux_high_reward,
            "min_margins": list(self.min_margins) if self.min_margins else None,
        }


def _self_loop_advantage(gamma: float, reward: float, state: int, values: np.ndarray) -> float:
    return reward + (gamma - 1.0) * float(values[state])


def inefficiency_certificate(mdp: Mdp, action_ids=None) -> InefficiencyCertificate:
    """Name one action the given set can never produce, with proof margins.

    Needs at least three actions.  The two extreme policies by value slope
    V(0) - V(1) are located; the state where the min-slope policy sits above
    the max-slope policy by the larger gap is selected; the lower policy's
    action there is the named casualty, the higher policy's action there the
    survivor that dominates it.
    """
    _require_two_state(mdp)
    ids = frozenset(mdp.ids) if action_ids is None else frozenset(map(str, action_ids))
    if len(ids) < 3:
        raise ModelError(f"inefficiency certificate needs |A| >= 3, got {len(ids)}")
    policies = formed_policies(mdp, ids)
    slopes = np.array([p.values[0] - p.values[1] for p in policies])
    pi_l = policies[int(np.argmax(slopes))]  # largest slope
    pi_r = policies[int(np.argmin(slopes))]  # smallest slope
    slope_gap = float(np.max(slopes) - np.min(slopes))
    if slope_gap <= DEGENERATE_TOL:
        return InefficiencyCertificate(degenerate=True, slope_gap=slope_gap)

    # gap at state 1: min-slope policy above max-slope policy there;
    # gap at state 0: max-slope policy above min-slope policy there.
    # The two gaps sum to the slope gap, so the larger one is positive.
    gap1 = float(pi_r.values[1] - pi_l.values[1])
    gap0 = float(pi_l.values[0] - pi_r.values[0])
    if gap1 >= gap0:
        state, low, high = 1, pi_l, pi_r
    else:
        state, low, high = 0, pi_r, pi_l
    dropped = low.choice[state]
    kept = high.choice[state]
    g = mdp.gamma
    r_low = (1.0 - g) * float(low.values[state])
    r_high = (1.0 - g) * float(high.values[state])

    rows = []
    margins = [np.inf, np.inf, np.inf]
    adv_all = mdp.rewards[:, None] + mdp.coeffs @ np.vstack([p.values for p in policies]).T
    k_drop, k_keep = mdp.row_of[dropped], mdp.row_of[kept]
    for j, pol in enumerate(policies):
        a_c = float(adv_all[k_drop, j])
        a_low = _self_loop_advantage(g, r_low, state, pol.values)
        a_high = _self_loop_advantage(g, r_high, state, pol.values)
        a_b = float(adv_all[k_keep, j])
        rows.append((pol.choice, a_c, a_low, a_high, a_b))
        margins[0] = min(margins[0], a_low - a_c)
        margins[1] = min(margins[1], a_high - a_low)
        margins[2] = min(margins[2], a_b - a_high)
    return InefficiencyCertificate(
        degenerate=False,
        slope_gap=slope_gap,
        state=state,
        inefficient_action=dropped,
        surviving_action=kept,
        pi_low=low.choice,
        pi_high=high.choice,
        aux_low_reward=r_low,
        aux_high_reward=r_high,
        chain_rows=tuple(rows),
        min_margins=(float(margins[0]), float(margins[1]), float(margins[2])),
    )


@dataclass
class PiBoundReport:
    """Howard iteration counts from every start, plus the set-dynamics sizes."""

    action_count: int
    max_iterations: int
    iterations_by_start: dict[tuple[str, ...], int]
    set_sizes: list[int]
    violations: list[str]
    violation_instance: Mdp | None

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_pi_bound(mdp: Mdp) -> PiBoundReport:
    """Exhaustively check the action-count bound on one 2-state instance.

    Runs Howard iteration from every possible initial policy (sharing
    evaluations across starts, since the improvement step is a function of
    the policy alone) and asserts every count is at most the number of
    actions; also asserts the produce/form dynamics lose at least one action
    per round until only one action per state remains.  Violations are
    collected, not raised, and carry the instance for triage.
    """
    _require_two_state(mdp)
    validate(mdp)
    policies = formed_policies(mdp, mdp.ids)
    index = {p.choice: j for j, p in enumerate(policies)}
    vmat = np.vstack([p.values for p in policies])
    adv_all = mdp.rewards[:, None] + mdp.coeffs @ vmat.T

    ids0, ids1 = _check_action_set(mdp, mdp.ids)
    rows0 = [mdp.row_of[a] for a in ids0]
    rows1 = [mdp.row_of[a] for a in ids1]

    def improve(choice: tuple[str, ...]) -> tuple[str, ...]:
        j = index[choice]
        out = []
        for ids, rows, s in ((ids0, rows0, 0), (ids1, rows1, 1)):
            inc_row = mdp.row_of[choice[s]]
            best = max(adv_all[k, j] for k in rows)
            if adv_all[inc_row, j] >= best - TIE_TOL:
                out.append(choice[s])
            else:
                out.append(ids[int(np.argmax([adv_all[k, j] for k in rows]))])
        return tuple(out)

    next_map = {p.choice: improve(p.choice) for p in policies}
    depth: dict[tuple[str, ...], int] = {}

    def count_from(start: tuple[str, ...]) -> int:
        path = []
        on_path = set()
        cur = start
        while cur not in depth:
            if cur in on_path:  # improvement cycle; impossible without exact value ties
                for node in path:
                    depth[node] = mdp.m + 1
                break
            nxt = next_map[cur]
            if nxt == cur:
                depth[cur] = 1
                break
            path.append(cur)
            on_path.add(cur)
            cur = nxt
        base = depth[cur]
        for k, node in enumerate(reversed(path), start=1):
            depth.setdefault(node, base + k)
        return depth[start]

    violations: list[str] = []
    by_start = {p.choice: count_from(p.choice) for p in policies}
    worst = max(by_start.values())
    if worst > mdp.m:
        violations.append(
            f"policy iteration took {worst} iterations with only {mdp.m} actions"
        )

    sets = set_dynamics(mdp)
    sizes = [len(s) for s in sets]
    for a, b in zip(sizes, sizes[1:]):
        if a > mdp.n_states and b > a - 1:
            violations.append(f"set dynamics step lost no action: {a} -> {b}")
    return PiBoundReport(
        action_count=mdp.m,
        max_iterations=worst,
        iterations_by_start=by_start,
        set_sizes=sizes,
        violations=violations,
        violation_instance=mdp if violations else None,
    )
