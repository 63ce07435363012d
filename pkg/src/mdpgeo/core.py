"""Finite discounted MDPs with state-unique actions.

The model is deliberately small: an :class:`Mdp` is a discount factor plus a
flat tuple of :class:`Action` records, each owned by exactly one state.
Value vectors are bare float64 numpy arrays indexed by state.  Every action
embeds into an (n+1)-vector ``(reward, coeffs)`` whose coefficients are
``gamma * probs`` except at the action's own state, where 1 is subtracted;
the inner product of ``coeffs`` with a value vector plus the reward is the
action's advantage at those values.

All types are immutable after construction and every operation here is a
pure function of its inputs, so instances can be shared freely across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Action",
    "ActionVector",
    "Mdp",
    "ModelError",
    "Policy",
    "action_vector",
    "advantage",
    "advantages",
    "bellman_optimal",
    "bellman_policy",
    "policy_from_ids",
    "span",
    "validate",
]

ROW_SUM_TOL = 1e-12
COEFF_SUM_TOL = 1e-10


class ModelError(ValueError):
    """An MDP or one of its components violates a structural invariant."""


def span(v) -> float:
    """Max minus min of a value vector; zero for constants, always >= 0."""
    v = np.asarray(v, dtype=np.float64)
    return float(np.max(v) - np.min(v))


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def as_values(v, n_states: int) -> np.ndarray:
    """Coerce ``v`` to a finite float64 vector of length ``n_states``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n_states,):
        raise ModelError(f"value vector has shape {v.shape}, expected ({n_states},)")
    if not np.all(np.isfinite(v)):
        raise ModelError("value vector has non-finite entries")
    return v


@dataclass(frozen=True, eq=False)
class Action:
    """One action, owned by ``state``, with next-state distribution ``probs``."""

    id: str
    state: int
    probs: np.ndarray
    reward: float

    def __post_init__(self):
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "state", int(self.state))
        object.__setattr__(self, "probs", _freeze(np.array(self.probs, dtype=np.float64)))
        object.__setattr__(self, "reward", float(self.reward))


@dataclass(frozen=True)
class ActionVector:
    """Embedding of an action: reward plus per-state coefficients.

    ``coeffs`` sums to gamma - 1; the entry at the action's own state is the
    single non-positive one.
    """

    reward: float
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _freeze(np.array(self.coeffs, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class Mdp:
    """A discounted MDP: state count, actions, discount factor.

    Derived arrays (transition matrix, coefficient matrix, per-state action
    rows sorted by action id) are computed lazily and cached.  Construction
    does not validate; call :func:`validate` for the full invariant check.
    """

    n_states: int
    actions: tuple[Action, ...]
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "n_states", int(self.n_states))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "gamma", float(self.gamma))

    @cached_property
    def m(self) -> int:
        """Total number of actions."""
        return len(self.actions)

    @cached_property
    def ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.actions)

    @cached_property
    def rewards(self) -> np.ndarray:
        return _freeze(np.array([a.reward for a in self.actions], dtype=np.float64))

    @cached_property
    def state_of(self) -> np.ndarray:
        return _freeze(np.array([a.state for a in self.actions], dtype=np.intp))

    @cached_property
    def P(self) -> np.ndarray:
        """(m, n) matrix of next-state distributions, one row per action."""
        return _freeze(np.vstack([a.probs for a in self.actions]))

    @cached_property
    def coeffs(self) -> np.ndarray:
        """(m, n) coefficient matrix: gamma*P with 1 subtracted at own states."""
        c = self.gamma * self.P
        c[np.arange(self.m), self.state_of] -= 1.0
        return _freeze(c)

    @cached_property
    def state_rows(self) -> tuple[np.ndarray, ...]:
        """Per state, the action row indices sorted by action id."""
        buckets: list[list[tuple[str, int]]] = [[] for _ in range(self.n_states)]
        for k, a in enumerate(self.actions):
            if 0 <= a.state < self.n_states:
                buckets[a.state].append((a.id, k))
        return tuple(
            _freeze(np.array([k for _, k in sorted(b)], dtype=np.intp)) for b in buckets
        )

    @cached_property
    def row_of(self) -> dict[str, int]:
        return {a.id: k for k, a in enumerate(self.actions)}

    def action(self, action_id: str) -> Action:
        try:
            return self.actions[self.row_of[action_id]]
        except KeyError:
            raise ModelError(f"unknown action id {action_id!r}") from None

    def actions_at(self, state: int) -> tuple[Action, ...]:
        return tuple(self.actions[k] for k in self.state_rows[state])


@dataclass(frozen=True)
class Policy:
    """One action id per state; carries its evaluated values once solved.

    Equality and hashing use the choice tuple only, so policies compare by
    the actions they pick regardless of attached values.
    """

    choice: tuple[str, ...]
    values: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "choice", tuple(str(c) for c in self.choice))
        if self.values is not None:
            object.__setattr__(self, "values", _freeze(np.array(self.values, dtype=np.float64)))


def policy_from_ids(mdp: Mdp, ids: Sequence[str], values=None) -> Policy:
    """Build a policy from one action id per state, checking ownership."""
    ids = tuple(str(i) for i in ids)
    if len(ids) != mdp.n_states:
        raise ModelError(f"policy has {len(ids)} choices for {mdp.n_states} states")
    for s, aid in enumerate(ids):
        a = mdp.action(aid)
        if a.state != s:
            raise ModelError(f"action {aid!r} belongs to state {a.state}, not {s}")
    return Policy(choice=ids, values=values)


def policy_rows(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Row indices of a policy's actions, one per state."""
    return np.array([mdp.row_of[aid] for aid in policy.choice], dtype=np.intp)


def validate(mdp: Mdp) -> None:
    """Check every structural invariant; raise ModelError on the first failure.

    Checked: gamma strictly inside (0,1); unique action ids; each action has
    a known state, a proper distribution over next states (nonnegative,
    summing to 1 within 1e-12) and a finite reward; every state owns at
    least one action.
    """
    if mdp.n_states < 1:
        raise ModelError(f"n_states must be >= 1, got {mdp.n_states}")
    if not (0.0 < mdp.gamma < 1.0):
        raise ModelError(f"discount factor must lie strictly inside (0, 1), got {mdp.gamma}")
    seen: set[str] = set()
    for a in mdp.actions:
        if a.id in seen:
            raise ModelError(f"duplicate action id {a.id!r}")
        seen.add(a.id)
        if not (0 <= a.state < mdp.n_states):
            raise ModelError(f"action {a.id!r} names unknown state {a.state}")
        if a.probs.shape != (mdp.n_states,):
            raise ModelError(
                f"action {a.id!r} has probs of shape {a.probs.shape}, "
                f"expected ({mdp.n_states},)"
            )
        if not np.all(np.isfinite(a.probs)):
            raise ModelError(f"action {a.id!r} has non-finite probabilities")
        if np.any(a.probs < 0.0):
            raise ModelError(f"action {a.id!r} has a negative probability")
        rs = float(a.probs.sum())
        if abs(rs - 1.0) > ROW_SUM_TOL:
            raise ModelError(f"action {a.id!r} row sums to {rs!r}, not 1")
        if not np.isfinite(a.reward):
            raise ModelError(f"action {a.id!r} has non-finite reward")
    counts = np.zeros(mdp.n_states, dtype=int)
    for a in mdp.actions:
        counts[a.state] += 1
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        raise ModelError(f"state {int(empty[0])} has no actions")


def action_vector(mdp: Mdp, action_id: str) -> ActionVector:
    """Embed one action as (reward, coefficients)."""
    a = mdp.action(action_id)
    c = mdp.gamma * a.probs.copy()
    c[a.state] -= 1.0
    return ActionVector(reward=a.reward, coeffs=c)


def advantage(mdp: Mdp, action_id: str, v) -> float:
    """reward + coeffs . v for one action at values v."""
    v = as_values(v, mdp.n_states)
    k = mdp.row_of.get(action_id)
    if k is None:
        raise ModelError(f"unknown action id {action_id!r}")
    return float(mdp.rewards[k] + mdp.coeffs[k] @ v)


def advantages(mdp: Mdp, v) -> np.ndarray:
    """Advantages of all actions at values v, in action order."""
    v = as_values(v, mdp.n_states)
    return mdp.rewards + mdp.coeffs @ v


def bellman_policy(mdp: Mdp, policy: Policy, v) -> np.ndarray:
    """One application of the policy's backup: r_pi + gamma * P_pi v."""
    v = as_values(v, mdp.n_states)
    rows = policy_rows(mdp, policy)
    return mdp.rewards[rows] + mdp.gamma * (mdp.P[rows] @ v)


def active_mask(mdp: Mdp, active: Iterable[str] | np.ndarray | None) -> np.ndarray:
    """Boolean mask over action rows from either ids, a mask, or None (all)."""
    if active is None:
        return np.ones(mdp.m, dtype=bool)
    if isinstance(active, np.ndarray) and active.dtype == bool:
        if active.shape != (mdp.m,):
            raise ModelError(f"active mask has shape {active.shape}, expected ({mdp.m},)")
        return active
    mask = np.zeros(mdp.m, dtype=bool)
    for aid in active:
        k = mdp.row_of.get(str(aid))
        if k is None:
            raise ModelError(f"unknown action id {aid!r} in active set")
        mask[k] = True
    return mask


def bellman_optimal(
    mdp: Mdp, v, active: Iterable[str] | np.ndarray | None = None
) -> tuple[np.ndarray, Policy]:
    """Greedy backup: per state, the best one-step value over active actions.

    Ties are broken toward the lowest action id.  Returns the maximizing
    values and the argmax policy.
    """
    v = as_values(v, mdp.n_states)
    mask = active_mask(mdp, active)
    q = mdp.rewards + mdp.gamma * (mdp.P @ v)
    q = np.where(mask, q, -np.inf)
    out = np.empty(mdp.n_states)
    choice: list[str] = []
    for s in range(mdp.n_states):
        rows = mdp.state_rows[s]
        if rows.size == 0:
            raise ModelError(f"state {s} has no actions")
        vals = q[rows]
        j = int(np.argmax(vals))
        if vals[j] == -np.inf:
            raise ModelError(f"state {s} has no active action")
        out[s] = vals[j]
        choice.append(mdp.ids[rows[j]])
    return out, Policy(choice=tuple(choice))
