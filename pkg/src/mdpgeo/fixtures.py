"""Small hand-built MDPs used across the test-suite and the docs."""

from __future__ import annotations

from .core import Action, Mdp

__all__ = ["m2", "m2_mix"]


def m2() -> Mdp:
    """Two states, gamma 0.9, deterministic moves; optimal policy (a2, b1).

    State 0: a1 self-loop with reward 0, a2 jumps to state 1 with reward 0.5.
    State 1: b1 jumps to state 0 with reward 0.2, b2 self-loop with reward 0.
    Optimal values are (0.68/0.19, 0.65/0.19) ~ (3.5789, 3.4211).
    """
    return Mdp(
        n_states=2,
        actions=(
            Action(id="a1", state=0, probs=(1.0, 0.0), reward=0.0),
            Action(id="a2", state=0, probs=(0.0, 1.0), reward=0.5),
            Action(id="b1", state=1, probs=(1.0, 0.0), reward=0.2),
            Action(id="b2", state=1, probs=(0.0, 1.0), reward=0.0),
        ),
        gamma=0.9,
    )


def m2_mix() -> Mdp:
    """Two states, gamma 0.9, mixing optimal rows; optimal policy (a1, b1).

    Optimal values are exactly (9.1, 8.9); the runner-up gap is 0.01 and the
    optimal transition matrix is the all-halves matrix (positive in one
    step, minimum entry 0.5).
    """
    return Mdp(
        n_states=2,
        actions=(
            Action(id="a1", state=0, probs=(0.5, 0.5), reward=1.0),
            Action(id="a2", state=0, probs=(1.0, 0.0), reward=0.9),
            Action(id="b1", state=1, probs=(0.5, 0.5), reward=0.8),
            Action(id="b2", state=1, probs=(0.0, 1.0), reward=0.0),
        ),
        gamma=0.9,
    )
