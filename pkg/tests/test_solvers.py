import numpy as np
import pytest
from hypothesis import given

from mdpgeo.core import Action, Mdp, Policy, advantages, policy_from_ids, span
from mdpgeo.fixtures import m2, m2_mix
from mdpgeo.gen import GenSpec, generate
from mdpgeo.solvers import (
    ConfigError,
    ViConfig,
    brute_force_solve,
    evaluate_policy,
    filter_appendix,
    hard_iteration_cap,
    policy_iteration,
    solve_exact,
    value_iteration,
)
from mdpgeo.transforms import apply_J, normalize

from conftest import mdps


class TestViConfig:
    def test_span_needs_epsilon(self):
        with pytest.raises(ConfigError, match="epsilon"):
            value_iteration(m2(), ViConfig(stop="span"))

    def test_actions_needs_filter(self):
        with pytest.raises(ConfigError, match="requires a filter"):
            value_iteration(m2(), ViConfig(stop="actions"))

    def test_filter_needs_bounded_rewards(self):
        bad = Mdp(1, (Action("a", 0, (1.0,), -0.5), Action("b", 0, (1.0,), 0.1)), 0.9)
        cfg = ViConfig(stop="actions", filter="appendix", v0="upper_bound")
        with pytest.raises(ConfigError, match="rewards"):
            value_iteration(bad, cfg)

    def test_filter_needs_upper_bound_start(self):
        cfg = ViConfig(stop="actions", filter="appendix", v0="zeros")
        with pytest.raises(ConfigError, match="upper_bound"):
            value_iteration(m2(), cfg)

    def test_alpha_range(self):
        with pytest.raises(ConfigError, match="alpha"):
            value_iteration(m2(), ViConfig(alpha=0.0, stop="time", t_max=1))


class TestValueIteration:
    def test_first_step_from_zeros(self):
        trace = value_iteration(m2_mix(), ViConfig(stop="time", t_max=1))
        np.testing.assert_allclose(trace.values[1], [1.0, 0.8])
        assert trace.policies[0] == ("a1", "b1")

    def test_fixed_point_stops_immediately(self):
        mdp = m2_mix()
        sol = solve_exact(mdp)
        cfg = ViConfig(stop="span", epsilon=1e-12, v0="given", v0_values=tuple(sol.values))
        trace = value_iteration(mdp, cfg)
        assert trace.stop_reason == "span"
        assert trace.iterations == 1
        assert trace.span_dv[1] <= 1e-9

    def test_zero_budget_records_only_start(self):
        trace = value_iteration(m2(), ViConfig(stop="time", t_max=0))
        assert trace.iterations == 0
        assert trace.values.shape == (1, 2)
        assert trace.final_policy.choice == ("a2", "b1")  # greedy at zeros = max reward
        assert trace.stop_reason == "time"

    def test_monotone_error_decay(self):
        for seed in range(6):
            mdp = generate(GenSpec(n_states=3, gamma=0.9, seed=500 + seed))
            sol = solve_exact(mdp)
            trace = value_iteration(mdp, ViConfig(stop="time", t_max=25))
            errors = [span(v - sol.values) for v in trace.values]
            for t, err in enumerate(errors):
                assert err <= mdp.gamma**t * errors[0] + 1e-9

    def test_round_robin_touches_one_state_per_sweep(self):
        mdp = m2_mix()
        cfg = ViConfig(stop="time", t_max=4, schedule="round_robin", round_robin_k=1)
        trace = value_iteration(mdp, cfg)
        for t in range(4):
            untouched = 1 - (t % 2)
            assert trace.values[t + 1][untouched] == trace.values[t][untouched]

    def test_explicit_schedule_and_cap(self):
        mdp = m2_mix()
        cfg = ViConfig(
            stop="value_span",
            epsilon=1e-9,
            schedule="explicit",
            explicit_sets=((0,),),
            v0="given",
            v0_values=(0.0, 5.0),
        )
        trace = value_iteration(mdp, cfg)
        assert trace.stop_reason == "cap"
        assert not trace.converged
        assert trace.iterations == hard_iteration_cap(mdp.gamma)
        assert np.all(trace.values[:, 1] == 5.0)

    def test_value_span_stop(self):
        norm, _, _ = normalize(m2_mix())
        cfg = ViConfig(stop="value_span", epsilon=1e-3, v0="given", v0_values=(1.0, 0.0))
        trace = value_iteration(norm, cfg)
        assert trace.stop_reason == "value_span"
        threshold = 1e-3 * (1 - 0.9) / (0.9 * 1.9)
        assert trace.span_v[-1] < threshold

    def test_trace_invariants(self):
        cfg = ViConfig(stop="actions", filter="appendix", v0="upper_bound")
        trace = value_iteration(m2(), cfg)
        assert np.all(trace.span_v >= 0)
        assert np.all(np.diff(trace.active_counts) <= 0)
        assert np.all(trace.active_counts >= 2)

    def test_learning_rate_blend(self):
        mdp = m2_mix()
        full = value_iteration(mdp, ViConfig(stop="time", t_max=1))
        half = value_iteration(mdp, ViConfig(alpha=0.5, stop="time", t_max=1))
        np.testing.assert_allclose(half.values[1], 0.5 * full.values[1])

    def test_wall_clock_recording_is_opt_in(self):
        mdp = m2_mix()
        bare = value_iteration(mdp, ViConfig(stop="time", t_max=3))
        assert bare.wall_clock is None
        timed = value_iteration(mdp, ViConfig(stop="time", t_max=3, record_wall_clock=True))
        assert timed.wall_clock.shape == (3,)
        assert np.all(timed.wall_clock >= 0)


class TestFilter:
    def test_nothing_filtered_at_start_for_spread_rows(self):
        mdp = generate(GenSpec(n_states=3, gamma=0.9, seed=42, max_actions=4))
        v0 = np.full(3, 1.0 / (1.0 - 0.9))
        active = np.ones(mdp.m, dtype=bool)
        new, removed = filter_appendix(mdp, 0, v0, active)
        assert removed == ()
        assert new.sum() == mdp.m

    def test_run_filters_down_to_optimum(self):
        mdp = m2()
        sol = solve_exact(mdp)
        cfg = ViConfig(stop="actions", filter="appendix", v0="upper_bound")
        trace = value_iteration(mdp, cfg)
        assert trace.stop_reason == "actions"
        dropped = {aid for batch in trace.filtered for aid in batch}
        assert set(mdp.ids) - dropped == set(sol.policy.choice)

    def test_filtered_actions_are_suboptimal(self):
        for seed in range(10):
            mdp = generate(GenSpec(n_states=3, gamma=0.9, seed=600 + seed, max_actions=4))
            sol = solve_exact(mdp)
            adv = advantages(mdp, sol.values)
            cfg = ViConfig(stop="actions", filter="appendix", v0="upper_bound")
            trace = value_iteration(mdp, cfg)
            for batch in trace.filtered:
                for aid in batch:
                    assert adv[mdp.row_of[aid]] < 0.0

    def test_dominated_twin_filtered_by_predicted_time(self):
        probs = np.array([0.3, 0.7, 0.0])
        base = [
            Action("s0good", 0, probs, 0.9),
            Action("s0twin", 0, probs, 0.4),
            Action("s1a", 1, (0.2, 0.3, 0.5), 0.8),
            Action("s2a", 2, (0.4, 0.4, 0.2), 0.7),
        ]
        mdp = Mdp(3, tuple(base), 0.9)
        gap = 0.5
        t_pred = 0
        while 2 * 0.9**t_pred * (1 - 0.9 * probs[0]) / (1 - 0.9) >= gap:
            t_pred += 1
        cfg = ViConfig(stop="time", t_max=t_pred + 2, filter="appendix", v0="upper_bound")
        trace = value_iteration(mdp, cfg)
        first = next(
            t for t, batch in enumerate(trace.filtered, start=1) if "s0twin" in batch
        )
        assert first <= t_pred + 1

    def test_last_action_of_state_survives(self):
        # both state-1 actions are bad self-loops; one must still survive
        mdp = Mdp(
            2,
            (
                Action("a", 0, (0.5, 0.5), 1.0),
                Action("x", 1, (0.0, 1.0), 0.0),
                Action("y", 1, (0.0, 1.0), 0.0),
            ),
            0.9,
        )
        cfg = ViConfig(stop="time", t_max=40, filter="appendix", v0="upper_bound")
        trace = value_iteration(mdp, cfg)
        assert trace.active_counts[-1] >= 2


class TestPolicyIteration:
    def test_m2_mix_from_worst_start(self):
        pol, trace = policy_iteration(m2_mix(), policy_from_ids(m2_mix(), ("a2", "b2")))
        assert pol.choice == ("a1", "b1")
        assert trace.iterations <= 4
        assert trace.policies == (("a2", "b2"), ("a2", "b1"), ("a1", "b1"))

    def test_single_action_converges_in_one(self):
        mdp = Mdp(2, (Action("a", 0, (1.0, 0.0), 0.0), Action("b", 1, (0.0, 1.0), 1.0)), 0.9)
        _, trace = policy_iteration(mdp, policy_from_ids(mdp, ("a", "b")))
        assert trace.iterations == 1

    def test_values_nondecreasing(self):
        for seed in range(6):
            mdp = generate(GenSpec(n_states=4, gamma=0.9, seed=700 + seed, max_actions=3))
            pi0 = Policy(choice=tuple(mdp.ids[r[0]] for r in mdp.state_rows))
            _, trace = policy_iteration(mdp, pi0)
            for a, b in zip(trace.values, trace.values[1:]):
                assert np.all(b >= a - 1e-9)

    def test_iteration_count_stable_under_discount_change(self):
        mdp = m2()
        image, _ = apply_J(mdp, 0, 0.95)
        pi0 = ("a1", "b2")
        _, base = policy_iteration(mdp, policy_from_ids(mdp, pi0))
        _, moved = policy_iteration(image, policy_from_ids(image, pi0))
        assert base.iterations == moved.iterations
        assert base.policies == moved.policies


class TestSolveExact:
    def test_m2_mix(self):
        sol = solve_exact(m2_mix())
        assert sol.policy.choice == ("a1", "b1")
        np.testing.assert_allclose(sol.values, [9.1, 8.9], atol=1e-9)
        assert sol.delta == pytest.approx(0.01, abs=1e-9)
        assert sol.unique and sol.brute_checked

    def test_m2(self):
        sol = solve_exact(m2())
        assert sol.policy.choice == ("a2", "b1")
        np.testing.assert_allclose(sol.values, [0.68 / 0.19, 0.65 / 0.19], atol=1e-9)

    def test_zero_rewards_flag_non_unique(self):
        mdp = Mdp(
            1, (Action("a", 0, (1.0,), 0.0), Action("b", 0, (1.0,), 0.0)), 0.9
        )
        sol = solve_exact(mdp)
        np.testing.assert_allclose(sol.values, [0.0], atol=1e-12)
        assert not sol.unique

    def test_brute_force_guard(self):
        mdp = generate(GenSpec(n_states=4, gamma=0.9, seed=1))
        with pytest.raises(ValueError, match="brute force"):
            brute_force_solve(mdp)

    @given(mdps(max_states=3, max_actions_per_state=3))
    def test_brute_force_agrees_with_howard(self, mdp):
        sol = solve_exact(mdp, brute_check=True)  # raises internally on mismatch
        _, brute_vals = brute_force_solve(mdp)
        np.testing.assert_allclose(sol.values, brute_vals, atol=1e-8)

    def test_policy_evaluation_fixed_point(self):
        mdp = m2()
        pol = policy_from_ids(mdp, ("a2", "b1"))
        v = evaluate_policy(mdp, pol)
        rows = [mdp.row_of[a] for a in pol.choice]
        np.testing.assert_allclose(
            mdp.rewards[rows] + 0.9 * mdp.P[rows] @ v, v, atol=1e-10
        )
