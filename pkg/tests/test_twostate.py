import numpy as np
import pytest

from mdpgeo.core import Action, Mdp, ModelError, policy_from_ids
from mdpgeo.fixtures import m2, m2_mix
from mdpgeo.gen import GenSpec, generate
from mdpgeo.solvers import evaluate_policy, policy_iteration
from mdpgeo.twostate import (
    formed_policies,
    inefficiency_certificate,
    produced_actions,
    set_dynamics,
    verify_pi_bound,
)


def random_instance(seed, max_per_state=6):
    return generate(GenSpec(n_states=2, gamma=(0.5, 0.9, 0.99)[seed % 3], seed=seed,
                            structure="dense", min_actions=1, max_actions=max_per_state))


class TestFormedPolicies:
    def test_m2_known_values(self):
        values = {p.choice: tuple(np.round(p.values, 6)) for p in formed_policies(m2(), m2().ids)}
        assert values[("a1", "b1")] == (0.0, 0.2)
        assert values[("a1", "b2")] == (0.0, 0.0)
        assert values[("a2", "b2")] == (0.5, 0.0)
        np.testing.assert_allclose(
            values[("a2", "b1")], (0.68 / 0.19, 0.65 / 0.19), atol=1e-6
        )

    def test_singleton(self):
        assert len(formed_policies(m2(), ("a1", "b1"))) == 1

    def test_cross_product_size(self):
        mdp = random_instance(3)
        n0 = len(mdp.state_rows[0])
        n1 = len(mdp.state_rows[1])
        assert len(formed_policies(mdp, mdp.ids)) == n0 * n1

    def test_closed_form_matches_dense_solve(self):
        for seed in range(10):
            mdp = random_instance(seed)
            for pol in formed_policies(mdp, mdp.ids):
                exact = evaluate_policy(mdp, policy_from_ids(mdp, pol.choice))
                np.testing.assert_allclose(pol.values, exact, atol=1e-10)

    def test_needs_two_states(self):
        mdp = generate(GenSpec(n_states=3, gamma=0.9, seed=0))
        with pytest.raises(ModelError, match="2-state"):
            formed_policies(mdp, mdp.ids)

    def test_needs_both_states_covered(self):
        with pytest.raises(ModelError, match="both states"):
            formed_policies(m2(), ("a1", "a2"))


class TestProducedActions:
    def test_optimal_policy_produces_itself(self):
        mdp = m2()
        pols = [p for p in formed_policies(mdp, mdp.ids) if p.choice == ("a2", "b1")]
        assert produced_actions(mdp, pols, mdp.ids) == {"a2", "b1"}

    def test_full_set_loses_an_action(self):
        mdp = m2()
        produced = produced_actions(mdp, formed_policies(mdp, mdp.ids), mdp.ids)
        assert len(produced) <= 3

    @pytest.mark.parametrize("fixture", [m2, m2_mix])
    def test_dynamics_reach_the_optimum(self, fixture):
        mdp = fixture()
        sets = set_dynamics(mdp)
        assert sets[-1] == frozenset(("a2", "b1") if fixture is m2 else ("a1", "b1"))


class TestInefficiencyCertificate:
    def test_m2_names_an_action(self):
        cert = inefficiency_certificate(m2())
        assert not cert.degenerate
        assert cert.inefficient_action is not None
        assert cert.min_margins[1] > 0
        assert min(cert.min_margins) >= -1e-12
        produced = produced_actions(m2(), formed_policies(m2(), m2().ids), m2().ids)
        assert cert.inefficient_action not in produced

    def test_chain_rows_cover_every_policy(self):
        cert = inefficiency_certificate(m2())
        assert len(cert.chain_rows) == 4
        for _, a_c, a_low, a_high, a_b in cert.chain_rows:
            assert a_c <= a_low + 1e-12 < a_high + 1e-12 <= a_b + 2e-12

    def test_too_few_actions(self):
        mdp = Mdp(2, (Action("a", 0, (1.0, 0.0), 0.1), Action("b", 1, (0.0, 1.0), 0.2)), 0.9)
        with pytest.raises(ModelError, match=">= 3"):
            inefficiency_certificate(mdp)

    def test_degenerate_instance_flagged(self):
        # identical actions everywhere: every policy has the same value line
        mdp = Mdp(
            2,
            (
                Action("a1", 0, (0.5, 0.5), 0.3),
                Action("a2", 0, (0.5, 0.5), 0.3),
                Action("b1", 1, (0.5, 0.5), 0.3),
            ),
            0.9,
        )
        cert = inefficiency_certificate(mdp)
        assert cert.degenerate
        assert cert.inefficient_action is None

    def test_random_certificates_check_out(self):
        for seed in range(300):
            mdp = random_instance(seed)
            if mdp.m < 3:
                continue
            cert = inefficiency_certificate(mdp)
            if cert.degenerate:
                continue
            produced = produced_actions(mdp, formed_policies(mdp, mdp.ids), mdp.ids)
            assert cert.inefficient_action not in produced
            assert cert.min_margins[1] > 0


class TestPiBound:
    def test_m2(self):
        report = verify_pi_bound(m2())
        assert report.ok
        assert report.max_iterations <= 4
        assert report.set_sizes[-1] == 2

    def test_single_action_per_state(self):
        mdp = Mdp(2, (Action("a", 0, (1.0, 0.0), 0.1), Action("b", 1, (0.0, 1.0), 0.2)), 0.9)
        report = verify_pi_bound(mdp)
        assert report.max_iterations == 1

    def test_counts_match_reference_solver(self):
        for seed in range(25):
            mdp = random_instance(seed, max_per_state=4)
            report = verify_pi_bound(mdp)
            for start, count in report.iterations_by_start.items():
                _, trace = policy_iteration(mdp, policy_from_ids(mdp, start))
                assert trace.iterations == count

    def test_sets_shrink_by_one_per_round(self):
        for seed in range(50):
            mdp = random_instance(seed)
            sizes = [len(s) for s in set_dynamics(mdp)]
            for a, b in zip(sizes, sizes[1:]):
                assert b <= a - 1 or a == 2

    def test_pi_trajectory_contained_in_sets(self):
        for seed in range(25):
            mdp = random_instance(seed, max_per_state=4)
            sets = set_dynamics(mdp)
            for start in formed_policies(mdp, mdp.ids):
                _, trace = policy_iteration(mdp, policy_from_ids(mdp, start.choice))
                for t, choice in enumerate(trace.policies[1:], start=1):
                    bucket = sets[min(t, len(sets) - 1)]
                    assert set(choice) <= bucket
