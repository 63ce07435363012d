import json
import os

import numpy as np
import pytest

from mdpgeo.cli import (
    EX_CANTCREAT,
    EX_CAP,
    EX_DATAERR,
    EX_NOINPUT,
    EX_OK,
    EX_USAGE,
    main,
    mdp_from_json,
    mdp_to_json,
    trace_from_csv,
    trace_to_csv,
)
from mdpgeo.fixtures import m2, m2_mix
from mdpgeo.solvers import ViConfig, solve_exact, value_iteration
from mdpgeo.transforms import normalize


@pytest.fixture
def model_path(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(mdp_to_json(m2_mix()))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


class TestModelFile:
    def test_round_trip_identity(self, tmp_path):
        first = mdp_to_json(m2())
        reparsed = mdp_from_json(first)
        assert mdp_to_json(reparsed) == first
        assert reparsed.gamma == 0.9
        np.testing.assert_array_equal(reparsed.P, m2().P)

    def test_full_precision_floats(self):
        mdp = m2_mix()
        text = mdp_to_json(mdp)
        again = mdp_from_json(text)
        assert all(
            np.array_equal(a.probs, b.probs) and a.reward == b.reward
            for a, b in zip(mdp.actions, again.actions)
        )

    def test_unknown_field_rejected(self):
        doc = json.loads(mdp_to_json(m2()))
        doc["comment"] = "nope"
        with pytest.raises(Exception, match="unknown fields"):
            mdp_from_json(json.dumps(doc))

    def test_unknown_action_field_rejected(self):
        doc = json.loads(mdp_to_json(m2()))
        doc["actions"][0]["label"] = "x"
        with pytest.raises(Exception, match="unknown fields"):
            mdp_from_json(json.dumps(doc))

    def test_version_checked(self):
        doc = json.loads(mdp_to_json(m2()))
        doc["version"] = 2
        with pytest.raises(Exception, match="version"):
            mdp_from_json(json.dumps(doc))


class TestTraceFile:
    def test_round_trip_exact(self):
        trace = value_iteration(m2_mix(), ViConfig(stop="time", t_max=7))
        text = trace_to_csv(trace)
        back = trace_from_csv(text, gamma=0.9)
        np.testing.assert_array_equal(back.values, trace.values)
        np.testing.assert_array_equal(back.active_counts, trace.active_counts)
        assert back.stop_reason == trace.stop_reason
        assert back.content_hash() == trace.content_hash()

    def test_row_count_and_endings(self):
        trace = value_iteration(m2_mix(), ViConfig(stop="time", t_max=3))
        text = trace_to_csv(trace)
        assert "\r" not in text
        lines = text.strip().split("\n")
        assert len(lines) == 1 + 4  # header + V_0..V_3


class TestCommands:
    def test_generate_is_deterministic(self, tmp_path, capsys):
        out1, out2 = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        code1, cap1 = run(capsys, "generate", "--seed", "5", "--n-states", "3",
                          "--gamma", "0.9", "--out", out1)
        code2, cap2 = run(capsys, "generate", "--seed", "5", "--n-states", "3",
                          "--gamma", "0.9", "--out", out2)
        assert code1 == code2 == EX_OK
        assert open(out1).read() == open(out2).read()
        assert cap1.out == cap2.out

    def test_solve_vi_matches_library(self, model_path, tmp_path, capsys):
        trace_path = str(tmp_path / "t.csv")
        code, cap = run(capsys, "solve-vi", "--mdp", model_path,
                        "--stop", "span:1e-8", "--trace", trace_path)
        assert code == EX_OK
        doc = json.loads(cap.out)
        assert doc["policy"] == list(solve_exact(m2_mix()).policy.choice)
        assert doc["stop_reason"] == "span"
        assert os.path.exists(trace_path)

    def test_solve_vi_time_zero(self, model_path, tmp_path, capsys):
        trace_path = str(tmp_path / "t.csv")
        code, cap = run(capsys, "solve-vi", "--mdp", model_path,
                        "--stop", "time:0", "--trace", trace_path)
        assert code == EX_OK
        assert len(open(trace_path).read().strip().split("\n")) == 2  # header + row 0

    def test_cap_exit_code(self, tmp_path, capsys):
        # the value span converges to span(V*) > 0, so a vspan stop at 1e-30
        # can never fire and the run must abort at the iteration cap
        path = tmp_path / "flat.json"
        path.write_text(mdp_to_json(m2()))
        code, cap = run(capsys, "solve-vi", "--mdp", str(path), "--stop", "vspan:1e-30",
                        "--v0", "file:" + _values_file(tmp_path, [0.0, 5.0]))
        assert code == EX_CAP
        assert json.loads(cap.out)["stop_reason"] == "cap"

    def test_usage_errors(self, model_path, capsys):
        code, cap = run(capsys, "solve-vi", "--mdp", model_path, "--stop", "bogus")
        assert code == EX_USAGE
        code, cap = run(capsys, "solve-vi", "--mdp", model_path, "--stop", "actions")
        assert code == EX_USAGE  # action stop without the filter
        code, cap = run(capsys)
        assert code == EX_USAGE

    def test_missing_input(self, capsys, tmp_path):
        code, cap = run(capsys, "solve-vi", "--mdp", str(tmp_path / "absent.json"))
        assert code == EX_NOINPUT
        assert cap.err.startswith("error:input:")

    def test_invalid_model_data(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        doc = json.loads(mdp_to_json(m2()))
        doc["gamma"] = 1.5
        bad.write_text(json.dumps(doc))
        code, cap = run(capsys, "solve-vi", "--mdp", str(bad))
        assert code == EX_DATAERR

    def test_unwritable_output(self, model_path, tmp_path, capsys):
        target = str(tmp_path / "no" / "such" / "dir" / "out.json")
        code, cap = run(capsys, "normalize", "--mdp", model_path, "--out", target)
        assert code == EX_CANTCREAT
        assert cap.err.startswith("error:output:")

    def test_gamma_eff_uniform_clamps(self, tmp_path, capsys):
        from mdpgeo.core import Action, Mdp

        uni = Mdp(2, (Action("a", 0, (0.5, 0.5), 0.2), Action("b", 1, (0.5, 0.5), 0.1)), 0.9)
        path = tmp_path / "uni.json"
        path.write_text(mdp_to_json(uni))
        code, cap = run(capsys, "gamma-eff", "--mdp", str(path))
        assert code == EX_OK
        doc = json.loads(cap.out)
        assert doc["gamma_eff"] == pytest.approx(1e-6)
        assert doc["clamped"] is True

    def test_normalize_command(self, model_path, tmp_path, capsys):
        out = str(tmp_path / "norm.json")
        code, cap = run(capsys, "normalize", "--mdp", model_path, "--out", out)
        assert code == EX_OK
        norm = mdp_from_json(open(out).read())
        rewards = {a.id: a.reward for a in norm.actions}
        assert rewards["a2"] == pytest.approx(-0.01, abs=1e-9)

    def test_certify_command(self, tmp_path, capsys):
        norm, _, _ = normalize(m2_mix())
        model = tmp_path / "norm.json"
        model.write_text(mdp_to_json(norm))
        trace = value_iteration(
            norm, ViConfig(stop="time", t_max=10, v0="given", v0_values=(1.0, 0.0))
        )
        trace_path = tmp_path / "trace.csv"
        trace_path.write_text(trace_to_csv(trace))
        code, cap = run(capsys, "certify", "--mdp", str(model), "--trace", str(trace_path))
        assert code == EX_OK
        doc = json.loads(cap.out)
        assert doc["N"] == 1
        assert doc["omega"] == pytest.approx(0.5)
        assert doc["delta"] == pytest.approx(0.01, abs=1e-9)
        assert doc["margin"] >= 0

    def test_solve_pi_command(self, model_path, capsys):
        code, cap = run(capsys, "solve-pi", "--mdp", model_path, "--pi0", "first")
        assert code == EX_OK
        doc = json.loads(cap.out)
        assert doc["policy"] == ["a1", "b1"]
        np.testing.assert_allclose(doc["values"], [9.1, 8.9], atol=1e-9)

    def test_twostate_single_model(self, tmp_path, capsys):
        path = tmp_path / "m2.json"
        path.write_text(mdp_to_json(m2()))
        code, cap = run(capsys, "twostate", "--mdp", str(path))
        assert code == EX_OK
        doc = json.loads(cap.out)
        assert doc["violations"] == 0
        assert doc["max_pi_iterations"] <= 4

    def test_twostate_suite(self, capsys):
        code, cap = run(capsys, "twostate", "--suite", "50", "--seed", "3")
        assert code == EX_OK
        doc = json.loads(cap.out)
        assert doc["violations"] == 0
        assert doc["instances"] == 50

    def test_twostate_needs_mode(self, capsys):
        code, cap = run(capsys, "twostate")
        assert code == EX_USAGE

    def test_env_variables_supply_flags(self, model_path, capsys, monkeypatch):
        monkeypatch.setenv("MDPGEO_MDP", model_path)
        monkeypatch.setenv("MDPGEO_STOP", "time:2")
        code, cap = run(capsys, "solve-vi")
        assert code == EX_OK
        assert json.loads(cap.out)["iterations"] == 2

    def test_flag_beats_env(self, model_path, capsys, monkeypatch):
        monkeypatch.setenv("MDPGEO_STOP", "time:2")
        code, cap = run(capsys, "solve-vi", "--mdp", model_path, "--stop", "time:4")
        assert code == EX_OK
        assert json.loads(cap.out)["iterations"] == 4

    def test_deterministic_stdout(self, model_path, capsys):
        code1, cap1 = run(capsys, "solve-vi", "--mdp", model_path, "--stop", "time:5")
        code2, cap2 = run(capsys, "solve-vi", "--mdp", model_path, "--stop", "time:5")
        assert cap1.out == cap2.out

    def test_round_robin_schedule_flag(self, model_path, capsys):
        code, cap = run(capsys, "solve-vi", "--mdp", model_path,
                        "--stop", "time:4", "--schedule", "rr:1")
        assert code == EX_OK
        assert json.loads(cap.out)["iterations"] == 4

    def test_filtered_run_through_cli(self, tmp_path, capsys):
        path = tmp_path / "m2.json"
        path.write_text(mdp_to_json(m2()))
        code, cap = run(capsys, "solve-vi", "--mdp", str(path), "--stop", "actions",
                        "--filter", "appendix", "--v0", "upper")
        assert code == EX_OK
        doc = json.loads(cap.out)
        assert doc["stop_reason"] == "actions"
        assert doc["active_actions"] == 2
        assert doc["policy"] == ["a2", "b1"]

    def test_generate_from_spec_file(self, tmp_path, capsys):
        spec = {"n_states": 3, "gamma": 0.9, "structure": "planted_optimal",
                "min_actions": 2, "max_actions": 3, "bonus_beta": 0.4}
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        out = str(tmp_path / "gen.json")
        code, cap = run(capsys, "generate", "--seed", "9", "--spec", str(spec_path),
                        "--out", out)
        assert code == EX_OK
        mdp = mdp_from_json(open(out).read())
        assert mdp.n_states == 3
        assert solve_exact(mdp, brute_check=False).policy.choice == (
            "s00a00", "s01a00", "s02a00"
        )

    def test_certify_alpha_through_cli(self, tmp_path, capsys):
        norm, _, _ = normalize(m2_mix())
        model = tmp_path / "norm.json"
        model.write_text(mdp_to_json(norm))
        trace = value_iteration(
            norm,
            ViConfig(alpha=0.5, stop="time", t_max=20, v0="given", v0_values=(1.0, 0.0)),
        )
        trace_path = tmp_path / "trace.csv"
        trace_path.write_text(trace_to_csv(trace))
        code, cap = run(capsys, "certify", "--mdp", str(model),
                        "--trace", str(trace_path), "--alpha", "0.5")
        assert code == EX_OK
        doc = json.loads(cap.out)
        assert doc["N_alpha"] == 1
        assert doc["margin"] >= 0


def _values_file(tmp_path, values):
    path = tmp_path / "v0.json"
    path.write_text(json.dumps(values))
    return str(path)
