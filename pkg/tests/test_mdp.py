import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

import anderson_pi as ap
from anderson_pi.mdp import MdpFormatError

from conftest import hand_value_iteration


class TestRandomGenerator:
    def test_single_state_self_loop(self):
        mdp = ap.generate_random_mdp(7, 1, 1, 1, 1.0, 0.9)
        assert mdp.transitions[0, 0, 0] == 1.0

    def test_row_sums(self):
        mdp = ap.generate_random_mdp(7, 20, 4, 3, 1.0, 0.95)
        sums = mdp.transitions.sum(axis=2)
        assert np.abs(sums - 1.0).max() <= 1e-12

    def test_support_size_matches_branching(self):
        mdp = ap.generate_random_mdp(3, 12, 3, 4, 1.0, 0.9)
        nonzero = (mdp.transitions > 0).sum(axis=2)
        assert (nonzero == 4).all()

    def test_deterministic(self):
        a = ap.generate_random_mdp(11, 15, 3, 2, 2.0, 0.9)
        b = ap.generate_random_mdp(11, 15, 3, 2, 2.0, 0.9)
        assert np.array_equal(a.transitions, b.transitions)
        assert np.array_equal(a.rewards, b.rewards)

    @given(seed=st.integers(0, 10**6))
    def test_row_sums_property(self, seed):
        mdp = ap.generate_random_mdp(seed, 8, 2, 3, 1.0, 0.9)
        assert np.abs(mdp.transitions.sum(axis=2) - 1.0).max() <= 1e-12
        assert ap.validate(mdp) == []

    @pytest.mark.parametrize(
        "kw",
        [
            dict(n_states=0, n_actions=1, branching=1),
            dict(n_states=3, n_actions=0, branching=1),
            dict(n_states=3, n_actions=1, branching=0),
            dict(n_states=3, n_actions=1, branching=4),
        ],
    )
    def test_invalid_dimensions(self, kw):
        with pytest.raises(ValueError):
            ap.generate_random_mdp(0, **kw)

    def test_rewards_within_scale(self):
        mdp = ap.generate_random_mdp(5, 10, 3, 2, 0.25, 0.9)
        assert np.abs(mdp.rewards).max() <= 0.25


class TestGridworld:
    def test_degenerate_grid_is_absorbing(self):
        mdp = ap.generate_gridworld(1, 1, 0.0, 1.0, 0.9)
        assert mdp.n_states == 1
        assert (mdp.transitions[0, :, 0] == 1.0).all()
        assert (mdp.rewards == 0.0).all()

    def test_row_sums_with_slip(self):
        mdp = ap.generate_gridworld(2, 2, 0.1, 1.0, 0.9)
        assert np.abs(mdp.transitions.sum(axis=2) - 1.0).max() <= 1e-12

    def test_adjacent_state_value_is_goal_reward(self, grid3):
        # entering the absorbing goal pays 1.0 once, then nothing: any
        # state one step from the goal has optimal action value exactly 1
        q_star = hand_value_iteration(grid3)
        goal = 8
        v = q_star.max(axis=1)
        assert v[goal] == pytest.approx(0.0, abs=1e-12)
        for adjacent in (5, 7):  # right edge / top edge neighbours
            assert v[adjacent] == pytest.approx(1.0, abs=1e-10)

    def test_toward_goal_policy(self, grid3):
        q_star = hand_value_iteration(grid3)
        policy = ap.greedy_policy(q_star)
        # bottom-left corner: up or right both optimal; tie-break picks up (0)
        assert policy[0] in (0, 1)
        # state left of goal must move right; state below goal must move up
        assert policy[7] == 1
        assert policy[5] == 0

    def test_slip_out_of_range(self):
        with pytest.raises(ValueError):
            ap.generate_gridworld(2, 2, 1.0, 1.0, 0.9)
        with pytest.raises(ValueError):
            ap.generate_gridworld(2, 2, -0.1, 1.0, 0.9)


class TestValidate:
    def test_valid_mdp_empty_report(self):
        mdp = ap.generate_random_mdp(1, 6, 2, 2, 1.0, 0.9)
        assert ap.validate(mdp) == []

    def test_bad_row_sum_named(self):
        mdp = ap.generate_random_mdp(1, 3, 2, 2, 1.0, 0.9)
        p = mdp.transitions.copy()
        p[1, 0] *= 0.9
        broken = ap.TabularMdp(3, 2, p, mdp.rewards, 0.9)
        report = ap.validate(broken)
        assert any("s=1" in v and "a=0" in v for v in report)

    def test_gamma_out_of_range(self):
        mdp = ap.generate_random_mdp(1, 2, 2, 1, 1.0, 0.9)
        bad = ap.TabularMdp(2, 2, mdp.transitions, mdp.rewards, 1.0)
        report = ap.validate(bad)
        assert any("discount not in [0,1)" in v for v in report)

    def test_never_mutates(self):
        mdp = ap.generate_random_mdp(1, 4, 2, 2, 1.0, 0.9)
        before = mdp.transitions.copy()
        ap.validate(mdp)
        assert np.array_equal(mdp.transitions, before)


class TestPersistence:
    def test_round_trip_exact(self, tmp_path, grid3):
        path = tmp_path / "grid.json"
        ap.save_mdp(grid3, path)
        back = ap.load_mdp(path)
        assert back.n_states == grid3.n_states
        assert back.gamma == grid3.gamma
        assert np.array_equal(back.transitions, grid3.transitions)
        assert np.array_equal(back.rewards, grid3.rewards)

    def test_round_trip_random(self, tmp_path):
        mdp = ap.generate_random_mdp(9, 13, 3, 5, 1.7, 0.93)
        path = tmp_path / "m.json"
        ap.save_mdp(mdp, path)
        back = ap.load_mdp(path)
        assert np.array_equal(back.transitions, mdp.transitions)
        assert np.array_equal(back.rewards, mdp.rewards)

    def test_missing_gamma(self, tmp_path, grid3):
        path = tmp_path / "m.json"
        ap.save_mdp(grid3, path)
        data = json.loads(path.read_text())
        del data["gamma"]
        path.write_text(json.dumps(data))
        with pytest.raises(MdpFormatError, match="gamma"):
            ap.load_mdp(path)

    def test_negative_probability(self, tmp_path, grid3):
        path = tmp_path / "m.json"
        ap.save_mdp(grid3, path)
        data = json.loads(path.read_text())
        data["transitions"][0][0][0] = -0.5
        data["transitions"][0][0][1] = 1.5
        path.write_text(json.dumps(data))
        with pytest.raises(MdpFormatError, match="outside"):
            ap.load_mdp(path)

    def test_extra_key_rejected(self, tmp_path, grid3):
        path = tmp_path / "m.json"
        ap.save_mdp(grid3, path)
        data = json.loads(path.read_text())
        data["comment"] = "hello"
        path.write_text(json.dumps(data))
        with pytest.raises(MdpFormatError, match="unexpected"):
            ap.load_mdp(path)

    def test_dimension_mismatch(self, tmp_path, grid3):
        path = tmp_path / "m.json"
        ap.save_mdp(grid3, path)
        data = json.loads(path.read_text())
        data["rewards"] = data["rewards"][:-1]
        path.write_text(json.dumps(data))
        with pytest.raises(MdpFormatError, match="rewards"):
            ap.load_mdp(path)

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{\n  "n_states": 1,\n  broken\n}')
        with pytest.raises(MdpFormatError, match="line 3"):
            ap.load_mdp(path)

    def test_row_sum_violation_on_load(self, tmp_path, grid3):
        path = tmp_path / "m.json"
        ap.save_mdp(grid3, path)
        data = json.loads(path.read_text())
        data["transitions"][0][0][0] = 0.9
        data["transitions"][0][0][1] = 0.0
        for t in range(2, 9):
            data["transitions"][0][0][t] = 0.0
        path.write_text(json.dumps(data))
        with pytest.raises(MdpFormatError, match="sums to"):
            ap.load_mdp(path)

    def test_save_rejects_invalid(self, tmp_path):
        mdp = ap.generate_random_mdp(0, 2, 2, 1, 1.0, 0.9)
        bad = ap.TabularMdp(2, 2, mdp.transitions, mdp.rewards, 1.5)
        with pytest.raises(ValueError, match="invalid MDP"):
            ap.save_mdp(bad, tmp_path / "x.json")

    def test_arrays_immutable(self, grid3):
        with pytest.raises(ValueError):
            grid3.transitions[0, 0, 0] = 0.5
