import numpy as np
import pytest
from hypothesis import given, strategies as st

import anderson_pi as ap
from anderson_pi.anderson import (
    AndersonHistory,
    build_history_matrices,
    gain_theta,
    mixed_update,
    quasi_newton_update,
    solve_alpha_kkt,
    solve_tau_regularized,
    solve_tau_unconstrained,
    tau_to_alpha,
    alpha_to_tau,
    transformation_matrix,
    vanilla_solution,
)
from anderson_pi.operators import OperatorKind, OperatorSpec, apply_bellman


def history_from_pairs(pairs):
    h = AndersonHistory(len(pairs) - 1)
    for q, tq in pairs:
        h.push(np.asarray(q, dtype=float), np.asarray(tq, dtype=float))
    return h


def two_column_history():
    """Residual columns e0 = [2, 0], e1 = [0, 1]."""
    return history_from_pairs([([0, 0], [2, 0]), ([0, 0], [0, 1])])


def random_history(rng, n, length):
    h = AndersonHistory(length - 1)
    for _ in range(length):
        h.push(rng.standard_normal(n), rng.standard_normal(n))
    return h


class TestHistoryMatrices:
    def test_length_one_boundary(self):
        h = history_from_pairs([([1, 2], [3, 4])])
        m = build_history_matrices(h)
        assert m.residuals.shape == (2, 1)
        assert m.delta_q.shape == (2, 0)
        assert m.delta_e.shape == (2, 0)

    def test_columns_are_adjacent_differences(self):
        rng = np.random.default_rng(0)
        h = random_history(rng, 4, 3)
        m = build_history_matrices(h)
        e = m.residuals
        # H column i is the difference of adjacent residuals, newest first
        assert np.array_equal(m.delta_e[:, 0], e[:, 2] - e[:, 1])
        assert np.array_equal(m.delta_e[:, 1], e[:, 1] - e[:, 0])
        x = h.iterate_matrix()
        assert np.array_equal(m.delta_q[:, 0], x[:, 2] - x[:, 1])
        assert np.array_equal(m.delta_q[:, 1], x[:, 1] - x[:, 0])

    def test_zero_residual_history_handled(self):
        # iterates equal to their images: E = 0 and the gain rule gives 0
        pairs = [([0, 0], [0, 0]), ([1, 0], [1, 0]), ([1, 1], [1, 1])]
        h = history_from_pairs(pairs)
        m = build_history_matrices(h)
        assert np.all(m.residuals == 0.0)
        sol = solve_alpha_kkt(m)
        assert sol.fallback
        assert sol.gain_theta == 0.0

    def test_empty_history_is_error(self):
        with pytest.raises(ValueError, match="empty"):
            build_history_matrices(AndersonHistory(2))

    def test_eviction_beyond_depth(self):
        h = AndersonHistory(1)
        for i in range(5):
            h.push(np.array([float(i)]), np.array([float(i + 1)]))
        assert len(h) == 2
        assert h.iterate_matrix()[0, 0] == 3.0


class TestKktSolver:
    def test_single_column(self):
        h = history_from_pairs([([0, 0], [1, 2])])
        sol = solve_alpha_kkt(build_history_matrices(h))
        assert np.array_equal(sol.alpha, [1.0])
        assert sol.tau.size == 0

    def test_orthonormal_columns(self):
        h = history_from_pairs([([0, 0], [1, 0]), ([0, 0], [0, 1])])
        sol = solve_alpha_kkt(build_history_matrices(h))
        assert np.allclose(sol.alpha, [0.5, 0.5], atol=1e-12)

    def test_diagonal_gram(self):
        sol = solve_alpha_kkt(build_history_matrices(two_column_history()))
        assert np.allclose(sol.alpha, [0.2, 0.8], atol=1e-12)

    def test_optimality_against_simplex_search(self):
        rng = np.random.default_rng(3)
        h = random_history(rng, 12, 4)
        m = build_history_matrices(h)
        sol = solve_alpha_kkt(m)
        best = np.linalg.norm(m.residuals @ sol.alpha)
        for _ in range(1000):
            candidate = rng.dirichlet(np.ones(4))
            assert best <= np.linalg.norm(m.residuals @ candidate) + 1e-10

    @given(seed=st.integers(0, 10**6), length=st.integers(1, 6))
    def test_alpha_sums_to_one(self, seed, length):
        rng = np.random.default_rng(seed)
        sol = solve_alpha_kkt(build_history_matrices(random_history(rng, 10, length)))
        assert abs(sol.alpha.sum() - 1.0) <= 1e-10


class TestTauSolvers:
    def test_single_column_exact_fit(self):
        # H = [1, 1]^T, e_k = [1, 1]: tau = 1 fits exactly
        h = history_from_pairs([([0, 0], [0, 0]), ([0, 0], [1, 1])])
        m = build_history_matrices(h)
        sol = solve_tau_unconstrained(m)
        assert sol.tau == pytest.approx([1.0], abs=1e-12)
        assert np.linalg.norm(m.e_newest - m.delta_e @ sol.tau) <= 1e-12

    def test_agreement_with_kkt(self):
        m = build_history_matrices(two_column_history())
        sol = solve_tau_unconstrained(m)
        assert np.allclose(sol.alpha, [0.2, 0.8], atol=1e-10)

    def test_orthogonal_residual_gives_zero_tau(self):
        # e0 = [1, 1], e1 = [1, 0]: H = e1 - e0 = [0, -1] is orthogonal
        # to e1, so the normal equations give tau = 0
        h = history_from_pairs([([0, 0], [1, 1]), ([0, 0], [1, 0])])
        m = build_history_matrices(h)
        assert float(m.delta_e[:, 0] @ m.e_newest) == 0.0
        sol = solve_tau_unconstrained(m)
        assert np.allclose(sol.tau, [0.0], atol=1e-14)
        assert np.allclose(sol.alpha, [0.0, 1.0], atol=1e-14)

    def test_achieves_kkt_minimum(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            m = build_history_matrices(random_history(rng, 15, 4))
            kkt = solve_alpha_kkt(m)
            unc = solve_tau_unconstrained(m)
            lhs = np.linalg.norm(m.e_newest - m.delta_e @ unc.tau)
            rhs = np.linalg.norm(m.residuals @ kkt.alpha)
            assert abs(lhs - rhs) <= 1e-8

    def test_regularized_eta_zero_identical(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            m = build_history_matrices(random_history(rng, 10, 4))
            u = solve_tau_unconstrained(m)
            r = solve_tau_regularized(m, 0.0)
            assert np.abs(u.alpha - r.alpha).max() <= 1e-10

    def test_regularized_huge_eta_recovers_plain_step(self):
        rng = np.random.default_rng(13)
        m = build_history_matrices(random_history(rng, 10, 4))
        sol = solve_tau_regularized(m, 1e12)
        assert np.abs(sol.tau).max() <= 1e-9
        expected = np.zeros(4)
        expected[-1] = 1.0
        assert np.abs(sol.alpha - expected).max() <= 1e-9

    def test_hand_scalar_case(self):
        # H = [1,1]^T, e = [1,1], D = [1,0]^T, eta = 0.1:
        # penalty scale = 0.1 * (1 + 2) = 0.3, tau = 2 / 2.3
        h = history_from_pairs([([0, 0], [0, 0]), ([1, 0], [2, 1])])
        m = build_history_matrices(h)
        assert np.array_equal(m.delta_e[:, 0], [1.0, 1.0])
        assert np.array_equal(m.delta_q[:, 0], [1.0, 0.0])
        sol = solve_tau_regularized(m, 0.1)
        assert sol.tau[0] == pytest.approx(2.0 / 2.3, abs=1e-12)

    def test_shrinkage_monotone_in_eta(self):
        rng = np.random.default_rng(17)
        m = build_history_matrices(random_history(rng, 12, 5))
        etas = [0.0, 1e-3, 0.01, 0.1, 0.5, 1.0, 10.0, 1e3]
        norms = [np.linalg.norm(solve_tau_regularized(m, e).tau) for e in etas]
        for a, b in zip(norms, norms[1:]):
            assert b <= a + 1e-12

    def test_negative_eta_rejected(self):
        m = build_history_matrices(two_column_history())
        with pytest.raises(ValueError):
            solve_tau_regularized(m, -0.1)

    def test_degenerate_history_flagged(self):
        # identical residual columns: H = 0, the Gram solve needs the
        # jitter ladder and the result is the plain step, flagged
        h = history_from_pairs([([0, 0], [1, 1]), ([0, 0], [1, 1])])
        sol = solve_tau_unconstrained(build_history_matrices(h))
        assert sol.fallback or sol.jitter > 0.0
        assert np.allclose(sol.alpha, [0.0, 1.0], atol=1e-14)


class TestTransforms:
    def test_empty_tau(self):
        assert np.array_equal(tau_to_alpha([]), [1.0])
        assert alpha_to_tau([1.0]).size == 0

    def test_zero_tau_is_plain_step(self):
        assert np.array_equal(tau_to_alpha([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0, 1.0])

    def test_known_values(self):
        assert np.allclose(alpha_to_tau([0.2, 0.8]), [0.2], atol=1e-15)
        assert np.allclose(alpha_to_tau([0.1, 0.2, 0.7]), [0.3, 0.1], atol=1e-15)

    def test_matrix_layout(self):
        a = transformation_matrix(3)
        expected = np.array(
            [
                [0, 0, 0, 1],
                [0, 0, 1, -1],
                [0, 1, -1, 0],
                [1, -1, 0, 0],
            ],
            dtype=float,
        )
        assert np.array_equal(a, expected)

    @given(
        tau=st.lists(
            st.floats(-5, 5, allow_nan=False, allow_infinity=False),
            min_size=0,
            max_size=6,
        )
    )
    def test_round_trip_and_simplex_sum(self, tau):
        tau = np.array(tau)
        alpha = tau_to_alpha(tau)
        assert abs(alpha.sum() - 1.0) <= 1e-12
        assert np.abs(alpha_to_tau(alpha) - tau).max(initial=0.0) <= 1e-14

    def test_random_length_four_round_trip(self):
        rng = np.random.default_rng(23)
        tau = rng.standard_normal(4)
        back = alpha_to_tau(tau_to_alpha(tau))
        assert np.abs(back - tau).max() <= 1e-14

    def test_non_normalized_alpha_rejected(self):
        with pytest.raises(ValueError, match="sum to 1"):
            alpha_to_tau([0.5, 0.2])


class TestGainTheta:
    def test_unit_alpha_gives_exactly_one(self):
        rng = np.random.default_rng(2)
        e = rng.standard_normal((6, 3))
        assert gain_theta([0.0, 0.0, 1.0], e) == 1.0

    def test_zero_residual_convention(self):
        e = np.zeros((4, 2))
        assert gain_theta([0.5, 0.5], e) == 0.0

    def test_hand_case(self):
        m = build_history_matrices(two_column_history())
        # E alpha = [0.4, 0.8], ||e_k||_inf = 1
        assert gain_theta([0.2, 0.8], m.residuals) == pytest.approx(0.8, abs=1e-14)


class TestMixedUpdate:
    def test_m0_beta1_is_plain_image(self):
        h = history_from_pairs([([1, 2], [3, 4])])
        sol = vanilla_solution(build_history_matrices(h))
        out = mixed_update(h, sol, 1.0)
        assert np.array_equal(out, [3.0, 4.0])

    def test_beta0_is_stationary(self):
        h = history_from_pairs([([1, 2], [3, 4])])
        sol = vanilla_solution(build_history_matrices(h))
        assert np.array_equal(mixed_update(h, sol, 0.0), [1.0, 2.0])

    def test_average_of_four_vectors(self):
        h = history_from_pairs([([0, 4], [2, 0]), ([4, 0], [2, 4])])
        m = build_history_matrices(h)
        sol = vanilla_solution(m)
        sol.alpha = np.array([0.5, 0.5])
        out = mixed_update(h, sol, 0.5)
        assert np.array_equal(out, [2.0, 2.0])

    def test_length_mismatch_rejected(self):
        h = AndersonHistory(2)
        h.push(np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        sol = vanilla_solution(build_history_matrices(h))
        h.push(np.array([5.0, 6.0]), np.array([7.0, 8.0]))
        with pytest.raises(ValueError, match="length"):
            mixed_update(h, sol, 1.0)

    def test_beta_out_of_range(self):
        h = history_from_pairs([([1, 2], [3, 4])])
        sol = vanilla_solution(build_history_matrices(h))
        with pytest.raises(ValueError):
            mixed_update(h, sol, 1.5)


class TestQuasiNewtonUpdate:
    @pytest.mark.parametrize("eta", [0.0, 0.1])
    def test_trajectory_equivalence(self, eta):
        # side-by-side over a real iteration: both forms agree per step
        mdp = ap.generate_random_mdp(21, 30, 4, 3, 1.0, 0.95)
        op = OperatorSpec(OperatorKind.MELLOW_MAX, 5.0)
        h = AndersonHistory(3)
        q = np.zeros((30, 4))
        worst = 0.0
        for _ in range(20):
            tq = apply_bellman(mdp, q, op)
            h.push(q.ravel().copy(), tq.ravel().copy())
            m = build_history_matrices(h)
            sol = (
                solve_tau_regularized(m, eta)
                if eta > 0
                else solve_tau_unconstrained(m)
            )
            nxt = mixed_update(h, sol, 1.0)
            if len(h) >= 2:
                qn, _ = quasi_newton_update(h, 1.0, eta)
                worst = max(worst, float(np.abs(nxt - qn).max()))
            q = nxt.reshape(30, 4)
        assert worst <= 1e-8

    def test_identical_iterates_degenerate(self):
        pair = (np.array([1.0, 2.0]), np.array([2.0, 4.0]))
        h = AndersonHistory(1)
        h.push(*pair)
        h.push(*pair)
        beta = 0.7
        nxt, _ = quasi_newton_update(h, beta, 0.0)
        expected = pair[0] + beta * (pair[1] - pair[0])
        assert np.abs(nxt - expected).max() <= 1e-6

    def test_huge_eta_is_damped_plain_step(self):
        rng = np.random.default_rng(31)
        h = random_history(rng, 8, 3)
        m = build_history_matrices(h)
        beta = 0.6
        nxt, _ = quasi_newton_update(h, beta, 1e12)
        expected = h.newest_iterate() + beta * m.e_newest
        assert np.abs(nxt - expected).max() <= 1e-6

    def test_materialized_matrix_generates_step(self):
        rng = np.random.default_rng(37)
        h = random_history(rng, 10, 4)
        m = build_history_matrices(h)
        nxt, g = quasi_newton_update(h, 1.0, 0.5, materialize=True)
        direct = h.newest_iterate() - g @ m.e_newest
        assert np.abs(nxt - direct).max() <= 1e-10

    def test_needs_two_entries(self):
        h = history_from_pairs([([1, 2], [3, 4])])
        with pytest.raises(ValueError, match="2 history entries"):
            quasi_newton_update(h, 1.0, 0.0)


class TestCertificates:
    @given(seed=st.integers(0, 10**6))
    def test_mixed_residual_never_worse_than_plain(self, seed):
        rng = np.random.default_rng(seed)
        m = build_history_matrices(random_history(rng, 10, 4))
        e_norm = np.linalg.norm(m.e_newest)
        for sol in (
            solve_alpha_kkt(m),
            solve_tau_unconstrained(m),
            solve_tau_regularized(m, 0.1),
        ):
            assert np.linalg.norm(m.residuals @ sol.alpha) <= e_norm * (1 + 1e-9)
