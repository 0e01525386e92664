import numpy as np
import pytest

from sylvadi import (AdiConfig, ShiftSequence, SparseMatrix, Strategy,
                     SylvesterProblem, adi_step, choose_tolerances,
                     computed_residual_norm, gamma, make_bindings,
                     residual_gap, run, run_with_state, tolB_from_tolA,
                     tolerance_budget, true_residual_norm,
                     verify_factor_identity, C_BOUND)
from sylvadi.adi import (AdiState, sigma_alpha_matrix, sigma_beta_matrix)

from conftest import (dense_problem, dense_residual, kron_solve, prefix_state,
                      real_shift_pairs)


class TestGamma:
    def test_simple(self):
        assert gamma(1, 2) == -3

    def test_conjugate_pair(self):
        s, w = 1.5, 0.75
        assert gamma(s + 1j * w, s - 1j * w) == -2 * s

    def test_zero(self):
        assert gamma(0, 0) == 0


class TestComputedResidualNorm:
    def test_rank_one(self):
        w = np.eye(3)[:, [0]]
        t = 2.0 * np.eye(3)[:, [0]]
        assert abs(computed_residual_norm(w, t) - 2.0) < 1e-15

    def test_orthonormal_scaled(self, rng):
        w, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        t = w @ np.diag([3.0, 4.0])
        assert abs(computed_residual_norm(w, t) - 4.0) < 1e-13

    def test_against_dense_svd(self, rng):
        w = rng.standard_normal((20, 3)) + 1j * rng.standard_normal((20, 3))
        t = rng.standard_normal((20, 3)) + 1j * rng.standard_normal((20, 3))
        full = np.linalg.svd(w @ t.conj().T, compute_uv=False)[0]
        assert abs(computed_residual_norm(w, t) - full) <= 1e-12 * full


class TestToleranceBudget:
    def test_uniform_budget_value(self):
        cfg = AdiConfig(strategy="dynamic_mid", gap_budget=1e-8, kmax=50, xi=1.0)
        val = tolerance_budget(cfg, 1)
        expected = 1e-8 / (2.0 * (6.0 + 4.0 * np.sqrt(2.0)) * 50)
        assert abs(val - expected) < 1e-25
        assert abs(val - 8.5786e-12) < 1e-15 * 1e-12 + 1e-16

    def test_bl_reduces_to_uniform_at_zero_gap(self):
        cfg_bl = AdiConfig(strategy="dynamic_mid_bl", gap_budget=1e-8)
        cfg = AdiConfig(strategy="dynamic_mid", gap_budget=1e-8)
        a = tolerance_budget(cfg_bl, 1, 0.0, 0.0)
        b = tolerance_budget(cfg, 1)
        assert abs(a - b) < 1e-15 * b

    def test_bl_exhausted_budget(self):
        eps = 1e-8
        cfg = AdiConfig(strategy="dynamic_mid_bl", gap_budget=eps, kmax=50, xi=1.0)
        spent = 2.0 * eps / (2.0 * C_BOUND * 50)
        assert tolerance_budget(cfg, 2, spent, 0.0) == 0.0

    def test_c_bound_constant(self):
        assert abs(C_BOUND - (2.0 + np.sqrt(2.0))) < 1e-15
        assert abs(C_BOUND**2 - (6.0 + 4.0 * np.sqrt(2.0))) < 1e-13


class TestTolBFromTolA:
    # data from the admissible-region worked example (c-check 3)
    def test_axis_intercept(self):
        da = 1e-8 / (3.0 * 1e-5)
        assert tolB_from_tolA(da, 1e-8, 3.0, 1e-5, 2e-3) <= 1e-20
        # past the intercept the bound is exactly zero
        assert tolB_from_tolA(2.0 * da, 1e-8, 3.0, 1e-5, 2e-3) == 0.0

    def test_zero_delta_a(self):
        val = tolB_from_tolA(0.0, 1e-8, 3.0, 1e-5, 2e-3)
        assert abs(val - 1e-8 / (3.0 * 2e-3)) < 1e-20

    def test_interior_point(self):
        val = tolB_from_tolA(1e-4, 1e-8, 3.0, 1e-5, 2e-3)
        expected = (1e-8 - 3.0 * 1e-4 * 1e-5) / (3.0 * (2e-4 + 2e-3))
        assert abs(val - expected) < 1e-20
        assert abs(val - 1.0606e-6) < 1e-9


class TestChooseTolerances:
    def test_dynamic_mid_worked_example(self):
        cfg = AdiConfig(strategy="dynamic_mid", outer_tolerance=1e-8,
                        delta_min_A=5e-10, delta_min_B=5e-10,
                        delta_max_A=0.1, delta_max_B=0.1, gap_budget=1.0)
        dec = choose_tolerances(cfg, 2, norm_w=2e-3, norm_t=1e-5,
                                eps_hat=8.58e-12)
        assert abs(dec.delta_A - 0.5 * (8.58e-12 / 1e-5 - 5e-10)) < 1e-18
        assert abs(dec.delta_A - 4.287e-7) < 1e-9
        expected_b = (8.58e-12 - dec.delta_A * 1e-5) / (2 * dec.delta_A + 2e-3)
        assert abs(dec.delta_B - expected_b) < 1e-20
        assert abs(dec.delta_B - 2.145e-9) < 2e-12

    def test_fixed(self):
        cfg = AdiConfig(strategy="fixed", outer_tolerance=1e-8)
        dec = choose_tolerances(cfg, 1, 1.0, 1.0, 1e-12)
        assert dec.delta_A == dec.delta_B == 5e-10

    def test_clamp_floor(self):
        cfg = AdiConfig(strategy="dynamic_mid", outer_tolerance=1e-8,
                        gap_budget=1.0)
        dec = choose_tolerances(cfg, 1, norm_w=1.0, norm_t=1.0, eps_hat=1e-12)
        assert dec.delta_A == cfg.delta_min_A
        assert dec.delta_B == cfg.delta_min_B
        assert dec.clamped_A_min and dec.clamped_B_min

    def test_admissibility_within_budget(self, rng):
        # psi(dA, dB) = dA*norm_t + dB*norm_w + 2 dA dB <= eps_hat when no
        # clamping occurred
        for strat in ("dynamic_mid", "dynamic_b"):
            cfg = AdiConfig(strategy=strat, outer_tolerance=1e-8,
                            delta_min_A=1e-14, delta_min_B=1e-14,
                            gap_budget=1.0)
            for _ in range(20):
                nw, nt = 10.0 ** rng.uniform(-6, 0, 2)
                eps_hat = 10.0 ** rng.uniform(-12, -8)
                dec = choose_tolerances(cfg, 1, nw, nt, eps_hat)
                if dec.clamped_A_min or dec.clamped_B_min:
                    continue
                psi = dec.delta_A * nt + dec.delta_B * nw + 2 * dec.delta_A * dec.delta_B
                assert psi <= eps_hat * (1.0 + 1e-12)

    def test_b_preferring_locks_floor(self):
        cfg = AdiConfig(strategy="dynamic_b", outer_tolerance=1e-8,
                        gap_budget=1.0)
        dec = choose_tolerances(cfg, 1, norm_w=1e-4, norm_t=1e-4, eps_hat=1e-9)
        assert dec.delta_B == cfg.delta_min_B
        expected = (1e-9 - dec.delta_B * 1e-4) / (1e-4 + 2 * dec.delta_B)
        assert abs(dec.delta_A - expected) < 1e-18

    def test_exact_direct_zero(self):
        cfg = AdiConfig(strategy="exact_direct")
        dec = choose_tolerances(cfg, 1, 1.0, 1.0, 1e-10)
        assert dec.delta_A == 0.0 and dec.delta_B == 0.0


def scalar_problem():
    one = SparseMatrix(np.array([[1.0]]))
    neg = SparseMatrix(np.array([[-1.0]]))
    return SylvesterProblem(A=neg, B=neg, f=np.array([[1.0]]),
                            g=np.array([[1.0]]), M=one, C=one)


class TestAdiStep:
    def test_scalar_one_step(self):
        problem = scalar_problem()
        cfg = AdiConfig(strategy="exact_direct", keep_inner_residuals=True)
        state = AdiState.initial(problem, keep_inner_residuals=True)
        bindings = make_bindings(problem, cfg)
        dec = choose_tolerances(cfg, 1, 1.0, 1.0, 1e-10)
        adi_step(problem, state, (-1.0, -1.0), dec, bindings)
        assert abs(state.Z[0, 0] - (-0.5)) < 1e-14
        assert abs(state.gammas[0] - 2.0) < 1e-14
        assert abs(state.w[0, 0]) < 1e-14
        assert abs(state.t[0, 0]) < 1e-14
        X = state.solution(1).dense()
        assert abs(X[0, 0] - 0.5) < 1e-14     # exact solution of -2X = -1

    def test_exact_solves_zero_accumulators(self, rng):
        problem, Ad, Bd = dense_problem(rng, 8, 6, 2)
        cfg = AdiConfig(strategy="exact_direct")
        shifts = ShiftSequence(pairs=real_shift_pairs(Ad, Bd, 6))
        _, _, state = run_with_state(problem, cfg, shifts)
        scale = problem.rhs_norm()
        assert state.u <= 1e-12 * scale
        assert state.v <= 1e-12 * scale

    def test_cayley_product_oracle(self, rng):
        problem, Ad, Bd = dense_problem(rng, 6, 4, 1)
        pairs = real_shift_pairs(Ad, Bd, 10)
        cfg = AdiConfig(strategy="exact_direct", kmax=10, outer_tolerance=1e-300)
        _, _, state = run_with_state(problem, cfg, ShiftSequence(pairs=pairs))
        w = problem.f.astype(complex)
        for alpha, beta in pairs[:state.k]:
            w = (Ad - alpha * np.eye(6)) @ np.linalg.solve(
                Ad + beta * np.eye(6), w)
        assert np.max(np.abs(state.w - w)) <= 1e-11 * max(np.max(np.abs(w)), 1.0)


class TestRun:
    def test_zero_rhs_returns_empty(self, rng):
        problem, Ad, Bd = dense_problem(rng, 5, 4, 1)
        problem.f[:] = 0.0
        cfg = AdiConfig(strategy="exact_direct")
        sol, rep = run(problem, cfg, ShiftSequence(pairs=[(-1 + 0j, -1 + 0j)]))
        assert rep.converged and rep.outer_iterations == 0
        assert sol.col_dim == 0

    def test_kronecker_oracle(self, rng):
        problem, Ad, Bd = dense_problem(rng, 20, 15, 2)
        cfg = AdiConfig(strategy="exact_direct")
        shifts = ShiftSequence(pairs=real_shift_pairs(Ad, Bd, 30))
        sol, rep = run(problem, cfg, shifts)
        assert rep.converged and rep.outer_iterations <= 50
        X = kron_solve(Ad, Bd, problem.f, problem.g)
        err = np.linalg.norm(sol.dense() - X) / np.linalg.norm(X)
        assert err <= 1e-6

    def test_inexact_tracks_exact_run(self, rng):
        problem, Ad, Bd = dense_problem(rng, 20, 15, 2, symmetric=True)
        shifts = ShiftSequence(pairs=real_shift_pairs(Ad, Bd, 30))
        eps = 1e-8 * problem.rhs_norm()
        exact_cfg = AdiConfig(strategy="exact_direct")
        _, exact_rep = run(problem, exact_cfg, shifts)
        cfg = AdiConfig(strategy="dynamic_mid_bl", gap_budget=eps,
                        delta_min_A=1e-15, delta_min_B=1e-15,
                        max_inner_iterations=5000)
        sol, rep = run(problem, cfg, shifts)
        assert rep.converged
        assert rep.outer_iterations == exact_rep.outer_iterations
        true_exact = exact_rep.final_scaled_residual * rep.rhs_norm
        true_inexact = true_residual_norm(problem, sol)
        assert true_inexact <= true_exact + (1.0 + C_BOUND) * eps

    def test_nonconvergence_flagged(self, rng):
        problem, Ad, Bd = dense_problem(rng, 10, 8, 1)
        cfg = AdiConfig(strategy="exact_direct", kmax=1)
        shifts = ShiftSequence(pairs=[(-0.01 + 0j, -0.01 + 0j)])
        _, rep = run(problem, cfg, shifts)
        assert not rep.converged
        assert rep.outer_iterations == 1


class TestDiagnostics:
    def _inexact_run(self, rng, strategy="dynamic_mid_bl"):
        problem, Ad, Bd = dense_problem(rng, 14, 10, 2, symmetric=True)
        shifts = ShiftSequence(pairs=real_shift_pairs(Ad, Bd, 20))
        cfg = AdiConfig(strategy=strategy, keep_inner_residuals=True,
                        max_inner_iterations=5000)
        sol, rep, state = run_with_state(problem, cfg, shifts)
        assert rep.converged
        return problem, sol, rep, state

    def test_factor_identity_exact_solves(self, rng):
        problem, Ad, Bd = dense_problem(rng, 9, 7, 2)
        shifts = ShiftSequence(pairs=real_shift_pairs(Ad, Bd, 12))
        cfg = AdiConfig(strategy="exact_direct", keep_inner_residuals=True)
        _, rep, state = run_with_state(problem, cfg, shifts)
        assert verify_factor_identity(problem, state) <= 1e-12

    def test_factor_identity_single_step_rearrangement(self, rng):
        problem, Ad, Bd = dense_problem(rng, 6, 5, 1)
        cfg = AdiConfig(strategy="exact_direct", kmax=1,
                        keep_inner_residuals=True)
        shifts = ShiftSequence(pairs=[(-1.0 + 0j, -2.0 + 0j)])
        _, _, state = run_with_state(problem, cfg, shifts)
        z = state.Z[:, [0]]
        lhs = Ad @ z
        rhs = (-1.0) * z + state.w - state.inner_residuals_A[0]
        assert np.max(np.abs(lhs - rhs)) < 1e-13 * max(np.max(np.abs(lhs)), 1.0)
        assert verify_factor_identity(problem, state) <= 1e-13

    def test_factor_identity_inexact_dense_oracle(self, rng):
        problem, sol, rep, state = self._inexact_run(rng)
        k, r = state.k, problem.r
        sa = sigma_alpha_matrix(state.shift_history, state.gammas, r)
        Ad = problem.A.toarray()
        S_A = state.S_A()
        defect = (Ad @ state.Z - state.Z @ sa
                  - np.tile(state.w, (1, k)) + S_A)
        scale = np.linalg.norm(Ad) * np.linalg.norm(state.Z)
        assert np.linalg.norm(defect) / scale <= 1e-12
        assert verify_factor_identity(problem, state) <= 1e-12

    def test_sigma_beta_identity(self, rng):
        problem, sol, rep, state = self._inexact_run(rng)
        sb = sigma_beta_matrix(state.shift_history, state.gammas, problem.r)
        Bd = problem.B.toarray()
        defect = (Bd.T @ state.Y - state.Y @ sb
                  - np.tile(state.t, (1, state.k)) + state.S_B())
        scale = np.linalg.norm(Bd) * np.linalg.norm(state.Y)
        assert np.linalg.norm(defect) / scale <= 1e-12

    def test_small_sylvester_gamma_identity(self, rng):
        # sigma_alpha Gamma + Gamma sigma_beta^* + gvec gvec^* = 0
        problem, sol, rep, state = self._inexact_run(rng)
        r = problem.r
        sa = sigma_alpha_matrix(state.shift_history, state.gammas, r)
        sb = sigma_beta_matrix(state.shift_history, state.gammas, r)
        gd = np.repeat(np.asarray(state.gammas, dtype=complex), r)
        G = np.diag(gd)
        gvec = np.kron(np.asarray(state.gammas, dtype=complex).reshape(-1, 1),
                       np.eye(r))
        defect = sa @ G + G @ sb.conj().T + gvec @ gvec.conj().T
        assert np.max(np.abs(defect)) < 1e-10 * max(np.max(np.abs(G)), 1.0)

    def test_true_residual_empty_factors(self, rng):
        problem, Ad, Bd = dense_problem(rng, 8, 6, 1)
        state = AdiState.initial(problem)
        val = true_residual_norm(problem, state.solution(1))
        expected = np.linalg.norm(problem.f) * np.linalg.norm(problem.g)
        assert abs(val - expected) <= 1e-6 * expected

    def test_true_residual_matches_computed_exact(self, rng):
        problem, Ad, Bd = dense_problem(rng, 12, 9, 2)
        shifts = ShiftSequence(pairs=real_shift_pairs(Ad, Bd, 16))
        cfg = AdiConfig(strategy="exact_direct")
        sol, rep, state = run_with_state(problem, cfg, shifts)
        tr = true_residual_norm(problem, sol)
        cr = computed_residual_norm(state.w, state.t)
        assert abs(tr - cr) <= 1e-6 * max(cr, 1e-300) + 1e-12 * rep.rhs_norm

    def test_true_residual_matches_dense_assembly(self, rng):
        problem, sol, rep, state = self._inexact_run(rng)
        dense = np.linalg.norm(dense_residual(problem, sol.dense().real
                                              + 1j * sol.dense().imag), 2)
        tr = true_residual_norm(problem, sol)
        assert abs(tr - dense) <= 1e-6 * dense

    def test_gap_vs_computed_minus_true(self, rng):
        problem, sol, rep, state = self._inexact_run(rng)
        tr = true_residual_norm(problem, sol)
        cr = computed_residual_norm(state.w, state.t)
        assert abs(tr - cr) <= state.u + state.v + 1e-10 * rep.rhs_norm

    def test_residual_gap_exact_solves(self, rng):
        problem, Ad, Bd = dense_problem(rng, 9, 7, 1)
        shifts = ShiftSequence(pairs=real_shift_pairs(Ad, Bd, 12))
        cfg = AdiConfig(strategy="exact_direct", keep_inner_residuals=True)
        _, rep, state = run_with_state(problem, cfg, shifts)
        assert residual_gap(problem, state) <= 1e-12 * rep.rhs_norm

    def test_residual_gap_single_step_dense_oracle(self, rng):
        problem, Ad, Bd = dense_problem(rng, 10, 8, 1, symmetric=True)
        cfg = AdiConfig(strategy="dynamic_mid", kmax=1,
                        keep_inner_residuals=True, max_inner_iterations=5000)
        shifts = ShiftSequence(pairs=real_shift_pairs(Ad, Bd, 4))
        _, _, state = run_with_state(problem, cfg, shifts)
        g1 = state.gammas[0]
        rA = state.inner_residuals_A[0]
        rB = state.inner_residuals_B[0]
        z, y = state.Z, state.Y
        dense_gap = (rA * g1) @ y.conj().T + (z * g1) @ rB.conj().T
        expected = np.linalg.svd(dense_gap, compute_uv=False)[0]
        got = residual_gap(problem, state)
        assert abs(got - expected) <= 1e-12 * max(expected, 1e-300)

    def test_gap_bounded_by_accumulators(self, rng):
        for strat in ("dynamic_mid", "dynamic_b_bl", "fixed"):
            problem, sol, rep, state = self._inexact_run(rng, strat)
            gap = residual_gap(problem, state)
            assert gap <= state.u + state.v + 1e-10 * rep.rhs_norm

    def test_prefix_state_reconstruction(self, rng):
        problem, sol, rep, state = self._inexact_run(rng)
        k = state.k // 2
        sub = prefix_state(problem, state, k)
        scaled = computed_residual_norm(sub.w, sub.t) / rep.rhs_norm
        assert abs(scaled - rep.records[k - 1].scaled_res) <= 1e-10 * max(scaled, 1.0)


class TestConfigValidation:
    def test_rejects_bad_tolerance(self):
        with pytest.raises(ValueError):
            AdiConfig(outer_tolerance=2.0)

    def test_rejects_bad_xi(self):
        with pytest.raises(ValueError):
            AdiConfig(xi=0.0)

    def test_rejects_inverted_delta_bounds(self):
        with pytest.raises(ValueError):
            AdiConfig(delta_min_A=0.2, delta_max_A=0.1)

    def test_defaults_from_outer_tolerance(self):
        cfg = AdiConfig(outer_tolerance=1e-6)
        assert cfg.fixed_delta == 5e-8
        assert cfg.delta_min_A == 5e-8 and cfg.delta_min_B == 5e-8

    def test_rank_deficient_rhs_rejected(self, rng):
        A = SparseMatrix(-np.eye(4))
        B = SparseMatrix(-np.eye(3))
        f = np.ones((4, 2))
        g = rng.standard_normal((3, 2))
        with pytest.raises(ValueError):
            SylvesterProblem(A=A, B=B, f=f, g=g)
