"""Two-stage geometric estimator tests."""

import numpy as np
import pytest

from risce import (AoaProblem, FreqGrid, GeometricParams, SystemGeometry,
                   TrainingPlan, assemble_measurement, beamform_peaks,
                   composite_basis, composite_vector, dft_ris_sequence,
                   orthogonal_pilots, reconstruct_composite, refit_gains,
                   stage1_angles, stage2_reduce, stage2_solve, steering,
                   synth_geometric, ula_steering, wrap_freq)
from risce.two_stage import Stage1Result, Stage2Result

from helpers import draw_sep_1d, draw_sep_2d, on_grid_two_user_scenario


def multi_antenna_scenario(seed=50, m=8, k=3, d_h=2, d_g=2):
    """Single user with k antennas, on-grid separated paths."""
    g = SystemGeometry.create(m, 4, 4, ue_antennas=(k,))
    rng = np.random.default_rng(seed)
    grid1 = FreqGrid.uniform_1d(256)
    grid2 = FreqGrid.uniform_2d(64, 64)
    gains = rng.standard_normal(d_h + d_g) + 1j * rng.standard_normal(d_h + d_g)
    params = GeometricParams(
        w_bh=draw_sep_1d(rng, grid1, d_h, 2 * 2 * np.pi / m),
        w_rh=np.vstack([np.zeros((1, 2)),
                        draw_sep_2d(rng, grid2, d_h - 1, 1.2,
                                    avoid=[np.zeros(2)])]),
        gamma_h=np.concatenate([[1.0 + 0j], gains[1:d_h]]),
        w_rg=(draw_sep_2d(rng, grid2, d_g, 1.2),),
        w_ug=(draw_sep_1d(rng, grid1, d_g, 2 * 2 * np.pi / k),),
        gamma_g=(gains[d_h:],),
    )
    return params, g


def stage1_data(params, g, rng=None, t1=None, sigma2=0.0, P=1.0, seed=3):
    """Noisy/noiseless stage-1 block: fixed RIS state, orthogonal pilots."""
    k = g.k_total
    t1 = t1 or k
    reps = t1 // k
    X1 = np.tile(orthogonal_pilots(k), reps)
    phi = np.exp(2j * np.pi * np.random.default_rng(seed).random(g.n))
    ch = synth_geometric(params, g)
    Y1 = np.sqrt(P) * ch.H @ np.diag(phi) @ np.vstack(ch.G).conj().T @ X1
    if sigma2 > 0:
        Y1 = Y1 + np.sqrt(sigma2 / 2) * (rng.standard_normal(Y1.shape)
                                         + 1j * rng.standard_normal(Y1.shape))
    return Y1, X1


def stage2_data(params, g, blocks=32, P=1.0):
    psi = dft_ris_sequence(blocks, g.n)[:, 1:]
    plan = TrainingPlan.block_repeat(g.k_total, psi, include_direct=False,
                                     P=P, sigma2=0.0)
    op = assemble_measurement(plan, g)
    hc = composite_vector(synth_geometric(params, g), False)
    y = np.sqrt(P) * op.apply(hc)
    Y2 = y.reshape(plan.T, g.m).T
    return Y2, plan, hc


class TestStage1:
    def test_noiseless_on_grid_recovery(self):
        params, g = multi_antenna_scenario()
        Y1, X1 = stage1_data(params, g)
        res = stage1_angles(Y1, X1, g, 2, 2)
        np.testing.assert_allclose(np.sort(res.w_bh), np.sort(params.w_bh),
                                   atol=1e-6)
        np.testing.assert_allclose(np.sort(res.w_ug[0]),
                                   np.sort(params.w_ug[0]), atol=1e-6)

    def test_single_antenna_skips_ue_aods(self):
        params, g = on_grid_two_user_scenario(51)
        Y1, X1 = stage1_data(params, g)
        res = stage1_angles(Y1, X1, g, 2, 2)
        assert all(len(w) == 0 for w in res.w_ug)

    def test_los_matches_beamforming(self):
        params, g = multi_antenna_scenario(seed=52, d_h=1, d_g=1)
        Y1, X1 = stage1_data(params, g)
        res = stage1_angles(Y1, X1, g, 1, 1)
        grid = FreqGrid.uniform_1d(256)
        peaks = beamform_peaks(AoaProblem(Y1, g.bs, 1), grid)
        assert abs(res.w_bh[0] - peaks[0, 0]) < grid.cell_width()[0]
        assert abs(res.w_bh[0] - params.w_bh[0]) < 1e-6

    def test_model_order_exceeding_array_rejected(self):
        params, g = multi_antenna_scenario()
        Y1, X1 = stage1_data(params, g)
        with pytest.raises(ValueError):
            stage1_angles(Y1, X1, g, g.m, 2)


class TestStage2Reduce:
    def test_defining_identity_general(self):
        params, g = multi_antenna_scenario()
        truth = Stage1Result(w_bh=params.w_bh, w_ug=params.w_ug)
        Y2, plan, _ = stage2_data(params, g)
        red = stage2_reduce(Y2, plan, truth, g)
        # model: Y_B = Psi^* C^T Gamma_GH
        psis = plan.Psi.conj()
        diffs = wrap_freq(params.w_rg[0][:, None, :] - params.w_rh[None, :, :])
        C_T = np.column_stack([steering(diffs[l, p], g.ris)
                               for l in range(2) for p in range(2)])
        gam = np.kron(params.gamma_g[0].conj(), params.gamma_h)
        np.testing.assert_allclose(red.Y_B, psis @ C_T * gam, atol=1e-10)

    def test_single_antenna_column_count(self):
        params, g = on_grid_two_user_scenario(53)
        truth = Stage1Result(w_bh=params.w_bh, w_ug=(np.zeros(0), np.zeros(0)))
        Y2, plan, _ = stage2_data(params, g)
        red = stage2_reduce(Y2, plan, truth, g)
        assert red.mode == "single-antenna-ue"
        assert red.Y_B.shape[1] == 2 * params.d_h  # d_H columns per user

    def test_mixed_antenna_counts_rejected(self):
        g = SystemGeometry.create(8, 4, 4, ue_antennas=(1, 2))
        truth = Stage1Result(w_bh=np.zeros(1), w_ug=(np.zeros(0), np.zeros(1)))
        plan = TrainingPlan.block_repeat(3, dft_ris_sequence(17, 16)[:, 1:],
                                         include_direct=False)
        with pytest.raises(ValueError):
            stage2_reduce(np.zeros((8, plan.T)), plan, truth, g)


class TestStage2Solve:
    def test_general_mode_rows_match(self):
        params, g = multi_antenna_scenario()
        truth = Stage1Result(w_bh=params.w_bh, w_ug=params.w_ug)
        Y2, plan, _ = stage2_data(params, g)
        red = stage2_reduce(Y2, plan, truth, g)
        sol = stage2_solve(red, plan, g, 2)
        assert sol.mode == "general"
        diffs = wrap_freq(params.w_rg[0][:, None, :]
                          - params.w_rh[None, :, :]).reshape(-1, 2)
        gam = np.kron(params.gamma_g[0].conj(), params.gamma_h)
        # rows c_k = gamma_k a_R(w_k) reconstructed from the estimates
        for k in range(4):
            want = gam[k] * steering(diffs[k], g.ris)
            got = sol.gamma[0][k] * steering(sol.w_diff[0][k], g.ris)
            np.testing.assert_allclose(got, want, atol=1e-8 * np.abs(gam[k])
                                       * g.n + 1e-10)

    def test_single_antenna_separated_recovery(self):
        params, g = on_grid_two_user_scenario(54)
        truth = Stage1Result(w_bh=params.w_bh, w_ug=(np.zeros(0), np.zeros(0)))
        Y2, plan, hc = stage2_data(params, g)
        red = stage2_reduce(Y2, plan, truth, g)
        sol = stage2_solve(red, plan, g, 2)
        assert sol.w_rh is not None
        np.testing.assert_allclose(sol.w_rh[0][0], [0.0, 0.0], atol=1e-12)
        assert sol.gamma_h[0][0] == 1.0 + 0j
        for u in range(2):
            order_t = np.lexsort(params.w_rg[u].T)
            order_e = np.lexsort(sol.w_rg[u].T)
            np.testing.assert_allclose(sol.w_rg[u][order_e],
                                       params.w_rg[u][order_t], atol=1e-6)
            np.testing.assert_allclose(sol.gamma_g[u][order_e],
                                       params.gamma_g[u][order_t], atol=1e-5)
        hc_hat = reconstruct_composite(truth, sol, g)
        assert np.linalg.norm(hc_hat - hc) / np.linalg.norm(hc) < 1e-8

    def test_los_modes_coincide(self):
        params, g = multi_antenna_scenario(seed=55, d_h=1, d_g=1)
        truth = Stage1Result(w_bh=params.w_bh, w_ug=params.w_ug)
        Y2, plan, hc = stage2_data(params, g)
        red = stage2_reduce(Y2, plan, truth, g)
        sol = stage2_solve(red, plan, g, 1)
        hc_hat = reconstruct_composite(truth, sol, g)
        assert np.linalg.norm(hc_hat - hc) / np.linalg.norm(hc) < 1e-8


class TestReconstruct:
    def _true_results(self, params, mode="general"):
        d_h = params.d_h
        w_diff, gamma = [], []
        for u in range(params.n_users):
            diffs = wrap_freq(params.w_rg[u][:, None, :]
                              - params.w_rh[None, :, :])
            w_diff.append(diffs.reshape(-1, 2))
            gamma.append(np.kron(params.gamma_g[u].conj(), params.gamma_h))
        s1 = Stage1Result(w_bh=params.w_bh, w_ug=params.w_ug)
        s2 = Stage2Result(mode=mode, w_diff=tuple(w_diff), gamma=tuple(gamma))
        return s1, s2

    def test_true_parameters_round_trip(self):
        params, g = multi_antenna_scenario(seed=56)
        s1, s2 = self._true_results(params)
        hc = composite_vector(synth_geometric(params, g), False)
        np.testing.assert_allclose(reconstruct_composite(s1, s2, g), hc,
                                   atol=1e-12 * np.linalg.norm(hc))

    def test_ambiguity_invariance(self):
        from risce.channels import GeometricParams as GP
        params, g = multi_antenna_scenario(seed=57)
        shift = np.array([0.7, -0.4])
        alpha = 1.3 - 0.2j
        shifted = GP(w_bh=params.w_bh, w_rh=wrap_freq(params.w_rh + shift),
                     gamma_h=alpha * params.gamma_h,
                     w_rg=tuple(wrap_freq(w + shift) for w in params.w_rg),
                     w_ug=params.w_ug,
                     gamma_g=tuple(gg / np.conj(alpha) for gg in params.gamma_g))
        a1, a2 = self._true_results(params)
        b1, b2 = self._true_results(shifted)
        np.testing.assert_allclose(reconstruct_composite(a1, a2, g),
                                   reconstruct_composite(b1, b2, g), atol=1e-12)

    def test_los_kron_structure(self):
        params, g = multi_antenna_scenario(seed=58, d_h=1, d_g=1)
        s1, s2 = self._true_results(params)
        hc = reconstruct_composite(s1, s2, g)
        gamma = params.gamma_g[0][0].conj() * params.gamma_h[0]
        expect = gamma * np.kron(
            steering(wrap_freq(params.w_rg[0][0] - params.w_rh[0]), g.ris),
            np.kron(ula_steering(params.w_ug[0][0], g.k_total).conj(),
                    ula_steering(params.w_bh[0], g.m)))
        np.testing.assert_allclose(hc, expect, atol=1e-12)


class TestRefitGains:
    def _setup(self, t_blocks=6, seed=59):
        params, g = multi_antenna_scenario(seed=seed)
        psi = dft_ris_sequence(t_blocks * 0 + max(t_blocks, 17), g.n)[:, 1:]
        plan = TrainingPlan.block_repeat(g.k_total, psi, include_direct=False,
                                         P=2.0, sigma2=0.0)
        op = assemble_measurement(plan, g)
        hc = composite_vector(synth_geometric(params, g), False)
        y = np.sqrt(plan.P) * op.apply(hc)
        s1 = Stage1Result(w_bh=params.w_bh, w_ug=params.w_ug)
        diffs = wrap_freq(params.w_rg[0][:, None, :] - params.w_rh[None, :, :])
        s2 = Stage2Result(mode="general", w_diff=(diffs.reshape(-1, 2),),
                          gamma=(np.kron(params.gamma_g[0].conj(),
                                         params.gamma_h),))
        return params, g, plan, op, y, s1, s2

    def test_exact_gains_with_true_angles(self):
        params, g, plan, op, y, s1, s2 = self._setup()
        B = composite_basis(s1, s2, g)
        gains = refit_gains(y, op, B, plan.P)
        np.testing.assert_allclose(gains, s2.gamma[0], atol=1e-10)

    def test_minimal_training_still_exact(self):
        # square gain system: M*T rows vs d_H d_G unknowns, T small
        params, g = multi_antenna_scenario(seed=60)
        rng = np.random.default_rng(0)
        from risce import random_ris_sequence
        psi = random_ris_sequence(4, g.n, rng)
        X = np.tile(orthogonal_pilots(g.k_total), 4)[:, :4]
        plan = TrainingPlan.per_sample(X, psi, include_direct=False, sigma2=0.0)
        op = assemble_measurement(plan, g)
        hc = composite_vector(synth_geometric(params, g), False)
        y = op.apply(hc)
        s1 = Stage1Result(w_bh=params.w_bh, w_ug=params.w_ug)
        diffs = wrap_freq(params.w_rg[0][:, None, :] - params.w_rh[None, :, :])
        gam = np.kron(params.gamma_g[0].conj(), params.gamma_h)
        s2 = Stage2Result(mode="general", w_diff=(diffs.reshape(-1, 2),),
                          gamma=(gam,))
        gains = refit_gains(y, op, composite_basis(s1, s2, g), 1.0)
        np.testing.assert_allclose(gains, gam, atol=1e-8)

    def test_ls_optimality_under_angle_perturbation(self):
        params, g, plan, op, y, s1, s2 = self._setup(seed=61)
        rng = np.random.default_rng(5)
        s1p = Stage1Result(w_bh=params.w_bh + 1e-3, w_ug=params.w_ug)
        B = composite_basis(s1p, s2, g)
        gains = refit_gains(y, op, B, plan.P)
        ZB = op.matrix @ B
        resid_opt = np.linalg.norm(y - np.sqrt(plan.P) * ZB @ gains)
        for _ in range(5):
            trial = gains + 0.01 * (rng.standard_normal(4)
                                    + 1j * rng.standard_normal(4))
            assert resid_opt <= np.linalg.norm(
                y - np.sqrt(plan.P) * ZB @ trial) + 1e-12


class TestMultiUserPairing:
    def test_columns_pair_single_frequencies(self):
        # each recovered column reproduces one row of the stacked RIS factor
        params, g = on_grid_two_user_scenario(62)
        truth = Stage1Result(w_bh=params.w_bh, w_ug=(np.zeros(0), np.zeros(0)))
        Y2, plan, _ = stage2_data(params, g)
        red = stage2_reduce(Y2, plan, truth, g)
        sol = stage2_solve(red, plan, g, 2)
        for u in range(2):
            diffs_true = wrap_freq(params.w_rg[u][:, None, :]
                                   - params.w_rh[None, :, :]).reshape(-1, 2)
            gam_true = np.kron(params.gamma_g[u].conj(), params.gamma_h)
            C_true = np.column_stack([gam_true[k] * steering(diffs_true[k], g.ris)
                                      for k in range(4)])
            C_est = np.column_stack([sol.gamma[u][k] * steering(sol.w_diff[u][k], g.ris)
                                     for k in range(4)])
            # match columns up to the (l, p) ordering induced by estimation
            for k in range(4):
                errs = np.linalg.norm(C_true - C_est[:, [k]], axis=0)
                assert errs.min() < 1e-5 * np.linalg.norm(C_true[:, 0])
