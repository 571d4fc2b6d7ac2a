"""Decoupled two-stage estimation of geometric composite channels.

Stage 1 recovers the BS-side AoAs (and, for multi-antenna users, the
UE-side AoDs) from pilots sent while the RIS holds a fixed reflection.
Stage 2 varies the RIS, removes the stage-1 factors from each snapshot,
and reduces the problem to independent single-tone fits over the RIS
manifold: column k of the reduced data is (up to noise) a scaled RIS
steering vector at the difference frequency w_rg[l] - w_rh[p] with
k = (l-1) d_H + p.

Only the composite channel is identifiable in general; the single-antenna
user path additionally separates the RIS AoAs/AoDs and gains under the
normalization w_rh[0] = 0, gamma_h[0] = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import block_diag

from .arrays import FreqGrid, build_dictionary, steering, ula_steering, wrap_freq
from .doa import AoaProblem, greedy_peaks, refine_paths
from .errors import IdentifiabilityError
from .geometry import SystemGeometry
from .training import MeasurementOperator, TrainingPlan

__all__ = [
    "Stage1Result",
    "ReducedStage2",
    "Stage2Result",
    "stage1_angles",
    "stage2_reduce",
    "stage2_solve",
    "reconstruct_composite",
    "composite_basis",
    "refit_gains",
]


@dataclass(frozen=True)
class Stage1Result:
    w_bh: np.ndarray    # (d_H,) BS AoAs
    w_ug: tuple         # per user: (d_G,) UE AoDs (empty for single-antenna users)


@dataclass(frozen=True)
class ReducedStage2:
    """Stage-2 snapshots mapped onto the RIS manifold.

    ``Y_B`` is T2 x (d_H * sum(d_G)) in general mode (one column per
    (l, p) pair, user-major l) or T2 x (U * d_H) in single-antenna mode.
    """

    Y_B: np.ndarray
    mode: str
    d_h: int
    user_slices: tuple


@dataclass(frozen=True)
class Stage2Result:
    """Per-user difference frequencies and gains for the RIS factor.

    ``w_diff[u][k]`` and ``gamma[u][k]`` describe column k = (l-1) d_H + p of
    user u's RIS factor. In the single-antenna path the separated estimates
    ``w_rg``/``gamma_g`` (per user) and ``w_rh``/``gamma_h`` are also filled,
    normalized to w_rh[0] = 0, gamma_h[0] = 1.
    """

    mode: str
    w_diff: tuple
    gamma: tuple
    w_rg: Optional[tuple] = None
    gamma_g: Optional[tuple] = None
    w_rh: Optional[tuple] = None
    gamma_h: Optional[tuple] = None


def _check_orthogonal_pilots(X, t):
    G = X @ X.conj().T
    if np.max(np.abs(G - t * np.eye(X.shape[0]))) > 1e-8 * t:
        raise ValueError("stage 1 requires orthogonal pilots with X X^H = T1 I")


def stage1_angles(Y1: np.ndarray, X1: np.ndarray, geometry: SystemGeometry,
                  d_h: int, d_g, P: float = 1.0, res: int = 256,
                  cycles: int = 100) -> Stage1Result:
    """Estimate BS AoAs (and UE AoDs per multi-antenna user) from stage-1 data.

    The BS AoAs come from beamforming peaks of Y1 refined by cyclic
    matched-filter polishing; the UE AoDs of user u come from that user's
    block rows of X1 Y1^H / (T1 sqrt(P)).
    """
    Y1 = np.asarray(Y1, complex)
    t1 = Y1.shape[1]
    if t1 < geometry.k_total:
        raise ValueError("stage 1 needs T1 >= K")
    _check_orthogonal_pilots(np.asarray(X1, complex), t1)
    if geometry.m <= d_h:
        raise ValueError("model order d_H must be below the BS array size")
    d_g = [d_g] * geometry.n_users if np.isscalar(d_g) else list(d_g)

    grid = FreqGrid.uniform_1d(res)
    cell = grid.cell_width()
    bs_peaks = greedy_peaks(AoaProblem(Y1, geometry.bs, d_h), grid)
    w_bh = refine_paths(Y1, lambda w: steering(w, geometry.bs), bs_peaks,
                        cell, axes=1, cycles=cycles)[:, 0]

    S = X1 @ Y1.conj().T / (t1 * np.sqrt(P))
    w_ug = []
    for u, rows in enumerate(geometry.user_row_slices()):
        k_u = geometry.ue_antennas[u]
        if k_u == 1:
            w_ug.append(np.zeros(0))
            continue
        if k_u <= d_g[u]:
            raise ValueError(f"user {u} needs more antennas than paths")
        ue = geometry.ue_spec(u)
        data = S[rows, :]
        peaks = greedy_peaks(AoaProblem(data, ue, d_g[u]), grid)
        refined = refine_paths(data, lambda w: steering(w, ue), peaks,
                               cell, axes=1, cycles=cycles)
        w_ug.append(refined[:, 0])
    return Stage1Result(w_bh=w_bh, w_ug=tuple(w_ug))


def _pinv_solve(B, y, context):
    u, s, vh = np.linalg.svd(B, full_matrices=False)
    if s[0] == 0 or s[-1] <= s[0] / 1e12:
        raise IdentifiabilityError(f"{context} is rank deficient")
    return vh.conj().T @ ((u.conj().T @ y) / s)


def _ris_phases(plan: TrainingPlan) -> np.ndarray:
    """Block-level RIS phase rows phi_b^T (one row per Psi row)."""
    if plan.include_direct:
        raise ValueError("stage-2 training assumes no direct column")
    return plan.Psi.conj()


def stage2_reduce(Y2: np.ndarray, plan2: TrainingPlan, stage1: Stage1Result,
                  geometry: SystemGeometry) -> ReducedStage2:
    """Remove the stage-1 factors from each stage-2 reflection block.

    All samples sharing one Psi row are stacked and inverted jointly:
    general (multi-antenna) mode uses B_t = sqrt(P) (x_t^T kron I_M)
    (blkdiag(A_U)* kron A_B), the single-antenna mode uses
    B_t = sqrt(P) (x_t^T kron A_B), which leaves d_H columns per user.
    ``Y_B`` gets one row per Psi row.
    """
    Y2 = np.asarray(Y2, complex)
    _ris_phases(plan2)  # layout check
    ks = geometry.ue_antennas
    if all(k == 1 for k in ks):
        mode = "single-antenna-ue"
    elif all(k > 1 for k in ks):
        mode = "general"
    else:
        raise ValueError("mixed single-/multi-antenna users are not supported")
    A_b = np.column_stack([ula_steering(w, geometry.m) for w in stage1.w_bh])
    d_h = A_b.shape[1]
    sqp = np.sqrt(plan2.P)
    if mode == "general":
        A_us = [np.column_stack([ula_steering(w, ks[u]) for w in stage1.w_ug[u]])
                for u in range(geometry.n_users)]
        base = np.kron(block_diag(*A_us).conj(), A_b)
        base3 = base.reshape(geometry.k_total, geometry.m, base.shape[1])
        sizes = [A.shape[1] * d_h for A in A_us]
    else:
        sizes = [d_h] * geometry.n_users
    edges = np.concatenate([[0], np.cumsum(sizes)])
    slices = tuple(slice(int(a), int(b)) for a, b in zip(edges, edges[1:]))

    def b_of(t):
        x_t = plan2.X[:, t]
        if mode == "general":
            return sqp * np.einsum("k,kmd->md", x_t, base3)
        return sqp * np.kron(x_t, A_b)

    group = plan2.K if plan2.protocol == "block-repeat" else 1
    rows = []
    for b in range(plan2.T // group):
        ts = range(b * group, (b + 1) * group)
        B = np.vstack([b_of(t) for t in ts])
        yv = np.concatenate([Y2[:, t] for t in ts])
        rows.append(_pinv_solve(B, yv, "stage-2 mixing matrix"))
    return ReducedStage2(Y_B=np.array(rows), mode=mode, d_h=d_h,
                         user_slices=slices)


class _ToneFitter:
    """Greedy sparse fitting of RIS tones observed through conj(Psi).

    The data model is y = sum_i c_i * Psi_star @ (weights * a_R(w_i)) + n.
    Matching, refinement, and deflation follow orthogonal matching pursuit
    with a local rotation refine per pick and a final cyclic polish.
    """

    def __init__(self, psi_star, ris, grid, weights=None, cycles=150):
        self.psi_star = psi_star
        self.ris = ris
        self.grid = grid
        self.weights = np.ones(ris.n_elements) if weights is None else weights
        self.cycles = cycles
        self._U = self.weights[:, None] * build_dictionary(ris, grid)
        self._mapped = psi_star @ self._U
        self._norms = np.linalg.norm(self._mapped, axis=0)
        self._norms[self._norms == 0] = 1.0

    def column(self, w):
        return self.psi_star @ (self.weights * steering(w, self.ris))

    def fit(self, y, d):
        y = np.asarray(y, complex)
        freqs = []
        resid = y.copy()
        cell = self.grid.cell_width()
        for _ in range(d):
            corr = np.abs(self._mapped.conj().T @ resid) / self._norms
            idx = int(np.argmax(corr))
            freqs.append(self.grid.points[idx].copy())
            cols = np.column_stack([self.column(w) for w in freqs])
            coefs, *_ = np.linalg.lstsq(cols, y, rcond=None)
            resid = y - cols @ coefs
        freqs = refine_paths(y[:, None], self.column, np.array(freqs), cell,
                             axes=2, cycles=self.cycles)
        cols = np.column_stack([self.column(w) for w in freqs])
        coefs, *_ = np.linalg.lstsq(cols, y, rcond=None)
        return freqs, coefs


def stage2_solve(reduced: ReducedStage2, plan2: TrainingPlan,
                 geometry: SystemGeometry, d_g, res: int = 64,
                 cycles: int = 150) -> Stage2Result:
    """Fit the RIS difference frequencies and gains from reduced stage-2 data.

    General mode solves one single-tone problem per column. The
    single-antenna mode solves, per user, one d_G-sparse problem on the
    first column (giving w_rg and gamma_g) followed by d_H - 1 single-tone
    problems with the fitted UE combination as element weights (giving
    w_rh[k] and gamma_h[k] for k >= 2).
    """
    psi_star = _ris_phases(plan2)
    d_g = [d_g] * geometry.n_users if np.isscalar(d_g) else list(d_g)
    grid = FreqGrid.uniform_2d(res, res)
    d_h = reduced.d_h
    if reduced.mode == "general":
        fitter = _ToneFitter(psi_star, geometry.ris, grid, cycles=cycles)
        w_diff, gamma = [], []
        for sl in reduced.user_slices:
            cols = reduced.Y_B[:, sl]
            ws, cs = [], []
            for j in range(cols.shape[1]):
                w, c = fitter.fit(cols[:, j], 1)
                ws.append(w[0])
                cs.append(c[0])
            w_diff.append(np.array(ws).reshape(-1, 2))
            gamma.append(np.array(cs))
        return Stage2Result(mode="general", w_diff=tuple(w_diff),
                            gamma=tuple(gamma))

    plain = _ToneFitter(psi_star, geometry.ris, grid, cycles=cycles)
    w_rg_all, g_g_all, w_rh_all, g_h_all = [], [], [], []
    for u, sl in enumerate(reduced.user_slices):
        Yu = reduced.Y_B[:, sl]
        w_rg, coef = plain.fit(Yu[:, 0], d_g[u])       # coef estimates conj(gamma_g)
        gamma_g = coef.conj()
        A_rg = np.column_stack([steering(w, geometry.ris) for w in w_rg])
        weights = A_rg @ coef
        weighted = _ToneFitter(psi_star, geometry.ris, grid, weights=weights,
                               cycles=cycles)
        w_rh = np.zeros((d_h, 2))
        gamma_h = np.ones(d_h, complex)
        for p in range(1, d_h):
            w, c = weighted.fit(Yu[:, p], 1)
            w_rh[p] = wrap_freq(-w[0])
            gamma_h[p] = c[0]
        w_rg_all.append(w_rg)
        g_g_all.append(gamma_g)
        w_rh_all.append(w_rh)
        g_h_all.append(gamma_h)
    w_diff, gamma = [], []
    for u in range(geometry.n_users):
        diffs = wrap_freq(w_rg_all[u][:, None, :] - w_rh_all[u][None, :, :])
        w_diff.append(diffs.reshape(-1, 2))
        gamma.append(np.kron(g_g_all[u].conj(), g_h_all[u]))
    return Stage2Result(mode="single-antenna-ue", w_diff=tuple(w_diff),
                        gamma=tuple(gamma), w_rg=tuple(w_rg_all),
                        gamma_g=tuple(g_g_all), w_rh=tuple(w_rh_all),
                        gamma_h=tuple(g_h_all))


def _user_basis(w_diff, w_ug, w_bh, geometry: SystemGeometry, user: int):
    """Columns a_R(dw) kron conj(a_U) kron a_B for one user, (l, p)-ordered."""
    d_h = len(w_bh)
    d_g = len(w_diff) // d_h
    k_u = geometry.ue_antennas[user]
    aR = np.column_stack([steering(w, geometry.ris) for w in w_diff])
    aR = aR.reshape(geometry.n, d_g, d_h)
    if k_u == 1:
        aU = np.ones((1, d_g), complex)
    else:
        aU = np.column_stack([ula_steering(w, k_u) for w in w_ug])
    aB = np.column_stack([ula_steering(w, geometry.m) for w in w_bh])
    basis = np.einsum("nlp,kl,mp->nkmlp", aR, aU.conj(), aB)
    return basis.reshape(geometry.n * k_u * geometry.m, d_g * d_h)


def composite_basis(stage1: Stage1Result, stage2: Stage2Result,
                    geometry: SystemGeometry) -> np.ndarray:
    """Block-diagonal steering basis of the user-major composite vector."""
    blocks = [_user_basis(stage2.w_diff[u], stage1.w_ug[u], stage1.w_bh,
                          geometry, u)
              for u in range(geometry.n_users)]
    return block_diag(*blocks)


def reconstruct_composite(stage1: Stage1Result, stage2: Stage2Result,
                          geometry: SystemGeometry) -> np.ndarray:
    """Assemble the user-major composite vector from two-stage estimates.

    The result is invariant to the RIS shift and gain-scale ambiguities
    left unresolved by the estimator.
    """
    blocks = []
    for u in range(geometry.n_users):
        basis = _user_basis(stage2.w_diff[u], stage1.w_ug[u], stage1.w_bh,
                            geometry, u)
        blocks.append(basis @ stage2.gamma[u])
    return np.concatenate(blocks)


def refit_gains(y: np.ndarray, Z, basis: np.ndarray, P: float) -> np.ndarray:
    """Re-fit path gains by least squares with frozen angle estimates.

    ``basis`` is the composite steering basis (see ``composite_basis``);
    the gains solve min_g || y - sqrt(P) Z basis g ||.
    """
    Zd = Z.dense() if isinstance(Z, MeasurementOperator) else np.asarray(Z)
    if Zd.shape[1] != basis.shape[0]:
        raise ValueError("operator and basis disagree on the composite dimension")
    return _pinv_solve(Zd @ basis, y, "gain refit system") / np.sqrt(P)
