"""Linear estimators for the unstructured composite channel.

Covers plain and subblock least squares, LMMSE (with the orthogonal-plan
fast path and a low-rank prior variant), and the two-step protocol that
exploits the RIS-BS channel shared by single-antenna users.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil
from typing import Optional

import numpy as np

from .errors import IdentifiabilityError
from .geometry import SystemGeometry
from .training import MeasurementOperator, TrainingPlan, assemble_measurement

__all__ = [
    "LsResult",
    "LmmseResult",
    "TwoStepResult",
    "ls_estimate",
    "subblock_ls",
    "lmmse_estimate",
    "lowrank_lmmse",
    "two_step_common",
    "two_step_min_training",
]

COND_MAX = 1e12


def _gram_and_rmatvec(Z, y):
    if isinstance(Z, MeasurementOperator):
        return Z.gram(), Z.rmatvec(y)
    Z = np.asarray(Z)
    return Z.conj().T @ Z, Z.conj().T @ y


def _inv_hermitian(G, cond_max=COND_MAX, context="linear system"):
    vals, vecs = np.linalg.eigh((G + G.conj().T) / 2.0)
    lam_max = float(vals[-1])
    if lam_max <= 0 or vals[0] <= lam_max / cond_max:
        raise IdentifiabilityError(
            f"{context} is rank deficient (condition number above {cond_max:g})")
    return (vecs / vals) @ vecs.conj().T


def _pinv_psd(S, rtol=1e-13):
    vals, vecs = np.linalg.eigh((S + S.conj().T) / 2.0)
    cutoff = np.max(np.abs(vals)) * rtol
    inv = np.where(vals > cutoff, 1.0 / np.where(vals > cutoff, vals, 1.0), 0.0)
    return (vecs * inv) @ vecs.conj().T


@dataclass(frozen=True)
class LsResult:
    h_hat: np.ndarray
    covariance: np.ndarray  # (sigma2 / P) (Z^H Z)^{-1}


@dataclass(frozen=True)
class LmmseResult:
    h_hat: np.ndarray
    error_cov: np.ndarray


def ls_estimate(y: np.ndarray, Z, P: float, sigma2: float) -> LsResult:
    """Least-squares estimate (Z^H Z)^{-1} Z^H y / sqrt(P) with its covariance.

    Raises IdentifiabilityError when Z is (numerically) rank deficient,
    e.g. when T < K(N+1) for a standard plan.
    """
    G, zy = _gram_and_rmatvec(Z, y)
    Ginv = _inv_hermitian(G, context="training operator")
    return LsResult(h_hat=Ginv @ zy / np.sqrt(P),
                    covariance=(sigma2 / P) * Ginv)


def subblock_ls(Y_blocks, X: np.ndarray, Psi: np.ndarray, P: float) -> np.ndarray:
    """Composite-channel estimate from per-block data under block-repeat training.

    Each block contributes y_b = vec(Y_b X^H) / (K sqrt(P)); stacking them as
    columns and multiplying by Psi on the right (valid because Psi^H Psi is
    proportional to the identity) yields the MK x (N+1) estimate.
    """
    Y_blocks = np.asarray(Y_blocks)
    k = X.shape[0]
    PP = Psi.conj().T @ Psi
    c = np.real(np.trace(PP)) / PP.shape[0]
    if np.max(np.abs(PP - c * np.eye(PP.shape[0]))) > 1e-9 * max(c, 1.0):
        raise ValueError("subblock reduction requires an orthogonal RIS schedule")
    cols = [(Yb @ X.conj().T).reshape(-1, order="F") / (k * np.sqrt(P))
            for Yb in Y_blocks]
    return np.column_stack(cols) @ Psi / c


def _orthogonality_scale(G) -> Optional[float]:
    dim = G.shape[0]
    c = float(np.real(np.trace(G))) / dim
    if c > 0 and np.max(np.abs(G - c * np.eye(dim))) <= 1e-9 * c:
        return c
    return None


def lmmse_estimate(y: np.ndarray, Z, R_hc: np.ndarray, P: float,
                   sigma2: float) -> LmmseResult:
    """Linear MMSE estimate for a zero-mean prior with covariance R_hc.

    Uses the reduced form R (R + sigma2/(PT) I)^{-1} Z^H y / (sqrt(P) T)
    when Z^H Z = T I, and the general Wiener formula otherwise.
    """
    R = np.asarray(R_hc, complex)
    G, zy = _gram_and_rmatvec(Z, y)
    c = _orthogonality_scale(G)
    if c is not None:
        eps = sigma2 / (P * c)
        Minv = _pinv_psd(R + eps * np.eye(R.shape[0]))
        h = R @ (Minv @ zy) / (np.sqrt(P) * c)
        err = R - R @ Minv @ R
        return LmmseResult(h_hat=h, error_cov=err)
    Zd = Z.dense() if isinstance(Z, MeasurementOperator) else np.asarray(Z)
    S = P * Zd @ R @ Zd.conj().T + sigma2 * np.eye(Zd.shape[0])
    Sinv = _pinv_psd(S)
    W = np.sqrt(P) * R @ Zd.conj().T @ Sinv
    return LmmseResult(h_hat=W @ y,
                       error_cov=R - P * R @ Zd.conj().T @ Sinv @ Zd @ R)


def lowrank_lmmse(y: np.ndarray, Z, U: np.ndarray, P: float,
                  sigma2: float) -> np.ndarray:
    """LMMSE estimate for a rank-r prior R = U U^H via an r x r inverse.

    Algebraically identical to ``lmmse_estimate(y, Z, U @ U^H, ...)`` but
    only ever inverts W + (sigma2/P) I with W = U^H Z^H Z U.
    """
    G, zy = _gram_and_rmatvec(Z, y)
    W = U.conj().T @ G @ U
    core = _pinv_psd(W + (sigma2 / P) * np.eye(W.shape[0]))
    return U @ (core @ (U.conj().T @ zy)) / np.sqrt(P)


def two_step_min_training(m: int, n: int, k: int) -> int:
    """Minimum total training samples for the two-step protocol: step 1 needs
    N+1 samples, step 2 needs ceil((K-1)(M+N)/M)."""
    t2 = ceil((k - 1) * (m + n) / m) if k > 1 else 0
    return (n + 1) + t2


@dataclass(frozen=True)
class TwoStepResult:
    """Output of the common-channel two-step estimator (single-antenna users).

    ``H_tilde`` is the shared RIS-BS channel under the step-1 gauge (user 1's
    RIS channel row fixed to all ones in ``g_tilde``); only composite
    channels assembled from these factors are meaningful.
    """

    h_d: np.ndarray        # (M, K) direct channels
    H_tilde: np.ndarray    # (M, N)
    g_tilde: np.ndarray    # (K, N), row 0 is all ones

    def composite_vec(self) -> np.ndarray:
        """User-major composite vector (direct column included)."""
        blocks = []
        for u in range(self.g_tilde.shape[0]):
            hc_u = np.column_stack([self.h_d[:, u],
                                    self.H_tilde * self.g_tilde[u].conj()])
            blocks.append(hc_u.reshape(-1, order="F"))
        return np.concatenate(blocks)


def two_step_common(y1: np.ndarray, y2: Optional[np.ndarray],
                    plan1: TrainingPlan, plan2: Optional[TrainingPlan],
                    geometry: SystemGeometry) -> TwoStepResult:
    """Two-step composite estimation exploiting the shared RIS-BS channel.

    Step 1: user 1 alone trains the full single-user composite channel
    (T1 >= N+1 samples with the direct column included), which pins the
    gauge H_tilde = H diag(conj(g_1)). Step 2: the remaining users train
    jointly and their direct channels and scaled RIS rows are solved from
    the stacked linear system y_t = sqrt(P) (x_t^T kron [I_M, H_tilde Phi_t]) h.
    """
    if any(k != 1 for k in geometry.ue_antennas):
        raise ValueError("the two-step protocol assumes single-antenna users")
    if not plan1.include_direct:
        raise ValueError("step 1 must include the direct column")
    m, n, k = geometry.m, geometry.n, geometry.n_users
    if plan1.T < n + 1:
        raise IdentifiabilityError(f"step 1 needs T1 >= N+1 = {n + 1}, got {plan1.T}")
    x1 = plan1.X[0]
    if plan1.X.shape[0] > 1 and np.max(np.abs(plan1.X[1:])) > 1e-12:
        raise ValueError("only user 1 may transmit during step 1")
    sub_plan = TrainingPlan(X=x1[None, :], Psi=plan1.Psi, protocol=plan1.protocol,
                            include_direct=True, P=plan1.P, sigma2=plan1.sigma2)
    sub_geom = SystemGeometry(bs=geometry.bs, ris=geometry.ris, ue_antennas=(1,))
    op1 = assemble_measurement(sub_plan, sub_geom)
    h1 = ls_estimate(y1, op1, plan1.P, plan1.sigma2).h_hat
    Hc1 = h1.reshape(n + 1, m).T
    h_d = np.zeros((m, k), complex)
    h_d[:, 0] = Hc1[:, 0]
    H_tilde = Hc1[:, 1:]
    g_tilde = np.zeros((k, n), complex)
    g_tilde[0] = 1.0

    if k > 1:
        if plan2 is None or y2 is None:
            raise ValueError("step 2 data required for more than one user")
        t2_min = ceil((k - 1) * (m + n) / m)
        if plan2.T < t2_min:
            raise IdentifiabilityError(
                f"step 2 needs T2 >= {t2_min}, got {plan2.T}")
        phi = plan2.sample_phases()
        if plan2.include_direct:
            phi = phi[:, 1:]
        if np.max(np.abs(plan2.X[0])) > 1e-12:
            raise ValueError("user 1 must stay silent during step 2")
        Zt = np.zeros((m * plan2.T, (k - 1) * (m + n)), complex)
        for t in range(plan2.T):
            blk = np.hstack([np.eye(m), H_tilde * phi[t]])
            for u in range(1, k):
                Zt[t * m:(t + 1) * m, (u - 1) * (m + n):u * (m + n)] = \
                    plan2.X[u, t] * blk
        sol = ls_estimate(y2, Zt, plan2.P, plan2.sigma2).h_hat
        for u in range(1, k):
            piece = sol[(u - 1) * (m + n):u * (m + n)]
            h_d[:, u] = piece[:m]
            g_tilde[u] = piece[m:].conj()
    return TwoStepResult(h_d=h_d, H_tilde=H_tilde, g_tilde=g_tilde)
