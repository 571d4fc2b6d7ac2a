"""Direction-of-arrival primitives: beamforming spectra, DML objective, refinement.

These operate on the classical snapshot model Y = A(w) S + N for an
arbitrary manifold, and are reused by the two-stage composite estimator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .arrays import ArraySpec, FreqGrid, build_dictionary, steering, wrap_freq
from .errors import IdentifiabilityError, PeakCountError

__all__ = [
    "AoaProblem",
    "sample_covariance",
    "beamform_peaks",
    "greedy_peaks",
    "dml_objective",
    "refine_rotation",
    "refine_paths",
]


def sample_covariance(Y: np.ndarray) -> np.ndarray:
    """Sample covariance Y Y^H / n of an (M, n) snapshot matrix."""
    Y = np.atleast_2d(np.asarray(Y))
    return Y @ Y.conj().T / Y.shape[1]


@dataclass(frozen=True)
class AoaProblem:
    """Snapshot data, a steering manifold, and a model order.

    ``manifold`` is an ArraySpec or a callable mapping an (G, 2) array of
    frequencies to an (elements, G) dictionary.
    """

    data: np.ndarray
    manifold: Union[ArraySpec, Callable]
    d: int

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, complex))
        object.__setattr__(self, "data", data)
        if self.d < 1:
            raise ValueError("model order must be >= 1")
        if isinstance(self.manifold, ArraySpec) and self.manifold.n_elements <= self.d:
            raise ValueError("need more array elements than paths")


def _local_maxima_circular(vals: np.ndarray) -> np.ndarray:
    """Boolean mask of strict local maxima on a (r1, r2) torus lattice."""
    mask = np.ones(vals.shape, dtype=bool)
    for axis in range(vals.ndim):
        if vals.shape[axis] < 2:
            continue
        fwd = np.roll(vals, -1, axis=axis)
        bwd = np.roll(vals, 1, axis=axis)
        mask &= (vals > fwd) & (vals > bwd)
    return mask


def beamform_peaks(problem: AoaProblem, grid: FreqGrid):
    """Locations of the d largest strict local maxima of a^H(w) R a(w).

    Expects a full-period uniform grid (the spectrum is treated as periodic).
    Peaks are returned in descending spectrum order as an (d, 2) array; ties
    break toward the lower lexicographic frequency. Raises PeakCountError
    when fewer than d local maxima exist.
    """
    if not grid.resolution:
        raise ValueError("beamform_peaks needs a uniform grid with resolution metadata")
    D = build_dictionary(problem.manifold, grid)
    R = sample_covariance(problem.data)
    spectrum = np.real(np.einsum("ig,ij,jg->g", D.conj(), R, D))
    shape = grid.resolution if grid.is_2d else (grid.resolution[0],)
    mask = _local_maxima_circular(spectrum.reshape(shape)).reshape(-1)
    idx = np.flatnonzero(mask)
    if len(idx) < problem.d:
        raise PeakCountError(
            f"found {len(idx)} spectrum peaks, need {problem.d}")
    pts = grid.points[idx]
    order = np.lexsort((pts[:, 1], pts[:, 0], -spectrum[idx]))
    return pts[order[: problem.d]].copy()


def greedy_peaks(problem: AoaProblem, grid: FreqGrid) -> np.ndarray:
    """Matching-pursuit grid initializer: pick the strongest matched-filter
    response, deflate by least squares, repeat d times.

    More robust than plain spectrum peaks when paths fall within a
    beamwidth of each other; returns an (d, 2) array of grid frequencies.
    """
    D = build_dictionary(problem.manifold, grid)
    norms = np.linalg.norm(D, axis=0)
    norms[norms == 0] = 1.0
    Y = problem.data
    resid = Y.copy()
    picked = []
    for _ in range(problem.d):
        corr = np.linalg.norm(D.conj().T @ resid, axis=1) / norms
        picked.append(int(np.argmax(corr)))
        A = D[:, picked]
        coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
        resid = Y - A @ coef
    return grid.points[picked].copy()


def dml_objective(y_or_Y: np.ndarray, A: np.ndarray) -> float:
    """Residual energy after projecting the data off the columns of A.

    For a data vector y this is y^H P_A_perp y; for a snapshot matrix Y it
    is trace(P_A_perp R_Y) with R_Y the sample covariance. The value is zero
    exactly when the data lies in span(A). Rank-deficient manifolds (the
    pathological repeated-difference cases) are rejected.
    """
    A = np.atleast_2d(np.asarray(A, complex))
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] == 0 or s[-1] <= s[0] / 1e12:
        raise IdentifiabilityError("steering matrix is rank deficient")
    Q, _ = np.linalg.qr(A)
    X = np.asarray(y_or_Y, complex)
    if X.ndim == 1:
        return float(np.linalg.norm(X) ** 2 - np.linalg.norm(Q.conj().T @ X) ** 2)
    n = X.shape[1]
    return float((np.linalg.norm(X) ** 2 - np.linalg.norm(Q.conj().T @ X) ** 2) / n)


def _golden_max(f, lo: float, hi: float, iters: int = 40):
    """Golden-section maximization of a scalar function on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = (a + b) / 2.0
    return x, f(x)


def _correlation_energy(Y: np.ndarray, v: np.ndarray) -> float:
    return float(np.linalg.norm(Y.conj().T @ v))


def refine_rotation(y_data: np.ndarray, coarse_column: np.ndarray,
                    manifold: ArraySpec, cell, iters: int = 40) -> np.ndarray:
    """Small frequency rotation of a dictionary column maximizing data correlation.

    Searches offsets within +-1 grid cell (golden section per frequency
    axis) for the rotation a(offset) that maximizes
    ``|| Y^H (coarse_column * a(offset)) ||``. Returns the (2,) offset; the
    correlation at the returned offset is never below the zero-offset value.
    """
    Y = np.atleast_2d(np.asarray(y_data, complex))
    if Y.shape[0] != len(coarse_column):
        Y = Y.T
    cell = np.broadcast_to(np.asarray(cell, float).reshape(-1), (2,)).copy()
    axes = 2 if manifold.kind == "URA" else 1
    offset = np.zeros(2)
    base = _correlation_energy(Y, coarse_column)
    for _ in range(2):  # alternate axes twice; exact for separable objectives
        for ax in range(axes):
            if cell[ax] == 0:
                continue

            def obj(x, ax=ax):
                trial = offset.copy()
                trial[ax] = x
                return _correlation_energy(
                    Y, coarse_column * steering(trial, manifold))

            x, fx = _golden_max(obj, offset[ax] - cell[ax],
                                offset[ax] + cell[ax], iters)
            if fx > obj(offset[ax]):
                offset[ax] = x
    rotated = coarse_column * steering(offset, manifold)
    if _correlation_energy(Y, rotated) < base:
        return np.zeros(2)
    return offset


def refine_paths(Y: np.ndarray, steer_fn: Callable, freqs: np.ndarray, cell,
                 axes: int = 1, cycles: int = 60, iters: int = 40) -> np.ndarray:
    """Cyclic single-path refinement of a set of frequency estimates.

    Repeatedly re-fits all path amplitudes jointly, subtracts every path but
    one, and re-maximizes that path's matched-filter correlation on the
    residual (golden section per axis within the current cell). On noiseless
    data with the exact model order this converges to the true frequencies.
    """
    Y = np.atleast_2d(np.asarray(Y, complex))
    freqs = np.asarray(freqs, float).reshape(-1, 2).copy()
    d = len(freqs)
    cell = np.broadcast_to(np.asarray(cell, float).reshape(-1), (2,)).copy()
    for _ in range(cycles):
        moved = 0.0
        A = np.column_stack([steer_fn(w) for w in freqs])
        S, *_ = np.linalg.lstsq(A, Y, rcond=None)
        for i in range(d):
            resid = Y - np.delete(A, i, axis=1) @ np.delete(S, i, axis=0)
            w_old = freqs[i].copy()
            for ax in range(axes):

                def obj(x, ax=ax, i=i):
                    w = freqs[i].copy()
                    w[ax] = x
                    return _correlation_energy(resid, steer_fn(w))

                x, fx = _golden_max(obj, freqs[i, ax] - cell[ax],
                                    freqs[i, ax] + cell[ax], iters)
                if fx > obj(freqs[i, ax]):
                    freqs[i, ax] = x
            A[:, i] = steer_fn(freqs[i])
            moved = max(moved, float(np.max(np.abs(freqs[i] - w_old))))
        if moved < 1e-12:
            break
    return wrap_freq(freqs)
