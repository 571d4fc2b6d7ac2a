"""Shared test utilities: oracles and scenario draws."""

import numpy as np

from risce import FreqGrid, GeometricParams, SystemGeometry, wrap_freq


def rand_psd(n, rng, jitter=0.0):
    """Random Hermitian PSD matrix with unit-scale eigenvalues."""
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T / n + jitter * np.eye(n)


def circ_dist(a, b):
    return np.abs(wrap_freq(np.asarray(a, float) - np.asarray(b, float)))


def draw_sep_1d(rng, grid, count, min_sep):
    """On-grid 1D frequencies with pairwise circular separation >= min_sep."""
    pts = []
    while len(pts) < count:
        c = grid.points[rng.integers(len(grid)), 0]
        if all(circ_dist(c, p) >= min_sep for p in pts):
            pts.append(c)
    return np.array(pts)


def draw_sep_2d(rng, grid, count, min_sep, avoid=()):
    """On-grid 2D frequencies separated from each other and from ``avoid``."""
    pts = [np.asarray(a, float) for a in avoid]
    out = []
    while len(out) < count:
        c = grid.points[rng.integers(len(grid))]
        if all(np.linalg.norm(circ_dist(c, p)) >= min_sep for p in pts):
            pts.append(c)
            out.append(c)
    return np.array(out)


def on_grid_two_user_scenario(seed, geometry=None, res_1d=256, res_2d=64):
    """Well-separated on-grid params for two single-antenna users,
    d_H = 2, d_G = 2, already normalized."""
    if geometry is None:
        geometry = SystemGeometry.create(8, 4, 4, ue_antennas=(1, 1))
    rng = np.random.default_rng(seed)
    grid1 = FreqGrid.uniform_1d(res_1d)
    grid2 = FreqGrid.uniform_2d(res_2d, res_2d)
    bw_bs = 2 * np.pi / geometry.m
    bw_ris = 2 * np.pi / min(geometry.ris.count_x, geometry.ris.count_y)
    w_bh = draw_sep_1d(rng, grid1, 2, 2 * bw_bs)
    w_rh_1 = draw_sep_2d(rng, grid2, 1, 0.75 * bw_ris, avoid=[np.zeros(2)])
    gains = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    return GeometricParams(
        w_bh=w_bh,
        w_rh=np.vstack([[0.0, 0.0], w_rh_1]),
        gamma_h=np.array([1.0, gains[0]]),
        w_rg=tuple(draw_sep_2d(rng, grid2, 2, 0.75 * bw_ris) for _ in range(2)),
        w_ug=(np.zeros(2), np.zeros(2)),
        gamma_g=(gains[1:3], gains[3:5]),
    ), geometry


def fd_columns(fn, x0, step=1e-6):
    """Central-difference Jacobian columns of a vector-valued fn."""
    cols = []
    for i in range(len(x0)):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += step / 2
        xm[i] -= step / 2
        cols.append((fn(xp) - fn(xm)) / step)
    return np.column_stack(cols)
