"""Channel synthesis: geometric and correlated-Rayleigh models, composite channels.

The composite channel of user u is the M*K_u x (N+1) matrix
``[f_u, conj(G_u) kr H]`` (kr = column-wise Khatri-Rao) mapping the
augmented reflection vector [1; phi] to the vectorized effective channel.
Stacking all users' rows gives the full MK x (N+1) composite matrix; the
canonical composite *vector* used by the estimators and bounds is
user-major: ``[vec(Hc_1); ...; vec(Hc_U)]``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .arrays import steering, ula_steering, wrap_freq
from .errors import IdentifiabilityError
from .geometry import SystemGeometry

__all__ = [
    "GeometricParams",
    "ChannelSet",
    "CorrelationModel",
    "normalize_identifiability",
    "synth_geometric",
    "composite_channel",
    "composite_vector",
    "synth_unstructured",
    "composite_covariance",
    "group_channel",
    "draw_geometric_params",
]


def _as_freq2(w, d):
    w = np.asarray(w, dtype=float).reshape(d, 2)
    return wrap_freq(w)


@dataclass(frozen=True)
class GeometricParams:
    """Path parameters of all channels.

    RIS-side frequencies are (d, 2) arrays of 2D spatial frequencies;
    BS/UE-side frequencies are 1D arrays. Per-user quantities are tuples
    indexed by user. Direct-path blocks (``w_bf``/``w_uf``/``gamma_f``) may
    be empty arrays when no direct channel is modeled.
    """

    w_bh: np.ndarray          # (d_H,) BS AoAs of the RIS-BS channel
    w_rh: np.ndarray          # (d_H, 2) RIS AoDs
    gamma_h: np.ndarray       # (d_H,) complex gains
    w_rg: tuple               # per user: (d_G, 2) RIS AoAs
    w_ug: tuple               # per user: (d_G,) UE AoDs
    gamma_g: tuple            # per user: (d_G,) complex gains
    w_bf: tuple = ()          # per user: (d_F,) BS AoAs of the direct channel
    w_uf: tuple = ()          # per user: (d_F,) UE AoDs of the direct channel
    gamma_f: tuple = ()       # per user: (d_F,) complex gains

    def __post_init__(self):
        d_h = len(np.atleast_1d(self.gamma_h))
        object.__setattr__(self, "w_bh", wrap_freq(np.asarray(self.w_bh, float).reshape(d_h)))
        object.__setattr__(self, "w_rh", _as_freq2(self.w_rh, d_h))
        object.__setattr__(self, "gamma_h", np.asarray(self.gamma_h, complex).reshape(d_h))
        n_users = len(self.gamma_g)
        w_rg, w_ug, g_g = [], [], []
        for u in range(n_users):
            d = len(np.atleast_1d(self.gamma_g[u]))
            w_rg.append(_as_freq2(self.w_rg[u], d))
            w_ug.append(wrap_freq(np.asarray(self.w_ug[u], float).reshape(d)))
            g_g.append(np.asarray(self.gamma_g[u], complex).reshape(d))
        object.__setattr__(self, "w_rg", tuple(w_rg))
        object.__setattr__(self, "w_ug", tuple(w_ug))
        object.__setattr__(self, "gamma_g", tuple(g_g))
        if len(self.gamma_f) == 0:
            empty_f = tuple(np.zeros(0) for _ in range(n_users))
            object.__setattr__(self, "w_bf", empty_f)
            object.__setattr__(self, "w_uf", empty_f)
            object.__setattr__(self, "gamma_f", tuple(np.zeros(0, complex) for _ in range(n_users)))
        else:
            w_bf, w_uf, g_f = [], [], []
            for u in range(n_users):
                d = len(np.atleast_1d(self.gamma_f[u]))
                w_bf.append(wrap_freq(np.asarray(self.w_bf[u], float).reshape(d)))
                w_uf.append(wrap_freq(np.asarray(self.w_uf[u], float).reshape(d)))
                g_f.append(np.asarray(self.gamma_f[u], complex).reshape(d))
            object.__setattr__(self, "w_bf", tuple(w_bf))
            object.__setattr__(self, "w_uf", tuple(w_uf))
            object.__setattr__(self, "gamma_f", tuple(g_f))

    @property
    def d_h(self) -> int:
        return len(self.gamma_h)

    @property
    def d_g(self) -> tuple:
        return tuple(len(g) for g in self.gamma_g)

    @property
    def d_f(self) -> tuple:
        return tuple(len(g) for g in self.gamma_f)

    @property
    def n_users(self) -> int:
        return len(self.gamma_g)

    @property
    def has_direct(self) -> bool:
        return any(d > 0 for d in self.d_f)

    def is_normalized(self, tol=1e-12) -> bool:
        return (np.max(np.abs(self.w_rh[0])) <= tol
                and abs(self.gamma_h[0] - 1.0) <= tol)


def normalize_identifiability(params: GeometricParams) -> GeometricParams:
    """Remove the RIS shift and gain-scale ambiguities.

    Shifts every RIS AoA/AoD by -w_rh[0] and rescales the gains so that
    w_rh[0] = (0, 0) and gamma_h[0] = 1. The composite channel is invariant
    under this transformation.
    """
    alpha = params.gamma_h[0]
    if alpha == 0:
        raise IdentifiabilityError("leading RIS-BS path gain is zero")
    shift = params.w_rh[0].copy()
    return replace(
        params,
        w_rh=wrap_freq(params.w_rh - shift),
        w_rg=tuple(wrap_freq(w - shift) for w in params.w_rg),
        gamma_h=params.gamma_h / alpha,
        gamma_g=tuple(g * np.conj(alpha) for g in params.gamma_g),
    )


@dataclass(frozen=True)
class ChannelSet:
    """Realized channel matrices: RIS-BS H, per-user UE-RIS G_u, optional direct Hd_u."""

    H: np.ndarray                      # (M, N)
    G: tuple                           # per user: (K_u, N)
    Hd: Optional[tuple] = None         # per user: (M, K_u), or None

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def ue_antennas(self) -> tuple:
        return tuple(g.shape[0] for g in self.G)

    def composite(self, include_direct: Optional[bool] = None) -> np.ndarray:
        return composite_channel(self, include_direct)

    def composite_vec(self, include_direct: Optional[bool] = None) -> np.ndarray:
        return composite_vector(self, include_direct)


def synth_geometric(params: GeometricParams, geometry: SystemGeometry) -> ChannelSet:
    """Assemble channel matrices from path parameters.

    H = A_B diag(gamma_h) A_R^H, G_u = A_U diag(gamma_g) A_R^H and
    Hd_u = A_B diag(gamma_f) A_U^H.
    """
    if params.n_users != geometry.n_users:
        raise ValueError("params and geometry disagree on the number of users")
    A_b = np.column_stack([steering(w, geometry.bs) for w in params.w_bh])
    A_rh = np.column_stack([steering(w, geometry.ris) for w in params.w_rh])
    H = (A_b * params.gamma_h) @ A_rh.conj().T
    G, Hd = [], []
    for u in range(geometry.n_users):
        ue = geometry.ue_spec(u)
        A_u = np.column_stack([steering(w, ue) for w in params.w_ug[u]])
        A_rg = np.column_stack([steering(w, geometry.ris) for w in params.w_rg[u]])
        G.append((A_u * params.gamma_g[u]) @ A_rg.conj().T)
        if params.d_f[u] > 0:
            A_bf = np.column_stack([steering(w, geometry.bs) for w in params.w_bf[u]])
            A_uf = np.column_stack([steering(w, ue) for w in params.w_uf[u]])
            Hd.append((A_bf * params.gamma_f[u]) @ A_uf.conj().T)
        else:
            Hd.append(np.zeros((geometry.m, geometry.ue_antennas[u]), complex))
    return ChannelSet(H=H, G=tuple(G), Hd=tuple(Hd) if params.has_direct else None)


def _khatri_rao(A, B):
    # column-wise Kronecker product
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def composite_channel(channels: ChannelSet,
                      include_direct: Optional[bool] = None) -> np.ndarray:
    """Stacked MK x (N+1) (or MK x N) composite channel matrix.

    Column 0 is the vec of the stacked direct channels when present; the
    remaining columns are conj(G) kr H with G the user-stacked UE-RIS
    channel. Rows are grouped by user.
    """
    if include_direct is None:
        include_direct = channels.Hd is not None
    G = np.vstack(channels.G)
    # column n of the RIS part is conj(g_n) kron h_n
    ris_part = _khatri_rao(G.conj(), channels.H)
    if not include_direct:
        return ris_part
    if channels.Hd is not None:
        h_d = np.concatenate([hd.reshape(-1, order="F") for hd in channels.Hd])
    else:
        h_d = np.zeros(ris_part.shape[0], complex)
    return np.column_stack([h_d, ris_part])


def composite_vector(channels: ChannelSet,
                     include_direct: Optional[bool] = None) -> np.ndarray:
    """User-major composite vector [vec(Hc_1); ...; vec(Hc_U)]."""
    if include_direct is None:
        include_direct = channels.Hd is not None
    ks = channels.ue_antennas
    edges = np.concatenate([[0], np.cumsum(ks)])
    Hc = composite_channel(channels, include_direct)
    blocks = []
    for u in range(len(ks)):
        rows = Hc[channels.m * edges[u]:channels.m * edges[u + 1], :]
        blocks.append(rows.reshape(-1, order="F"))
    return np.concatenate(blocks)


@dataclass(frozen=True)
class CorrelationModel:
    """Second-order statistics of the constituent channels.

    Each matrix is the Hermitian PSD correlation of one side of a link
    (B = BS, R = RIS, U = UE); entry variances are absorbed into the
    matrices, e.g. R_hb = var_h * I for uncorrelated fading.
    """

    R_hb: np.ndarray
    R_hr: np.ndarray
    R_gu: np.ndarray
    R_gr: np.ndarray
    R_hdb: Optional[np.ndarray] = None
    R_hdu: Optional[np.ndarray] = None

    @property
    def has_direct(self) -> bool:
        return self.R_hdb is not None and self.R_hdu is not None

    @staticmethod
    def uncorrelated(geometry: SystemGeometry, var_h=1.0, var_g=1.0,
                     var_hd: Optional[float] = None) -> "CorrelationModel":
        m, n, k = geometry.m, geometry.n, geometry.k_total
        return CorrelationModel(
            R_hb=var_h * np.eye(m), R_hr=np.eye(n),
            R_gu=var_g * np.eye(k), R_gr=np.eye(n),
            R_hdb=None if var_hd is None else var_hd * np.eye(m),
            R_hdu=None if var_hd is None else np.eye(k),
        )


def _matrix_sqrt(R, tol=1e-10):
    R = np.asarray(R)
    if np.max(np.abs(R - R.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(R))):
        raise ValueError("correlation matrix is not Hermitian")
    vals, vecs = np.linalg.eigh(R)
    if np.min(vals) < -tol * max(1.0, np.max(np.abs(vals))):
        raise ValueError("correlation matrix is indefinite")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def synth_unstructured(corr: CorrelationModel, geometry: SystemGeometry,
                       rng: np.random.Generator) -> ChannelSet:
    """Draw correlated Rayleigh channels by two-sided coloring of iid CN(0,1) cores."""
    m, n, k = geometry.m, geometry.n, geometry.k_total

    def cn(rows, cols):
        return (rng.standard_normal((rows, cols))
                + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)

    S_hb, S_hr = _matrix_sqrt(corr.R_hb), _matrix_sqrt(corr.R_hr)
    S_gu, S_gr = _matrix_sqrt(corr.R_gu), _matrix_sqrt(corr.R_gr)
    H = S_hb @ cn(m, n) @ S_hr.conj().T
    G_full = S_gu @ cn(k, n) @ S_gr.conj().T
    slices = geometry.user_row_slices()
    G = tuple(G_full[s, :] for s in slices)
    Hd = None
    if corr.has_direct:
        S_db, S_du = _matrix_sqrt(corr.R_hdb), _matrix_sqrt(corr.R_hdu)
        Hd_full = S_db @ cn(m, k) @ S_du.conj().T
        Hd = tuple(Hd_full[:, s] for s in slices)
    return ChannelSet(H=H, G=G, Hd=Hd)


def composite_covariance(corr: CorrelationModel,
                         geometry: Optional[SystemGeometry] = None) -> np.ndarray:
    """Covariance of the composite channel vector.

    Block-diagonal: the direct block is R_hdu^T kron R_hdb, the RIS block is
    (R_gr had R_hr^T) kron R_gu^T kron R_hb. Without a geometry argument the
    ordering is RIS-element-major over the stacked K antennas (the single
    user layout); passing a multi-user geometry permutes it to the canonical
    user-major ordering.
    """
    R_ris = np.kron(np.kron(corr.R_gr * corr.R_hr.T, corr.R_gu.T), corr.R_hb)
    if corr.has_direct:
        R_d = np.kron(corr.R_hdu.T, corr.R_hdb)
        dim = R_d.shape[0] + R_ris.shape[0]
        R = np.zeros((dim, dim), complex)
        R[: R_d.shape[0], : R_d.shape[0]] = R_d
        R[R_d.shape[0]:, R_d.shape[0]:] = R_ris
    else:
        R = R_ris
    if geometry is not None and geometry.n_users > 1:
        perm = _user_major_permutation(geometry, corr.has_direct)
        R = R[np.ix_(perm, perm)]
    return R


def _user_major_permutation(geometry: SystemGeometry, include_direct: bool):
    """Indices mapping the RIS-major stacked vector to the user-major one."""
    m, n, k = geometry.m, geometry.n, geometry.k_total
    cols = n + 1 if include_direct else n
    idx = np.arange(m * k * cols).reshape(cols, k, m)  # (n, k, m), n-major
    perm = []
    for s in geometry.user_row_slices():
        perm.append(idx[:, s, :].reshape(-1))
    return np.concatenate(perm)


def group_channel(Hc: np.ndarray, group_size: int) -> np.ndarray:
    """Collapse RIS columns into groups driven by a common phase.

    ``Hc`` must exclude the direct column; column g of the result is the
    unit-coefficient sum of the J columns in group g, so that
    ``Hc @ kron(phi', ones(J)) == group_channel(Hc, J) @ phi'``.
    """
    Hc = np.asarray(Hc)
    n = Hc.shape[1]
    if group_size < 1 or n % group_size:
        raise ValueError(f"N = {n} is not divisible by group size {group_size}")
    return Hc.reshape(Hc.shape[0], n // group_size, group_size).sum(axis=2)


def draw_geometric_params(geometry: SystemGeometry, d_h: int, d_g, d_f,
                          rng: np.random.Generator,
                          gain_variance: str = "unit") -> GeometricParams:
    """Random path parameters: azimuth U[-90, 90], elevation U[0, 90] degrees,
    complex Gaussian gains with variance 1 ("unit") or 1/d ("one_over_d").
    The result is identifiability-normalized.
    """
    from .arrays import freq_from_angles

    d_g = [d_g] * geometry.n_users if np.isscalar(d_g) else list(d_g)
    d_f = [d_f] * geometry.n_users if np.isscalar(d_f) else list(d_f)

    def gains(d):
        if d == 0:
            return np.zeros(0, complex)
        var = 1.0 if gain_variance == "unit" else 1.0 / d
        return np.sqrt(var / 2.0) * (rng.standard_normal(d) + 1j * rng.standard_normal(d))

    def ula_freqs(spec, d):
        az = rng.uniform(-90.0, 90.0, size=d)
        return np.array([freq_from_angles(a, 0.0, spec).w1 for a in az])

    def ura_freqs(d):
        az = rng.uniform(-90.0, 90.0, size=d)
        el = rng.uniform(0.0, 90.0, size=d)
        return np.array([tuple(freq_from_angles(a, e, geometry.ris))
                         for a, e in zip(az, el)]).reshape(d, 2)

    params = GeometricParams(
        w_bh=ula_freqs(geometry.bs, d_h),
        w_rh=ura_freqs(d_h),
        gamma_h=gains(d_h),
        w_rg=tuple(ura_freqs(d) for d in d_g),
        w_ug=tuple(ula_freqs(geometry.ue_spec(u), d) for u, d in enumerate(d_g)),
        gamma_g=tuple(gains(d) for d in d_g),
        w_bf=tuple(ula_freqs(geometry.bs, d) for d in d_f),
        w_uf=tuple(ula_freqs(geometry.ue_spec(u), d) for u, d in enumerate(d_f)),
        gamma_f=tuple(gains(d) for d in d_f),
    )
    return normalize_identifiability(params)
