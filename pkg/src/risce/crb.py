"""Fisher information and Cramer-Rao bounds for both channel model classes.

The unstructured bound is the closed form (sigma2 / 2P) (Zb^T Zb)^{-1} with
Zb the real block form of the training operator. The structured bound is
computed for the identifiable path parameterization eta (frequencies plus
real/imaginary gain parts, with w_rh[0] and gamma_h[0] pinned) via analytic
Jacobians of the noiseless received mean, and mapped to the composite
channel domain through the channel Jacobian.

All real stacking follows the [Re; Im] convention, with each complex gain
contributing a contiguous (Re, Im) parameter pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channels import GeometricParams, composite_vector, synth_geometric
from .errors import IdentifiabilityError
from .geometry import SystemGeometry
from .training import MeasurementOperator, TrainingPlan, assemble_measurement

__all__ = [
    "EtaLayout",
    "CrbReport",
    "pack_eta",
    "unpack_eta",
    "real_stack",
    "real_block",
    "noiseless_mean",
    "channel_jacobian",
    "mean_jacobian",
    "fim_eta",
    "crb_unstructured",
    "crb_structured",
]

COND_MAX = 1e12


def real_stack(v: np.ndarray) -> np.ndarray:
    """[Re(v); Im(v)] for a complex vector or matrix."""
    return np.concatenate([np.real(v), np.imag(v)], axis=0)


def real_block(A: np.ndarray) -> np.ndarray:
    """Real 2x2-block representation [[Re, -Im], [Im, Re]] of a complex matrix."""
    return np.block([[np.real(A), -np.imag(A)], [np.imag(A), np.real(A)]])


@dataclass(frozen=True)
class EtaLayout:
    """Ordered segments of the real parameter vector eta.

    Global segments (w_bh, gamma_h, w_rh) come first, then per user:
    w_rg, gamma_g, w_ug, w_bf, gamma_f, w_uf. UE-side frequency segments
    are dropped for single-antenna users (their steering is constant, so
    the parameters would be unidentifiable). With ``include_ambiguous``
    the normalization entries (w_rh[0], gamma_h[0]) are kept as free
    parameters; the resulting FIM is singular by construction.
    """

    d_h: int
    d_g: tuple
    d_f: tuple
    ue_antennas: tuple
    include_ambiguous: bool = False
    segments: tuple = field(init=False)

    def __post_init__(self):
        free_h = self.d_h if self.include_ambiguous else self.d_h - 1
        segs = [("w_bh", None, self.d_h),
                ("gamma_h", None, 2 * free_h),
                ("w_rh", None, 2 * free_h)]
        for u, (dg, df) in enumerate(zip(self.d_g, self.d_f)):
            multi = self.ue_antennas[u] > 1
            segs.append(("w_rg", u, 2 * dg))
            segs.append(("gamma_g", u, 2 * dg))
            segs.append(("w_ug", u, dg if multi else 0))
            segs.append(("w_bf", u, df))
            segs.append(("gamma_f", u, 2 * df))
            segs.append(("w_uf", u, df if multi else 0))
        object.__setattr__(self, "segments", tuple(segs))

    @property
    def size(self) -> int:
        return sum(s[2] for s in self.segments)

    def slices(self):
        out, off = {}, 0
        for name, user, length in self.segments:
            out[(name, user)] = slice(off, off + length)
            off += length
        return out

    def param_names(self):
        names = []
        for name, user, length in self.segments:
            tag = name if user is None else f"{name}[{user}]"
            names.extend(f"{tag}:{i}" for i in range(length))
        return names

    @staticmethod
    def from_params(params: GeometricParams, geometry: SystemGeometry,
                    include_ambiguous: bool = False) -> "EtaLayout":
        return EtaLayout(d_h=params.d_h, d_g=params.d_g, d_f=params.d_f,
                         ue_antennas=geometry.ue_antennas,
                         include_ambiguous=include_ambiguous)


def _seg_len(sl, name, user) -> int:
    s = sl[(name, user)]
    return s.stop - s.start


def _interleave_complex(g: np.ndarray) -> np.ndarray:
    out = np.empty(2 * len(g))
    out[0::2] = np.real(g)
    out[1::2] = np.imag(g)
    return out


def _deinterleave_complex(v: np.ndarray) -> np.ndarray:
    return v[0::2] + 1j * v[1::2]


def pack_eta(params: GeometricParams, geometry: SystemGeometry,
             include_ambiguous: bool = False):
    """Pack path parameters into the real eta vector; returns (eta, layout).

    Unless ``include_ambiguous`` is set, the params must be normalized
    (w_rh[0] = 0, gamma_h[0] = 1).
    """
    if not include_ambiguous and not params.is_normalized(tol=1e-9):
        raise ValueError("params must be identifiability-normalized before packing")
    layout = EtaLayout.from_params(params, geometry, include_ambiguous)
    sl = layout.slices()
    eta = np.zeros(layout.size)
    start_h = 0 if include_ambiguous else 1
    eta[sl[("w_bh", None)]] = params.w_bh
    eta[sl[("gamma_h", None)]] = _interleave_complex(params.gamma_h[start_h:])
    eta[sl[("w_rh", None)]] = params.w_rh[start_h:].reshape(-1)
    for u in range(params.n_users):
        eta[sl[("w_rg", u)]] = params.w_rg[u].reshape(-1)
        eta[sl[("gamma_g", u)]] = _interleave_complex(params.gamma_g[u])
        if _seg_len(sl, "w_ug", u):
            eta[sl[("w_ug", u)]] = params.w_ug[u]
        if params.d_f[u] > 0:
            eta[sl[("w_bf", u)]] = params.w_bf[u]
            eta[sl[("gamma_f", u)]] = _interleave_complex(params.gamma_f[u])
            if _seg_len(sl, "w_uf", u):
                eta[sl[("w_uf", u)]] = params.w_uf[u]
    return eta, layout


def unpack_eta(eta: np.ndarray, layout: EtaLayout) -> GeometricParams:
    """Inverse of pack_eta for a given layout."""
    eta = np.asarray(eta, float)
    if eta.shape != (layout.size,):
        raise ValueError(f"eta must have length {layout.size}")
    sl = layout.slices()
    if layout.include_ambiguous:
        gamma_h = _deinterleave_complex(eta[sl[("gamma_h", None)]])
        w_rh = eta[sl[("w_rh", None)]].reshape(-1, 2)
    else:
        gamma_h = np.concatenate([[1.0 + 0j],
                                  _deinterleave_complex(eta[sl[("gamma_h", None)]])])
        w_rh = np.vstack([np.zeros((1, 2)),
                          eta[sl[("w_rh", None)]].reshape(-1, 2)])
    n_users = len(layout.d_g)
    w_rg, w_ug, g_g, w_bf, w_uf, g_f = [], [], [], [], [], []
    for u in range(n_users):
        w_rg.append(eta[sl[("w_rg", u)]].reshape(-1, 2))
        g_g.append(_deinterleave_complex(eta[sl[("gamma_g", u)]]))
        w_ug.append(eta[sl[("w_ug", u)]] if _seg_len(sl, "w_ug", u)
                    else np.zeros(layout.d_g[u]))
        if layout.d_f[u] > 0:
            w_bf.append(eta[sl[("w_bf", u)]])
            g_f.append(_deinterleave_complex(eta[sl[("gamma_f", u)]]))
            w_uf.append(eta[sl[("w_uf", u)]] if _seg_len(sl, "w_uf", u)
                        else np.zeros(layout.d_f[u]))
        else:
            w_bf.append(np.zeros(0))
            w_uf.append(np.zeros(0))
            g_f.append(np.zeros(0, complex))
    return GeometricParams(w_bh=eta[sl[("w_bh", None)]], w_rh=w_rh,
                           gamma_h=gamma_h, w_rg=tuple(w_rg), w_ug=tuple(w_ug),
                           gamma_g=tuple(g_g), w_bf=tuple(w_bf),
                           w_uf=tuple(w_uf), gamma_f=tuple(g_f))


def noiseless_mean(params: GeometricParams, plan: TrainingPlan,
                   geometry: SystemGeometry,
                   operator: Optional[MeasurementOperator] = None) -> np.ndarray:
    """Mean received vector sqrt(P) Z h_c(eta) (no noise)."""
    if operator is None:
        operator = assemble_measurement(plan, geometry)
    channels = synth_geometric(params, geometry)
    h = composite_vector(channels, plan.include_direct)
    return np.sqrt(plan.P) * operator.apply(h)


def _user_tensors(params: GeometricParams, geometry: SystemGeometry, u: int):
    """Steering tensors and their frequency derivatives for one user's RIS part."""
    m, ris = geometry.m, geometry.ris
    k_u = geometry.ue_antennas[u]
    d_h, d_g = params.d_h, params.d_g[u]
    marange = np.arange(m)
    aB = np.exp(1j * np.outer(marange, params.w_bh))            # (M, d_H)
    daB = 1j * marange[:, None] * aB
    if k_u > 1:
        krange = np.arange(k_u)
        aUc = np.exp(-1j * np.outer(krange, params.w_ug[u]))    # conj(a_U), (K_u, d_G)
        daUc = -1j * krange[:, None] * aUc
    else:
        aUc = np.ones((1, d_g), complex)
        daUc = np.zeros((1, d_g), complex)
    ix, iy = np.divmod(np.arange(ris.n_elements), ris.count_y)
    diffs = params.w_rg[u][:, None, :] - params.w_rh[None, :, :]   # (d_G, d_H, 2)
    phase = ix[:, None, None] * diffs[..., 0] + iy[:, None, None] * diffs[..., 1]
    aR = np.exp(1j * phase)                                     # (N, d_G, d_H)
    dRx = 1j * ix[:, None, None] * aR
    dRy = 1j * iy[:, None, None] * aR
    gam = np.outer(params.gamma_g[u].conj(), params.gamma_h)    # (d_G, d_H)
    return aB, daB, aUc, daUc, aR, (dRx, dRy), gam


def channel_jacobian(params: GeometricParams, geometry: SystemGeometry,
                     include_direct: bool,
                     layout: Optional[EtaLayout] = None) -> np.ndarray:
    """Real-stacked Jacobian of the composite vector with respect to eta.

    Returns a (2 * dim(h_c), dim(eta)) matrix verified elsewhere against
    central finite differences of the synthesis path.
    """
    J = _channel_jacobian_complex(params, geometry, include_direct, layout)
    return real_stack(J)


def _channel_jacobian_complex(params: GeometricParams, geometry: SystemGeometry,
                              include_direct: bool,
                              layout: Optional[EtaLayout] = None) -> np.ndarray:
    if layout is None:
        layout = EtaLayout.from_params(params, geometry)
    if params.has_direct and not include_direct:
        raise ValueError("direct paths present but the composite layout excludes them")
    sl = layout.slices()
    dim = geometry.composite_dim(include_direct)
    J = np.zeros((dim, layout.size), complex)
    user_slices = geometry.user_composite_slices(include_direct)
    m = geometry.m
    start_h = 0 if layout.include_ambiguous else 1
    d_h = params.d_h

    for u in range(params.n_users):
        k_u = geometry.ue_antennas[u]
        d_g = params.d_g[u]
        aB, daB, aUc, daUc, aR, (dRx, dRy), gam = _user_tensors(params, geometry, u)
        rows = user_slices[u]
        ris_off = rows.start + (m * k_u if include_direct else 0)
        nkm = geometry.n * k_u * m
        ris_rows = slice(ris_off, ris_off + nkm)

        # BS AoAs (global): all (l, p) terms with the p-th BS column differentiated
        cols = np.einsum("nlp,kl,mp,lp->nkmp", aR, aUc, daB, gam).reshape(nkm, d_h)
        J[ris_rows, sl[("w_bh", None)]] += cols

        # RIS-BS gains: columns without gamma_h, scaled by conj(gamma_g)
        base_h = np.einsum("nlp,kl,mp,l->nkmp", aR, aUc, aB,
                           params.gamma_g[u].conj()).reshape(nkm, d_h)
        gh = sl[("gamma_h", None)]
        J[ris_rows, gh.start + 0:gh.stop:2] += base_h[:, start_h:]
        J[ris_rows, gh.start + 1:gh.stop:2] += 1j * base_h[:, start_h:]

        # RIS AoDs enter through the differences with a negative sign
        for axis, dR in enumerate((dRx, dRy)):
            cols = np.einsum("nlp,kl,mp,lp->nkmp", dR, aUc, aB, gam).reshape(nkm, d_h)
            wrh = sl[("w_rh", None)]
            J[ris_rows, wrh.start + axis:wrh.stop:2] += -cols[:, start_h:]
            colsg = np.einsum("nlp,kl,mp,lp->nkml", dR, aUc, aB, gam).reshape(nkm, d_g)
            wrg = sl[("w_rg", u)]
            J[ris_rows, wrg.start + axis:wrg.stop:2] += colsg

        # UE-RIS gains (conjugated in the composite: d/dIm picks up -j)
        base_g = np.einsum("nlp,kl,mp,p->nkml", aR, aUc, aB,
                           params.gamma_h).reshape(nkm, d_g)
        gg = sl[("gamma_g", u)]
        J[ris_rows, gg.start + 0:gg.stop:2] += base_g
        J[ris_rows, gg.start + 1:gg.stop:2] += -1j * base_g

        if _seg_len(sl, "w_ug", u):
            cols = np.einsum("nlp,kl,mp,lp->nkml", aR, daUc, aB, gam).reshape(nkm, d_g)
            J[ris_rows, sl[("w_ug", u)]] += cols

        if params.d_f[u] > 0:
            d_f = params.d_f[u]
            aBF = np.exp(1j * np.outer(np.arange(m), params.w_bf[u]))
            daBF = 1j * np.arange(m)[:, None] * aBF
            if k_u > 1:
                kr = np.arange(k_u)
                aUFc = np.exp(-1j * np.outer(kr, params.w_uf[u]))
                daUFc = -1j * kr[:, None] * aUFc
            else:
                aUFc = np.ones((1, d_f), complex)
                daUFc = np.zeros((1, d_f), complex)
            dir_rows = slice(rows.start, rows.start + m * k_u)
            base_f = np.einsum("ki,mi->kmi", aUFc, aBF).reshape(m * k_u, d_f)
            gf = sl[("gamma_f", u)]
            J[dir_rows, gf.start + 0:gf.stop:2] += base_f
            J[dir_rows, gf.start + 1:gf.stop:2] += 1j * base_f
            cols = np.einsum("ki,mi,i->kmi", aUFc, daBF,
                             params.gamma_f[u]).reshape(m * k_u, d_f)
            J[dir_rows, sl[("w_bf", u)]] += cols
            if _seg_len(sl, "w_uf", u):
                cols = np.einsum("ki,mi,i->kmi", daUFc, aBF,
                                 params.gamma_f[u]).reshape(m * k_u, d_f)
                J[dir_rows, sl[("w_uf", u)]] += cols
    return J


def mean_jacobian(params: GeometricParams, plan: TrainingPlan,
                  geometry: SystemGeometry,
                  operator: Optional[MeasurementOperator] = None,
                  layout: Optional[EtaLayout] = None) -> np.ndarray:
    """Real-stacked Jacobian of the noiseless mean, (2MT, dim(eta))."""
    return real_stack(_mean_jacobian_complex(params, plan, geometry,
                                             operator, layout))


def _mean_jacobian_complex(params, plan, geometry, operator=None, layout=None):
    if operator is None:
        operator = assemble_measurement(plan, geometry)
    Jc = _channel_jacobian_complex(params, geometry, plan.include_direct, layout)
    if operator.is_dense:
        return np.sqrt(plan.P) * (operator.matrix @ Jc)
    cols = [operator.apply(Jc[:, i]) for i in range(Jc.shape[1])]
    return np.sqrt(plan.P) * np.column_stack(cols)


def fim_eta(params: GeometricParams, plan: TrainingPlan,
            geometry: SystemGeometry, sigma2: float,
            operator: Optional[MeasurementOperator] = None,
            layout: Optional[EtaLayout] = None) -> np.ndarray:
    """Fisher information (2/sigma2) J^T J for the Gaussian mean model."""
    Jm = _mean_jacobian_complex(params, plan, geometry, operator, layout)
    F = (2.0 / sigma2) * np.real(Jm.conj().T @ Jm)
    return (F + F.T) / 2.0


@dataclass(frozen=True)
class CrbReport:
    """A bound matrix with its scalar summaries.

    ``mean_diag`` averages the diagonal of the real-stacked bound;
    ``mean_diag_db`` is 10 log10 of it. ``ill_conditioned`` marks a
    (near-)singular FIM handled by pseudo-inverse; ``null_params`` then
    names the parameters dominating the null space.
    """

    crb_matrix: Optional[np.ndarray]
    mean_diag: float
    mean_diag_db: float
    ill_conditioned: bool = False
    null_params: tuple = ()


def _db(x: float) -> float:
    return 10.0 * np.log10(x) if x > 0 else -np.inf


def crb_unstructured(Z, P: float, sigma2: float,
                     return_matrix: bool = True) -> CrbReport:
    """Closed-form unstructured bound (sigma2 / 2P) (Zb^T Zb)^{-1}.

    For orthogonal plans this is (sigma2 / 2PT) I. Raises
    IdentifiabilityError when the training operator is rank deficient.
    """
    G = Z.gram() if isinstance(Z, MeasurementOperator) else \
        np.asarray(Z).conj().T @ np.asarray(Z)
    vals, vecs = np.linalg.eigh((G + G.conj().T) / 2.0)
    if vals[-1] <= 0 or vals[0] <= vals[-1] / COND_MAX:
        raise IdentifiabilityError("training operator is rank deficient; "
                                   "the unstructured model is unidentifiable")
    Ginv = (vecs / vals) @ vecs.conj().T
    mean_diag = (sigma2 / (2.0 * P)) * float(np.mean(np.real(np.diag(Ginv))))
    matrix = (sigma2 / (2.0 * P)) * real_block(Ginv) if return_matrix else None
    return CrbReport(crb_matrix=matrix, mean_diag=mean_diag,
                     mean_diag_db=_db(mean_diag))


def crb_structured(params: GeometricParams, plan: TrainingPlan,
                   geometry: SystemGeometry, sigma2: float,
                   operator: Optional[MeasurementOperator] = None,
                   layout: Optional[EtaLayout] = None,
                   return_matrix: bool = True) -> CrbReport:
    """Composite-channel bound J_h FIM(eta)^{-1} J_h^T for the geometric model.

    A singular FIM (for example with an un-normalized parameterization, or
    nearly coincident paths) is inverted by pseudo-inverse and flagged; the
    parameters dominating the null space are reported by name.
    """
    if layout is None:
        layout = EtaLayout.from_params(params, geometry)
    F = fim_eta(params, plan, geometry, sigma2, operator, layout)
    vals, vecs = np.linalg.eigh(F)
    lam_max = float(vals[-1])
    bad = vals <= lam_max / COND_MAX if lam_max > 0 else np.ones_like(vals, bool)
    ill = bool(np.any(bad))
    null_params = ()
    if ill:
        names = layout.param_names()
        idx = {int(np.argmax(np.abs(vecs[:, i]))) for i in np.flatnonzero(bad)}
        null_params = tuple(sorted(names[i] for i in idx))
    inv_vals = np.where(bad, 0.0, 1.0 / np.where(bad, 1.0, vals))
    crb_eta = (vecs * inv_vals) @ vecs.T
    Jh = channel_jacobian(params, geometry, plan.include_direct, layout)
    diag = np.einsum("ij,jk,ik->i", Jh, crb_eta, Jh)
    mean_diag = float(np.mean(diag))
    matrix = Jh @ crb_eta @ Jh.T if return_matrix else None
    return CrbReport(crb_matrix=matrix, mean_diag=mean_diag,
                     mean_diag_db=_db(mean_diag), ill_conditioned=ill,
                     null_params=null_params)
