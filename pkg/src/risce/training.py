"""Pilot sequences, RIS reflection schedules, and the stacked measurement operator.

A training plan pairs UE pilots ``X`` (K x T) with an RIS schedule ``Psi``
whose row b holds the conjugate-transposed reflection vector of block b
(with an optional leading all-ones column covering the direct path). The
received training data stacks to

    y = sqrt(P) * Z @ h_c + noise,

where row block t of ``Z`` is ``kron(phi_t^T, x_t^T, I_M)`` (per user block,
scaled by the user's relative power) and ``h_c`` is the user-major composite
vector from :mod:`risce.channels`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import dft, hadamard

from .channels import ChannelSet, composite_vector
from .geometry import SystemGeometry

__all__ = [
    "TrainingPlan",
    "MeasurementOperator",
    "dft_ris_sequence",
    "hadamard_ris_sequence",
    "one_hot_ris_sequence",
    "random_ris_sequence",
    "orthogonal_pilots",
    "assemble_measurement",
    "simulate_uplink",
]

DENSE_CAP_BYTES = 2 << 30  # materialize Z densely below this size


def dft_ris_sequence(blocks: int, n: int) -> np.ndarray:
    """blocks x (n+1) schedule with [Psi]_{mn} = exp(j 2 pi (m-1)(n-1)/blocks).

    Columns are the first n+1 columns of the blocks-point DFT matrix, so
    Psi^H Psi = blocks * I. Requires blocks >= n + 1.
    """
    if blocks < n + 1:
        raise ValueError(f"need blocks >= N+1 ({n + 1}), got {blocks}")
    m, c = np.meshgrid(np.arange(blocks), np.arange(n + 1), indexing="ij")
    return np.exp(2j * np.pi * m * c / blocks)


def hadamard_ris_sequence(blocks: int, n: int) -> np.ndarray:
    """First n+1 columns of the Sylvester-Hadamard matrix of order ``blocks``.

    Restricted to power-of-two block counts, which always admit the
    construction and keep all entries in {+1, -1}.
    """
    if blocks < n + 1:
        raise ValueError(f"need blocks >= N+1 ({n + 1}), got {blocks}")
    if blocks & (blocks - 1):
        raise ValueError(f"block count {blocks} is not a power of two")
    return hadamard(blocks).astype(float)[:, : n + 1]


def one_hot_ris_sequence(n: int, include_direct: bool = False) -> np.ndarray:
    """One RIS element active per block (identity schedule, direct path excluded)."""
    if include_direct:
        raise ValueError("the one-element-at-a-time schedule has no direct column")
    return np.eye(n)


def random_ris_sequence(blocks: int, n: int, rng: np.random.Generator,
                        include_direct: bool = False) -> np.ndarray:
    """Uniformly distributed unimodular phases, one row per block."""
    psi = np.exp(2j * np.pi * rng.random((blocks, n)))
    if include_direct:
        psi = np.column_stack([np.ones(blocks), psi])
    return psi


def orthogonal_pilots(k: int) -> np.ndarray:
    """K x K DFT pilot matrix with X X^H = K I."""
    return dft(k).conj()


@dataclass(frozen=True)
class TrainingPlan:
    """UE pilots plus RIS schedule, transmit power, and noise level.

    ``protocol`` is "block-repeat" (pilots repeat every K samples while the
    RIS holds each row of Psi for one block) or "per-sample" (one Psi row
    per sample).
    """

    X: np.ndarray
    Psi: np.ndarray
    protocol: str = "block-repeat"
    include_direct: bool = True
    P: float = 1.0
    sigma2: float = 1.0
    powers: Optional[tuple] = None   # per-user transmit powers; default all P

    def __post_init__(self):
        X = np.asarray(self.X, complex)
        Psi = np.asarray(self.Psi, complex)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Psi", Psi)
        if self.protocol not in ("block-repeat", "per-sample"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        k, t = X.shape
        if self.protocol == "block-repeat":
            if t % k:
                raise ValueError("block-repeat requires T divisible by K")
            if Psi.shape[0] != t // k:
                raise ValueError("Psi must have T/K rows under block-repeat")
        elif Psi.shape[0] != t:
            raise ValueError("per-sample Psi must have T rows")
        mags = np.abs(Psi)
        if np.any((mags > 1e-9) & (np.abs(mags - 1.0) > 1e-9)):
            raise ValueError("RIS entries must be unimodular (or zero when off)")
        if self.P <= 0 or self.sigma2 < 0:
            raise ValueError("P must be positive and sigma2 nonnegative")

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.X.shape[0]

    @property
    def n_ris(self) -> int:
        return self.Psi.shape[1] - (1 if self.include_direct else 0)

    def sample_phases(self) -> np.ndarray:
        """T x cols matrix whose row t is phi_t^T (the conjugated Psi row)."""
        rows = self.Psi.conj()
        if self.protocol == "block-repeat":
            rows = np.repeat(rows, self.K, axis=0)
        return rows

    @staticmethod
    def block_repeat(k: int, Psi, include_direct: bool = True, P: float = 1.0,
                     sigma2: float = 1.0, powers=None) -> "TrainingPlan":
        """Orthogonal K x K pilots repeated once per Psi row."""
        Psi = np.asarray(Psi)
        X = np.tile(orthogonal_pilots(k), Psi.shape[0])
        return TrainingPlan(X=X, Psi=Psi, protocol="block-repeat",
                            include_direct=include_direct, P=P, sigma2=sigma2,
                            powers=powers)

    @staticmethod
    def per_sample(X, Psi, include_direct: bool = False, P: float = 1.0,
                   sigma2: float = 1.0, powers=None) -> "TrainingPlan":
        return TrainingPlan(X=np.asarray(X), Psi=np.asarray(Psi),
                            protocol="per-sample", include_direct=include_direct,
                            P=P, sigma2=sigma2, powers=powers)


class MeasurementOperator:
    """The stacked MT x MK(N+1) (or MT x MKN) training operator Z.

    Densely materialized below a memory cap; above it, applications use the
    Kronecker identity directly. Both paths produce identical results.
    """

    def __init__(self, plan: TrainingPlan, geometry: SystemGeometry,
                 dense_cap_bytes: int = DENSE_CAP_BYTES):
        if plan.K != geometry.k_total:
            raise ValueError("plan pilots and geometry disagree on K")
        if plan.n_ris != geometry.n:
            raise ValueError("plan schedule and geometry disagree on N")
        self.plan = plan
        self.geometry = geometry
        self.include_direct = plan.include_direct
        m, t = geometry.m, plan.T
        self._phi = plan.sample_phases()            # (T, cols)
        self._xu = [plan.X[s, :] for s in geometry.user_row_slices()]
        powers = plan.powers or (plan.P,) * geometry.n_users
        if len(powers) != geometry.n_users:
            raise ValueError("one power per user required")
        self._scale = np.sqrt(np.asarray(powers, float) / plan.P)
        cols_per_user = [self._phi.shape[1] * k * m for k in geometry.ue_antennas]
        edges = np.concatenate([[0], np.cumsum(cols_per_user)])
        self.user_col_slices = [slice(int(a), int(b)) for a, b in zip(edges, edges[1:])]
        self.shape = (m * t, int(edges[-1]))
        self._matrix = None
        if 16 * self.shape[0] * self.shape[1] <= dense_cap_bytes:
            self._matrix = self._build_dense()

    def _build_dense(self) -> np.ndarray:
        m, t = self.geometry.m, self.plan.T
        eye = np.eye(m)
        Z = np.zeros(self.shape, complex)
        for ti in range(t):
            row = slice(ti * m, (ti + 1) * m)
            for u, cols in enumerate(self.user_col_slices):
                coeff = self._scale[u] * np.kron(self._phi[ti], self._xu[u][:, ti])
                Z[row, cols] = np.kron(coeff, eye)
        return Z

    @property
    def matrix(self) -> Optional[np.ndarray]:
        return self._matrix

    @property
    def is_dense(self) -> bool:
        return self._matrix is not None

    def apply(self, h: np.ndarray) -> np.ndarray:
        """Z @ h for a user-major composite vector h."""
        if self._matrix is not None:
            return self._matrix @ h
        m, t = self.geometry.m, self.plan.T
        ncols = self._phi.shape[1]
        y = np.zeros((t, m), complex)
        for u, cols in enumerate(self.user_col_slices):
            hu = np.asarray(h[cols]).reshape(ncols, -1, m)
            tmp = np.einsum("tn,nkm->tkm", self._phi, hu)
            y += self._scale[u] * np.einsum("kt,tkm->tm", self._xu[u], tmp)
        return y.reshape(-1)

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        """Z^H @ y."""
        if self._matrix is not None:
            return self._matrix.conj().T @ y
        m, t = self.geometry.m, self.plan.T
        Y = np.asarray(y).reshape(t, m)
        out = []
        for u in range(len(self._xu)):
            blk = np.einsum("tn,kt,tm->nkm", self._phi.conj(),
                            self._xu[u].conj(), Y)
            out.append(self._scale[u] * blk.reshape(-1))
        return np.concatenate(out)

    def gram(self) -> np.ndarray:
        """Z^H Z."""
        if self._matrix is not None:
            return self._matrix.conj().T @ self._matrix
        m = self.geometry.m
        dim = self.shape[1]
        G = np.zeros((dim, dim), complex)
        eye = np.eye(m)
        for u, cu in enumerate(self.user_col_slices):
            for v, cv in enumerate(self.user_col_slices):
                W = np.einsum("tn,tp,kt,lt->nkpl", self._phi.conj(), self._phi,
                              self._xu[u].conj(), self._xu[v])
                W = W.reshape(W.shape[0] * W.shape[1], -1)
                G[cu, cv] = self._scale[u] * self._scale[v] * np.kron(W, eye)
        return G

    def dense(self) -> np.ndarray:
        """Force a dense matrix regardless of the cap (small problems only)."""
        return self._matrix if self._matrix is not None else self._build_dense()


def assemble_measurement(plan: TrainingPlan, geometry: SystemGeometry,
                         dense_cap_bytes: int = DENSE_CAP_BYTES) -> MeasurementOperator:
    """Build the stacked training operator for a plan."""
    return MeasurementOperator(plan, geometry, dense_cap_bytes)


def simulate_uplink(channels: ChannelSet, plan: TrainingPlan,
                    rng: Optional[np.random.Generator] = None,
                    operator: Optional[MeasurementOperator] = None) -> np.ndarray:
    """Received training vector sqrt(P) Z h_c plus CN(0, sigma2) noise."""
    if operator is None:
        geometry = SystemGeometry.create(channels.m, channels.n, 1,
                                         ue_antennas=channels.ue_antennas)
        operator = assemble_measurement(plan, geometry)
    h = composite_vector(channels, plan.include_direct)
    y = np.sqrt(plan.P) * operator.apply(h)
    if plan.sigma2 > 0:
        if rng is None:
            raise ValueError("an rng is required when sigma2 > 0")
        noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + np.sqrt(plan.sigma2 / 2.0) * noise
    return y
