"""System geometry: base station, RIS, and user array layout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import ArraySpec

__all__ = ["SystemGeometry"]


@dataclass(frozen=True)
class SystemGeometry:
    """Antenna/element counts and spacings for one BS, one RIS, and U users.

    The BS and UEs are ULAs; the RIS is a URA. ``ue_antennas`` holds the
    per-user antenna count K_u; the total K is their sum.
    """

    bs: ArraySpec
    ris: ArraySpec
    ue_antennas: tuple = (1,)
    ue_spacing: float = 0.5

    def __post_init__(self):
        if self.bs.kind != "ULA":
            raise ValueError("the BS array must be a ULA")
        if self.ris.kind != "URA":
            raise ValueError("the RIS must be a URA")
        if len(self.ue_antennas) < 1 or any(k < 1 for k in self.ue_antennas):
            raise ValueError("each user needs at least one antenna")
        object.__setattr__(self, "ue_antennas", tuple(int(k) for k in self.ue_antennas))

    @staticmethod
    def create(m: int, n_x: int, n_y: int, ue_antennas=(1,), bs_spacing=0.5,
               ris_spacing_x=0.5, ris_spacing_y=0.5, ue_spacing=0.5) -> "SystemGeometry":
        return SystemGeometry(
            bs=ArraySpec.ula(m, bs_spacing),
            ris=ArraySpec.ura(n_x, n_y, ris_spacing_x, ris_spacing_y),
            ue_antennas=tuple(ue_antennas),
            ue_spacing=ue_spacing,
        )

    @property
    def m(self) -> int:
        return self.bs.count_x

    @property
    def n(self) -> int:
        return self.ris.n_elements

    @property
    def n_users(self) -> int:
        return len(self.ue_antennas)

    @property
    def k_total(self) -> int:
        return int(sum(self.ue_antennas))

    def ue_spec(self, user: int) -> ArraySpec:
        return ArraySpec.ula(self.ue_antennas[user], self.ue_spacing)

    def user_row_slices(self):
        """Row slices of each user inside the stacked K x N channel."""
        edges = np.concatenate([[0], np.cumsum(self.ue_antennas)])
        return [slice(int(edges[u]), int(edges[u + 1])) for u in range(self.n_users)]

    def composite_dim(self, include_direct: bool) -> int:
        """Length of the stacked composite channel vector."""
        cols = self.n + 1 if include_direct else self.n
        return self.m * self.k_total * cols

    def user_composite_slices(self, include_direct: bool):
        """Slices of each user's block inside the user-major composite vector."""
        cols = self.n + 1 if include_direct else self.n
        sizes = [self.m * k * cols for k in self.ue_antennas]
        edges = np.concatenate([[0], np.cumsum(sizes)])
        return [slice(int(edges[u]), int(edges[u + 1])) for u in range(self.n_users)]
