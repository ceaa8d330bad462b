"""Smoothing kernels for the SPH sums.

Only the 2D Wendland C2 kernel is offered. Its radial derivative divided by
``r`` stays finite at the origin, which is the quantity every pairwise sum
in the solver actually needs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WENDLAND_C2 = "wendland_c2"
KERNEL_FAMILIES = (WENDLAND_C2,)

# support radius in units of h
_SUPPORT_FACTOR = {WENDLAND_C2: 2.0}


@dataclass(frozen=True)
class KernelSpec:
    smoothing_length: float
    family: str = WENDLAND_C2

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.smoothing_length > 0:
            raise ValueError("smoothing_length must be positive")

    @property
    def support_radius(self) -> float:
        return _SUPPORT_FACTOR[self.family] * self.smoothing_length

    @property
    def norm(self) -> float:
        """2D normalization constant (already divided by h^2)."""
        return 7.0 / (4.0 * np.pi * self.smoothing_length ** 2)

    @classmethod
    def for_spacing(cls, dx: float, h_ratio: float = 1.3, family: str = WENDLAND_C2):
        return cls(smoothing_length=h_ratio * dx, family=family)


def kernel_value(spec: KernelSpec, r):
    """W(r, h) in 1/m^2; zero at and beyond the support radius."""
    r = np.asarray(r, dtype=float)
    q = r / spec.smoothing_length
    s = np.clip(1.0 - 0.5 * q, 0.0, None)
    return spec.norm * s ** 4 * (1.0 + 2.0 * q)


def kernel_dr(spec: KernelSpec, r):
    """dW/dr in 1/m^3. Zero at the origin and outside the support."""
    r = np.asarray(r, dtype=float)
    h = spec.smoothing_length
    q = r / h
    s = np.clip(1.0 - 0.5 * q, 0.0, None)
    return -5.0 * spec.norm / h * q * s ** 3


def kernel_dr_over_r(spec: KernelSpec, r):
    """(dW/dr)/r in 1/m^4, finite at r = 0."""
    r = np.asarray(r, dtype=float)
    h = spec.smoothing_length
    s = np.clip(1.0 - 0.5 * r / h, 0.0, None)
    return -5.0 * spec.norm / h ** 2 * s ** 3


def kernel_gradient(spec: KernelSpec, rij):
    """Vector gradient of W with respect to r_i for separation(s) rij = r_i - r_j."""
    rij = np.asarray(rij, dtype=float)
    r = np.linalg.norm(rij, axis=-1)
    return kernel_dr_over_r(spec, r)[..., None] * rij * (r < spec.support_radius)[..., None]
