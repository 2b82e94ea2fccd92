"""SIMP material interpolation and density regularization."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .elasticity import Mesh2D


@dataclass(frozen=True)
class SimpParams:
    """Power-law interpolation between void and solid stiffness.

    ``void_fraction`` is the residual stiffness of empty elements,
    ``penalization`` the current exponent, ``p_schedule`` an ordered list of
    (iteration, exponent) continuation switch points, ``filter_radius`` the
    density filter half-width in element widths (0 disables filtering).
    """

    void_fraction: float = 1e-3
    penalization: float = 3.0
    p_schedule: tuple[tuple[int, float], ...] = ()
    filter_radius: float = 1.5

    def __post_init__(self):
        if not 0.0 < self.void_fraction < 1.0:
            raise ValueError(f"void_fraction must lie in (0, 1), got {self.void_fraction}")
        if self.penalization < 1.0:
            raise ValueError(f"penalization exponent must be >= 1, got {self.penalization}")
        if self.filter_radius < 0.0:
            raise ValueError("filter_radius must be nonnegative")
        object.__setattr__(
            self, "p_schedule", tuple((int(i), float(p)) for i, p in self.p_schedule)
        )
        iters = [i for i, _ in self.p_schedule]
        if any(b <= a for a, b in zip(iters, iters[1:])):
            raise ValueError("p_schedule iterations must be strictly increasing")
        if any(p < 1.0 for _, p in self.p_schedule):
            raise ValueError("scheduled exponents must be >= 1")

    def exponent_at(self, iteration: int) -> float:
        """Exponent in force at a given outer iteration."""
        p = self.penalization
        for start, value in self.p_schedule:
            if iteration >= start:
                p = value
        return p

    def pending_switch_after(self, iteration: int) -> bool:
        return any(start > iteration for start, _ in self.p_schedule)


@dataclass
class DensityField:
    """Element-wise material density in [0, 1] on a structured mesh."""

    mesh: Mesh2D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.shape[0] != self.mesh.n_elements:
            raise ValueError("density must hold one value per element")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ValueError("density values must lie in [0, 1]")

    def volume(self) -> float:
        return float(self.values.sum() * self.mesh.element_area)

    def volume_fraction(self) -> float:
        return self.volume() / self.mesh.domain_area

    def grid(self) -> np.ndarray:
        """(ny, nx) view, row iy = 0 at the bottom of the domain."""
        return self.values.reshape(self.mesh.ny, self.mesh.nx)


def simp_scale(density: DensityField, params: SimpParams) -> np.ndarray:
    """Stiffness multiplier eta + (1 - eta) * h^p, one value per element."""
    eta = params.void_fraction
    return eta + (1.0 - eta) * density.values**params.penalization


def simp_scale_derivative(density: DensityField, params: SimpParams) -> np.ndarray:
    """d(scale)/dh = p * (1 - eta) * h^(p-1)."""
    eta, p = params.void_fraction, params.penalization
    return p * (1.0 - eta) * density.values ** (p - 1.0)


@lru_cache(maxsize=32)
def _filter_matrix_1d(n: int, radius: float) -> np.ndarray:
    """Row-stochastic 1D hat filter with mirror boundary handling.

    Mirror (symmetric) padding folds the kernel mass that falls outside the
    domain back onto boundary cells, which makes the operator both bound-
    and volume-preserving (all row and column sums equal 1).
    """
    half = int(np.ceil(radius)) - 1
    offsets = np.arange(-half, half + 1)
    taps = np.maximum(0.0, radius - np.abs(offsets))
    taps = taps[taps > 0.0]
    offsets = offsets[: taps.shape[0]]
    taps = taps / taps.sum()
    mat = np.zeros((n, n))
    for i in range(n):
        for off, w in zip(offsets, taps):
            j = i + off
            if j < 0:
                j = -j - 1
            elif j >= n:
                j = 2 * n - j - 1
            mat[i, j] += w
    mat.setflags(write=False)
    return mat


def _apply_filter(values: np.ndarray, mesh: Mesh2D, radius: float, transpose: bool) -> np.ndarray:
    grid = values.reshape(mesh.ny, mesh.nx)
    by = _filter_matrix_1d(mesh.ny, radius)
    bx = _filter_matrix_1d(mesh.nx, radius)
    if transpose:
        out = by.T @ grid @ bx
    else:
        out = by @ grid @ bx.T
    return out.ravel()


def density_filter(density: DensityField, radius: float) -> DensityField:
    """Smooth the density with a separable normalized hat kernel.

    Radius is measured in element widths; radius <= 1 (in particular 0)
    returns the input unchanged. Linear, keeps values in [0, 1], and
    preserves the total volume.
    """
    if radius < 0.0:
        raise ValueError("filter radius must be nonnegative")
    if radius <= 1.0:
        return DensityField(density.mesh, density.values.copy())
    filtered = _apply_filter(density.values, density.mesh, radius, transpose=False)
    return DensityField(density.mesh, np.clip(filtered, 0.0, 1.0))


def density_filter_transpose(values: np.ndarray, mesh: Mesh2D, radius: float) -> np.ndarray:
    """Adjoint of ``density_filter`` on a plain element field (chain rule)."""
    if radius <= 1.0:
        return np.asarray(values, dtype=np.float64).reshape(-1).copy()
    return _apply_filter(np.asarray(values, dtype=np.float64).reshape(-1), mesh, radius, transpose=True)
