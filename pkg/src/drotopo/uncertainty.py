"""Discretization of the load space and the Gaussian reference marginals.

The admissible loads live in a closed ball of radius R in the plane. All
downstream integrals over candidate loads are finite sums over a fixed node
set: a coarse Cartesian lattice clipped to the ball, refined locally around
each observed load so the narrow Gaussian reference weights are resolved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp as _lse

from .errors import ConfigurationError


def ground_cost(xi, zeta) -> float:
    """Squared Euclidean distance between two load vectors."""
    a = np.asarray(xi, dtype=np.float64)
    b = np.asarray(zeta, dtype=np.float64)
    d = a - b
    return float(d @ d)


def cost_matrix(points_a: np.ndarray, points_b: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, shape (len(a), len(b))."""
    a = np.asarray(points_a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(points_b, dtype=np.float64).reshape(-1, 2)
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass
class LoadSpaceDiscretization:
    """Fixed finite node set inside the closed ball of radius R."""

    radius: float
    nodes: np.ndarray
    spacing: float | None = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 2)
        if self.radius <= 0:
            raise ValueError("load ball radius must be positive")
        if self.nodes.shape[0] < 1:
            raise ValueError("load grid must contain at least one node")
        norms = np.linalg.norm(self.nodes, axis=1)
        if np.any(norms > self.radius * (1.0 + 1e-12)):
            raise ValueError("all grid nodes must lie inside the load ball")
        if np.unique(self.nodes, axis=0).shape[0] != self.nodes.shape[0]:
            raise ValueError("grid nodes must be pairwise distinct")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def build_load_grid(
    radius: float,
    spacing: float,
    refinement_centers=(),
    refinement_spacing: float | None = None,
    gaussian_scale: float | None = None,
    max_nodes: int = 500_000,
) -> LoadSpaceDiscretization:
    """Coarse lattice over the load ball with fine patches near the samples.

    Each refinement patch is a lattice of pitch ``refinement_spacing``
    covering a ball of radius 10 * sqrt(2 * gaussian_scale) around its
    center, which is where the reference Gaussian carries its mass.
    """
    if not 0.0 < spacing <= 2.0 * radius:
        raise ConfigurationError(f"grid spacing must lie in (0, 2R], got {spacing}")
    centers = np.asarray(list(refinement_centers), dtype=np.float64).reshape(-1, 2)
    if centers.shape[0]:
        if refinement_spacing is None or gaussian_scale is None:
            raise ConfigurationError(
                "refinement requires both refinement_spacing and gaussian_scale"
            )
        if not 0.0 < refinement_spacing <= spacing:
            raise ConfigurationError("refinement_spacing must lie in (0, spacing]")

    kmax = int(np.floor(radius / spacing))
    est = (2 * kmax + 1) ** 2
    if est > 4 * max_nodes:
        raise ConfigurationError(
            f"base grid would hold about {est} nodes, above the cap {max_nodes}"
        )
    ticks = np.arange(-kmax, kmax + 1) * spacing
    gx, gy = np.meshgrid(ticks, ticks)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts = pts[pts[:, 0] ** 2 + pts[:, 1] ** 2 <= radius * radius]

    chunks = [pts]
    quantum = (refinement_spacing or spacing) * 1e-3
    for c in centers:
        r_loc = 10.0 * np.sqrt(2.0 * gaussian_scale)
        kloc = int(np.floor(r_loc / refinement_spacing))
        if (2 * kloc + 1) ** 2 > 4 * max_nodes:
            raise ConfigurationError("refinement patch exceeds the node cap")
        t = np.arange(-kloc, kloc + 1) * refinement_spacing
        lx, ly = np.meshgrid(t, t)
        loc = np.stack([lx.ravel(), ly.ravel()], axis=1)
        loc = loc[loc[:, 0] ** 2 + loc[:, 1] ** 2 <= r_loc * r_loc] + c
        loc = loc[loc[:, 0] ** 2 + loc[:, 1] ** 2 <= radius * radius]
        chunks.append(loc)

    allpts = np.concatenate(chunks, axis=0)
    keys = np.round(allpts / quantum).astype(np.int64)
    _, keep = np.unique(keys, axis=0, return_index=True)
    nodes = allpts[np.sort(keep)]
    order = np.lexsort((nodes[:, 1], nodes[:, 0]))
    nodes = nodes[order]
    if nodes.shape[0] > max_nodes:
        raise ConfigurationError(
            f"load grid holds {nodes.shape[0]} nodes, above the cap {max_nodes}"
        )
    return LoadSpaceDiscretization(radius=radius, nodes=nodes, spacing=spacing)


@dataclass
class NominalLaw:
    """Empirical law of the observed loads, snapped onto the grid nodes."""

    samples: np.ndarray
    node_indices: np.ndarray
    snap_distances: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1, 2)
        self.node_indices = np.asarray(self.node_indices, dtype=np.int64).reshape(-1)
        if self.samples.shape[0] < 1:
            raise ValueError("nominal law needs at least one sample")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @classmethod
    def from_samples(cls, samples, grid: LoadSpaceDiscretization) -> "NominalLaw":
        raw = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
        norms = np.linalg.norm(raw, axis=1)
        if np.any(norms > grid.radius * (1.0 + 1e-12)):
            raise ValueError("observed loads must lie inside the load ball")
        d2 = cost_matrix(raw, grid.nodes)
        idx = np.argmin(d2, axis=1)
        snapped = grid.nodes[idx]
        dist = np.sqrt(np.take_along_axis(d2, idx[:, None], axis=1).ravel())
        if grid.spacing is not None and np.any(dist >= grid.spacing):
            raise ConfigurationError(
                "a sample snapped farther than one grid spacing; refine the grid"
            )
        return cls(samples=snapped, node_indices=idx, snap_distances=dist)


@dataclass
class ReferenceMarginals:
    """Discretely normalized Gaussian weights nu_ij around each sample.

    Row i holds the probability vector of the reference marginal centered at
    sample i; ``log_weights`` is the primary representation since the
    Gaussian underflows far from its center for small scales.
    """

    gaussian_scale: float
    log_weights: np.ndarray
    weights: np.ndarray
    log_normalizers: np.ndarray
    cost_matrix: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.log_weights.shape[0]


def reference_marginals(
    grid: LoadSpaceDiscretization, nominal: NominalLaw, gaussian_scale: float
) -> ReferenceMarginals:
    """Normalized exp(-|xi_i - zeta_j|^2 / (2 sigma)) over the grid nodes."""
    if gaussian_scale <= 0:
        raise ValueError("gaussian_scale must be positive")
    c = cost_matrix(nominal.samples, grid.nodes)
    raw = -c / (2.0 * gaussian_scale)
    log_norm = -_lse(raw, axis=1)
    logw = raw + log_norm[:, None]
    return ReferenceMarginals(
        gaussian_scale=float(gaussian_scale),
        log_weights=logw,
        weights=np.exp(logw),
        log_normalizers=log_norm,
        cost_matrix=c,
    )
