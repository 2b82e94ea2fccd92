"""Structured-mesh 2D linear elasticity.

Bilinear quadrilateral elements on a regular grid, plane stress, 2x2 Gauss
quadrature. Traction loads are constant vectors on a set of boundary edges,
so two unit-load solves determine the compliance for every load direction
through a 2x2 quadratic form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError

_GAUSS = 1.0 / np.sqrt(3.0)
# corner order: bottom-left, bottom-right, top-right, top-left
_CORNERS = np.array([(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)])

_SOLVE_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class IsotropicHooke:
    """Isotropic reference material (plane stress)."""

    young_modulus: float = 1.0
    poisson_ratio: float = 0.3

    def __post_init__(self):
        if self.young_modulus <= 0:
            raise ValueError(f"young_modulus must be positive, got {self.young_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError(f"poisson_ratio must lie in (-1, 0.5), got {self.poisson_ratio}")

    def plane_stress_matrix(self) -> np.ndarray:
        e, nu = self.young_modulus, self.poisson_ratio
        return (e / (1.0 - nu**2)) * np.array(
            [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
        )


@dataclass
class Mesh2D:
    """Regular nx-by-ny quadrilateral mesh on [0, lx] x [0, ly].

    Node n = iy * (nx + 1) + ix carries dofs (2n, 2n + 1); element
    e = ey * nx + ex. ``dirichlet_nodes`` are clamped in both components;
    ``neumann_edges`` are (node_a, node_b) boundary edges carrying the
    traction load.
    """

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    dirichlet_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    neumann_edges: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ConfigurationError(
                f"degenerate mesh: need nx >= 2 and ny >= 2, got {self.nx}x{self.ny}"
            )
        if self.lx <= 0 or self.ly <= 0:
            raise ConfigurationError("domain side lengths must be positive")
        self.dirichlet_nodes = np.asarray(self.dirichlet_nodes, dtype=np.int64).reshape(-1)
        self.neumann_edges = np.asarray(self.neumann_edges, dtype=np.int64).reshape(-1, 2)
        touched = set(self.neumann_edges.ravel().tolist())
        if touched & set(self.dirichlet_nodes.tolist()):
            raise ConfigurationError("dirichlet nodes and traction edges must be disjoint")
        for a, b in self.neumann_edges:
            if not (self._on_boundary(a) and self._on_boundary(b)):
                raise ConfigurationError(f"traction edge ({a}, {b}) does not lie on the boundary")
            xa, ya = self.node_xy(a)
            xb, yb = self.node_xy(b)
            if not (abs(xa - xb) < 1e-14 * max(1.0, self.lx) or abs(ya - yb) < 1e-14 * max(1.0, self.ly)):
                raise ConfigurationError(f"traction edge ({a}, {b}) is not axis-aligned")

    # -- geometry ---------------------------------------------------------

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def element_area(self) -> float:
        return self.hx * self.hy

    @property
    def domain_area(self) -> float:
        return self.lx * self.ly

    def node_xy(self, n: int) -> tuple[float, float]:
        iy, ix = divmod(n, self.nx + 1)
        return ix * self.hx, iy * self.hy

    def _on_boundary(self, n: int) -> bool:
        iy, ix = divmod(n, self.nx + 1)
        return ix in (0, self.nx) or iy in (0, self.ny)

    def element_dofs(self) -> np.ndarray:
        """(n_elements, 8) dof table in corner order."""
        ex, ey = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ex, ey = ex.ravel(), ey.ravel()
        n00 = ey * (self.nx + 1) + ex
        corners = np.stack([n00, n00 + 1, n00 + self.nx + 2, n00 + self.nx + 1], axis=1)
        dofs = np.empty((self.n_elements, 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * corners
        dofs[:, 1::2] = 2 * corners + 1
        return dofs

    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[2 * self.dirichlet_nodes] = False
        mask[2 * self.dirichlet_nodes + 1] = False
        return np.nonzero(mask)[0]

    def edge_lengths(self) -> np.ndarray:
        lengths = np.empty(len(self.neumann_edges))
        for k, (a, b) in enumerate(self.neumann_edges):
            xa, ya = self.node_xy(a)
            xb, yb = self.node_xy(b)
            lengths[k] = np.hypot(xb - xa, yb - ya)
        return lengths


@dataclass
class DisplacementField:
    """Nodal displacements, two components per node, zero on clamped nodes."""

    mesh: Mesh2D
    dofs: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.float64).reshape(-1)
        if self.dofs.shape[0] != self.mesh.n_dofs:
            raise ValueError("displacement vector length does not match the mesh")
        fixed = self.mesh.dirichlet_nodes
        if fixed.size and (
            np.any(self.dofs[2 * fixed] != 0.0) or np.any(self.dofs[2 * fixed + 1] != 0.0)
        ):
            raise ValueError("displacement is nonzero on a clamped node")


@dataclass
class ComplianceForm:
    """Compliance as a quadratic form in the (constant) traction vector.

    ``matrix`` is the symmetric 2x2 matrix M with C(zeta) = zeta' M zeta.
    ``u_basis`` holds the displacement fields for unit tractions (1,0) and
    (0,1); ``g_basis`` stacks the three element-wise energy cross-densities
    g_ab = A e(u_a):e(u_b) for (a,b) in {(1,1),(1,2),(2,2)}, evaluated with
    the reference (unscaled) material.
    """

    mesh: Mesh2D
    matrix: np.ndarray
    u_basis: tuple[DisplacementField, DisplacementField]
    g_basis: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64).reshape(2, 2)
        if not np.allclose(self.matrix, self.matrix.T, rtol=1e-12, atol=0.0):
            raise ValueError("compliance matrix must be symmetric")

    def compliance(self, zeta) -> float:
        z = np.asarray(zeta, dtype=np.float64)
        return float(z @ self.matrix @ z)


def element_stiffness(hooke: IsotropicHooke, hx: float, hy: float) -> np.ndarray:
    """8x8 stiffness of one rectangular bilinear element at unit scale."""
    d = hooke.plane_stress_matrix()
    ke = np.zeros((8, 8))
    det_j = hx * hy / 4.0
    for s in (-_GAUSS, _GAUSS):
        for t in (-_GAUSS, _GAUSS):
            dn_dx = _CORNERS[:, 0] * (1.0 + t * _CORNERS[:, 1]) / 4.0 * (2.0 / hx)
            dn_dy = _CORNERS[:, 1] * (1.0 + s * _CORNERS[:, 0]) / 4.0 * (2.0 / hy)
            b = np.zeros((3, 8))
            b[0, 0::2] = dn_dx
            b[1, 1::2] = dn_dy
            b[2, 0::2] = dn_dy
            b[2, 1::2] = dn_dx
            ke += b.T @ d @ b * det_j
    return ke


def assemble_stiffness(mesh: Mesh2D, hooke: IsotropicHooke, scale: np.ndarray) -> sp.csc_matrix:
    """Global stiffness with Dirichlet rows/columns eliminated.

    ``scale`` holds one positive stiffness multiplier per element (the SIMP
    interpolation of the density). The returned matrix acts on the free dofs
    in the order given by ``mesh.free_dofs()``.
    """
    scale = np.asarray(scale, dtype=np.float64).reshape(-1)
    if scale.shape[0] != mesh.n_elements:
        raise ValueError("scale must hold one value per element")
    if np.any(scale <= 0.0) or not np.all(np.isfinite(scale)):
        raise ValueError("stiffness scale entries must be positive and finite")
    ke = element_stiffness(hooke, mesh.hx, mesh.hy)
    edofs = mesh.element_dofs()
    rows = np.broadcast_to(edofs[:, :, None], (mesh.n_elements, 8, 8)).ravel()
    cols = np.broadcast_to(edofs[:, None, :], (mesh.n_elements, 8, 8)).ravel()
    vals = (scale[:, None, None] * ke[None, :, :]).ravel()
    k_full = sp.coo_matrix((vals, (rows, cols)), shape=(mesh.n_dofs, mesh.n_dofs)).tocsr()
    free = mesh.free_dofs()
    if free.shape[0] == mesh.n_dofs:
        return k_full.tocsc()
    return k_full[free][:, free].tocsc()


def unit_load_vectors(mesh: Mesh2D) -> tuple[np.ndarray, np.ndarray]:
    """Consistent nodal forces (full dof numbering) for unit tractions (1,0), (0,1)."""
    f1 = np.zeros(mesh.n_dofs)
    f2 = np.zeros(mesh.n_dofs)
    lengths = mesh.edge_lengths()
    for (a, b), length in zip(mesh.neumann_edges, lengths):
        for n in (a, b):
            f1[2 * n] += 0.5 * length
            f2[2 * n + 1] += 0.5 * length
    return f1, f2


def _solve_reduced(k_red: sp.csc_matrix, rhs: list[np.ndarray], method: str = "auto") -> list[np.ndarray]:
    """Solve the reduced SPD system for several right-hand sides.

    Direct sparse factorization by default, diagonally preconditioned
    conjugate gradients as fallback. Either path is deterministic.
    """
    n = k_red.shape[0]
    solutions = None
    if method in ("auto", "direct"):
        try:
            lu = spla.splu(k_red, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
            solutions = [lu.solve(f) for f in rhs]
        except RuntimeError:
            if method == "direct":
                raise NumericalError("sparse factorization failed (singular stiffness?)")
            solutions = None
    if solutions is None:
        diag = k_red.diagonal()
        if np.any(diag <= 0):
            raise NumericalError("stiffness diagonal is not positive")
        precond = spla.LinearOperator((n, n), matvec=lambda x: x / diag)
        cap = max(1, int(50 * np.sqrt(n)))
        solutions = []
        for f in rhs:
            u, info = spla.cg(k_red, f, rtol=1e-12, atol=0.0, maxiter=cap, M=precond)
            if info != 0:
                res = float(np.linalg.norm(k_red @ u - f) / max(np.linalg.norm(f), 1e-300))
                raise NumericalError(
                    f"conjugate gradient did not converge within {cap} iterations", residual=res
                )
            solutions.append(u)
    for f, u in zip(rhs, solutions):
        fnorm = np.linalg.norm(f)
        res = float(np.linalg.norm(k_red @ u - f))
        rel = res / fnorm if fnorm > 0 else res
        if rel > _SOLVE_RESIDUAL_TOL:
            raise NumericalError(f"linear solve residual {rel:.3e} above tolerance", residual=rel)
    return solutions


def solve_unit_loads(
    mesh: Mesh2D, stiffness: sp.csc_matrix, method: str = "auto"
) -> tuple[DisplacementField, DisplacementField]:
    """Displacement fields for the two unit tractions on the loaded edges."""
    free = mesh.free_dofs()
    if mesh.n_dofs - free.shape[0] < 3:
        raise ValueError("need at least 3 constrained dofs to pin rigid body modes")
    if stiffness.shape != (free.shape[0], free.shape[0]):
        raise ValueError("stiffness size does not match the mesh free dofs")
    f1, f2 = unit_load_vectors(mesh)
    sols = _solve_reduced(stiffness, [f1[free], f2[free]], method=method)
    fields = []
    for u_red in sols:
        u = np.zeros(mesh.n_dofs)
        u[free] = u_red
        fields.append(DisplacementField(mesh, u))
    return fields[0], fields[1]


def compliance_form(
    mesh: Mesh2D, hooke: IsotropicHooke, scale: np.ndarray, method: str = "auto"
) -> ComplianceForm:
    """Assemble, solve both unit loads, and package the compliance form.

    The 2x2 matrix is accumulated from element energies (so it is exactly
    consistent with ``g_basis``) and cross-checked against the
    force-displacement work form.
    """
    k_red = assemble_stiffness(mesh, hooke, scale)
    u1, u2 = solve_unit_loads(mesh, k_red, method=method)
    ke = element_stiffness(hooke, mesh.hx, mesh.hy)
    edofs = mesh.element_dofs()
    ua = u1.dofs[edofs]
    ub = u2.dofs[edofs]
    g11 = np.einsum("ei,ij,ej->e", ua, ke, ua)
    g12 = np.einsum("ei,ij,ej->e", ua, ke, ub)
    g22 = np.einsum("ei,ij,ej->e", ub, ke, ub)
    scale = np.asarray(scale, dtype=np.float64).reshape(-1)
    m = np.array(
        [
            [float(scale @ g11), float(scale @ g12)],
            [float(scale @ g12), float(scale @ g22)],
        ]
    )
    f1, f2 = unit_load_vectors(mesh)
    m_work = np.array(
        [[f1 @ u1.dofs, f1 @ u2.dofs], [f2 @ u1.dofs, f2 @ u2.dofs]]
    )
    ref = max(abs(m).max(), 1e-300)
    if np.abs(m - m_work).max() > 1e-10 * ref:
        raise NumericalError(
            "energy and work forms of the compliance matrix disagree",
            residual=float(np.abs(m - m_work).max() / ref),
        )
    g_basis = np.vstack([g11, g12, g22]) / mesh.element_area
    return ComplianceForm(mesh=mesh, matrix=m, u_basis=(u1, u2), g_basis=g_basis)


def compliance_gradient_fields(form: ComplianceForm, s: np.ndarray) -> np.ndarray:
    """Element-wise energy density sum_ab S_ab * g_ab for a symmetric 2x2 S.

    Nonnegative whenever S is positive semidefinite, since it is the energy
    density of a PSD combination of the unit-load fields.
    """
    s = np.asarray(s, dtype=np.float64).reshape(2, 2)
    if np.abs(s - s.T).max() > 1e-10 * max(np.abs(s).max(), 1e-300):
        raise ValueError("moment matrix must be symmetric")
    g11, g12, g22 = form.g_basis
    return s[0, 0] * g11 + 2.0 * s[0, 1] * g12 + s[1, 1] * g22


def bridge_mesh(nx: int, ny: int, lx: float = 1.0, ly: float = 1.0) -> Mesh2D:
    """Unit-square bridge: bottom side clamped, whole top side loaded."""
    bottom = np.arange(nx + 1, dtype=np.int64)
    top0 = ny * (nx + 1)
    edges = np.stack(
        [top0 + np.arange(nx, dtype=np.int64), top0 + np.arange(1, nx + 1, dtype=np.int64)],
        axis=1,
    )
    return Mesh2D(nx=nx, ny=ny, lx=lx, ly=ly, dirichlet_nodes=bottom, neumann_edges=edges)


def cantilever_mesh(nx: int, ny: int, lx: float = 2.0, ly: float = 1.0) -> Mesh2D:
    """2x1 cantilever: left side clamped, load on a centered right-side band.

    The loaded band covers the right-side edges whose midpoints fall in the
    centered window of height 0.1 * ly (at least one edge is always used).
    """
    left = np.arange(ny + 1, dtype=np.int64) * (nx + 1)
    mids = (np.arange(ny) + 0.5) / ny
    sel = np.nonzero(np.abs(mids - 0.5) < 0.05)[0]
    if sel.size == 0:
        sel = np.array([ny // 2])
    right = np.array([(iy + 1) * (nx + 1) - 1 for iy in range(ny + 1)], dtype=np.int64)
    edges = np.stack([right[sel], right[sel + 1]], axis=1)
    return Mesh2D(nx=nx, ny=ny, lx=lx, ly=ly, dirichlet_nodes=left, neumann_edges=edges)
