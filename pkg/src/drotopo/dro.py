"""Dual objective of the regularized worst-case expected compliance.

For a design with compliance form M the worst-case expected cost over laws
within transport budget m of the nominal law equals, by convex duality,

    inf_{lam > 0}  lam * m + lam * eps * mean_i log sum_j nu_ij
                       * exp((C_j - lam * c_ij) / (lam * eps)),

where C_j = zeta_j' M zeta_j, c_ij is the squared distance from sample i to
grid node j and nu_ij the Gaussian reference weights. Everything here runs
through max-shifted log-sum-exp so no intermediate exponential overflows.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .elasticity import ComplianceForm, compliance_gradient_fields
from .errors import NumericalError
from .material import (
    DensityField,
    SimpParams,
    density_filter,
    density_filter_transpose,
    simp_scale_derivative,
)
from .uncertainty import LoadSpaceDiscretization, NominalLaw, ReferenceMarginals

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0

MODES = ("entropic", "hard", "nominal")


@dataclass(frozen=True)
class DroParams:
    """Robustness configuration: transport budget, smoothing, dual bracket."""

    wasserstein_radius: float
    entropic_epsilon: float = 1e-2
    lambda_bracket: tuple[float, float] = (1e-6, 1e4)
    mode: str = "entropic"

    def __post_init__(self):
        if self.wasserstein_radius < 0:
            raise ValueError("wasserstein_radius must be nonnegative")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "entropic" and self.entropic_epsilon <= 0:
            raise ValueError("entropic_epsilon must be positive in entropic mode")
        lo, hi = self.lambda_bracket
        if not 0 < lo < hi:
            raise ValueError("lambda bracket must satisfy 0 < lo < hi")


@dataclass
class DualObjectiveEvaluation:
    """One evaluation of the dual objective at fixed (design, lam).

    ``weights`` are the softmax reweightings of the grid nodes per sample,
    ``moments`` the weighted second-moment matrices sum_j w_ij zeta zeta',
    ``mean_costs`` the weighted average compliances. In nominal mode there is
    no grid reweighting and only value/moments/mean_costs are populated.
    """

    value: float
    lam: float
    log_terms: np.ndarray | None
    weights: np.ndarray | None
    moments: np.ndarray
    mean_costs: np.ndarray

    def mean_moment(self) -> np.ndarray:
        return self.moments.mean(axis=0)


def logsumexp(values, weights) -> float:
    """log sum_j w_j exp(v_j) with a max shift; weights are probabilities."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if v.shape != w.shape:
        raise ValueError("values and weights must have the same length")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(w > 0):
        raise ValueError("at least one weight must be positive")
    with np.errstate(divide="ignore"):
        a = np.where(w > 0, v + np.log(np.where(w > 0, w, 1.0)), -np.inf)
    shift = a.max()
    if not np.isfinite(shift):
        return float(shift)
    return float(shift + np.log(np.exp(a - shift).sum()))


def node_costs(form: ComplianceForm, grid: LoadSpaceDiscretization) -> np.ndarray:
    """Compliance C_j = zeta_j' M zeta_j at every grid node."""
    z = grid.nodes
    return np.einsum("jk,kl,jl->j", z, form.matrix, z)


def _resolve_costs(form, grid, costs) -> np.ndarray:
    if costs is not None:
        return np.asarray(costs, dtype=np.float64).reshape(-1)
    return node_costs(form, grid)


def eval_dual(
    form: ComplianceForm | None,
    grid: LoadSpaceDiscretization,
    nominal: NominalLaw,
    marginals: ReferenceMarginals,
    params: DroParams,
    lam: float,
    costs: np.ndarray | None = None,
) -> DualObjectiveEvaluation:
    """Evaluate the entropic dual objective and its per-sample statistics.

    ``costs`` overrides the compliance values on the grid (test hook for
    synthetic cost surfaces); otherwise they come from the form matrix.
    """
    if params.mode != "entropic":
        raise ValueError("eval_dual requires entropic mode")
    if lam <= 0:
        raise ValueError("lam must be positive; the lam -> 0 limit is worst_case_limit")
    c_nodes = _resolve_costs(form, grid, costs)
    eps = params.entropic_epsilon
    exponents = (c_nodes[None, :] - lam * marginals.cost_matrix) / (lam * eps)
    a = marginals.log_weights + exponents
    shift = a.max(axis=1, keepdims=True)
    log_terms = (shift + np.log(np.exp(a - shift).sum(axis=1, keepdims=True))).ravel()
    w = np.exp(a - log_terms[:, None])
    z = grid.nodes
    moments = np.einsum("ij,jk,jl->ikl", w, z, z)
    mean_costs = w @ c_nodes
    value = lam * (params.wasserstein_radius + eps * log_terms.mean())
    return DualObjectiveEvaluation(
        value=float(value),
        lam=float(lam),
        log_terms=log_terms,
        weights=w,
        moments=moments,
        mean_costs=mean_costs,
    )


def dual_lambda_derivative(
    evaluation: DualObjectiveEvaluation, params: DroParams, lam: float | None = None
) -> float:
    """Closed-form d/dlam of the dual objective at the evaluated point."""
    if lam is None:
        lam = evaluation.lam
    elif abs(lam - evaluation.lam) > 1e-12 * max(abs(lam), 1.0):
        raise ValueError("evaluation was produced at a different lam")
    eps = params.entropic_epsilon
    term = eps * evaluation.log_terms - evaluation.mean_costs / lam
    return float(params.wasserstein_radius + term.mean())


def _golden_section(fun, lo: float, hi: float, rel_tol: float) -> tuple[float, float]:
    """Minimize a unimodal function of lam over [lo, hi] on a log scale."""
    a, b = np.log(lo), np.log(hi)
    fa, fb = fun(np.exp(a)), fun(np.exp(b))
    if not (np.isfinite(fa) and np.isfinite(fb)):
        raise NumericalError("dual objective is not finite at the bracket endpoints")
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fun(np.exp(c)), fun(np.exp(d))
    while b - a > rel_tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fun(np.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fun(np.exp(d))
    x = 0.5 * (a + b)
    return float(np.exp(x)), float(fun(np.exp(x)))


def minimize_lambda(
    form: ComplianceForm | None,
    grid: LoadSpaceDiscretization,
    nominal: NominalLaw,
    marginals: ReferenceMarginals,
    params: DroParams,
    costs: np.ndarray | None = None,
    rel_tol: float = 1e-6,
) -> tuple[float, float]:
    """Inner minimization of the dual objective over the multiplier.

    The objective is convex in lam (it is a supremum of affine functions),
    so a golden-section search on log lam is exact up to the bracket
    tolerance. Returns (lam*, value).
    """
    if params.wasserstein_radius <= 0:
        raise ValueError("minimize_lambda needs a positive transport budget m")
    if params.wasserstein_radius < 10.0 * marginals.gaussian_scale:
        warnings.warn(
            "transport budget m below 10*sigma: the regularized ambiguity set "
            "may be empty (possibly infeasible radius)",
            RuntimeWarning,
            stacklevel=2,
        )
    c_nodes = _resolve_costs(form, grid, costs)

    def objective(lam: float) -> float:
        return eval_dual(None, grid, nominal, marginals, params, lam, costs=c_nodes).value

    lo, hi = params.lambda_bracket
    lam_star, value = _golden_section(objective, lo, hi, rel_tol)
    if lam_star > hi * (1.0 - 10.0 * rel_tol):
        warnings.warn(
            "dual minimizer at the upper lambda bracket: possibly infeasible radius",
            RuntimeWarning,
            stacklevel=2,
        )
    else:
        edge = eval_dual(None, grid, nominal, marginals, params, hi, costs=c_nodes)
        if dual_lambda_derivative(edge, params) < -1e-8:
            warnings.warn(
                "dual objective still decreasing at the upper lambda bracket: "
                "possibly infeasible radius",
                RuntimeWarning,
                stacklevel=2,
            )
    return lam_star, value


def worst_case_limit(
    form: ComplianceForm | None,
    grid: LoadSpaceDiscretization,
    nominal: NominalLaw | None = None,
    costs: np.ndarray | None = None,
) -> float:
    """Global worst case max_j C_j, the lam -> 0 limit of the dual."""
    return float(_resolve_costs(form, grid, costs).max())


def hard_dual(
    form: ComplianceForm | None,
    grid: LoadSpaceDiscretization,
    nominal: NominalLaw,
    wasserstein_radius: float,
    costs: np.ndarray | None = None,
    lambda_bracket: tuple[float, float] = (1e-8, 1e8),
    rel_tol: float = 1e-9,
) -> float:
    """Unregularized dual: inf_lam lam*m + mean_i max_j (C_j - lam*c_ij)."""
    value, _, _ = _hard_dual_full(
        form, grid, nominal, wasserstein_radius, costs, lambda_bracket, rel_tol
    )
    return value


def _hard_dual_full(form, grid, nominal, m, costs=None, bracket=(1e-8, 1e8), rel_tol=1e-9):
    if m < 0:
        raise ValueError("transport budget m must be nonnegative")
    from .uncertainty import cost_matrix

    c_nodes = _resolve_costs(form, grid, costs)
    c = cost_matrix(nominal.samples, grid.nodes)

    def objective(lam: float) -> float:
        return float(lam * m + (c_nodes[None, :] - lam * c).max(axis=1).mean())

    if m == 0.0:
        # lam -> infinity pins every sample to its zero-cost nodes
        vals = np.where(c == 0.0, c_nodes[None, :], -np.inf).max(axis=1)
        lam_star = np.inf
        value = float(vals.mean())
    else:
        lam_star, value = _golden_section(objective, bracket[0], bracket[1], rel_tol)
    argmax = np.argmax(c_nodes[None, :] - min(lam_star, 1e300) * c, axis=1)
    z = grid.nodes[argmax]
    moments = np.einsum("ik,il->ikl", z, z)
    evaluation = DualObjectiveEvaluation(
        value=value,
        lam=float(lam_star),
        log_terms=None,
        weights=None,
        moments=moments,
        mean_costs=c_nodes[argmax],
    )
    return value, float(lam_star), evaluation


def nominal_evaluation(
    form: ComplianceForm | None,
    nominal: NominalLaw,
    grid: LoadSpaceDiscretization | None = None,
    costs: np.ndarray | None = None,
) -> DualObjectiveEvaluation:
    """Plain expected cost under the nominal law (the m = 0 route)."""
    if costs is not None:
        sample_costs = np.asarray(costs, dtype=np.float64).reshape(-1)[nominal.node_indices]
    else:
        xi = nominal.samples
        sample_costs = np.einsum("ik,kl,il->i", xi, form.matrix, xi)
    moments = np.einsum("ik,il->ikl", nominal.samples, nominal.samples)
    return DualObjectiveEvaluation(
        value=float(sample_costs.mean()),
        lam=0.0,
        log_terms=None,
        weights=None,
        moments=moments,
        mean_costs=sample_costs,
    )


def density_gradient(
    evaluation: DualObjectiveEvaluation,
    form: ComplianceForm,
    params: SimpParams,
    density: DensityField,
) -> np.ndarray:
    """Functional derivative of the dual value with respect to the design.

    Self-adjointness of the compliance reduces the softmax average over grid
    nodes to the mean second-moment matrix: the gradient is
    -p h^(p-1) (1-eta) times the moment-weighted energy density, pulled back
    through the transposed density filter. Element-wise <= 0: adding
    material never increases any compliance.

    ``form`` must have been assembled from the filtered version of
    ``density`` with the same SIMP parameters.
    """
    if form.mesh is not density.mesh and (
        form.mesh.nx != density.mesh.nx or form.mesh.ny != density.mesh.ny
    ):
        raise ValueError("compliance form and density live on different meshes")
    physical = density_filter(density, params.filter_radius)
    slope = simp_scale_derivative(physical, params)
    energy = compliance_gradient_fields(form, evaluation.mean_moment())
    grad_physical = -(slope * energy)
    return density_filter_transpose(grad_physical, density.mesh, params.filter_radius)
