"""Brute-force reference implementations used only for verification.

Nothing here shares code with the dual-objective module: log-sum-exp comes
from scipy, summation orders differ, and the primal side of the duality
check searches candidate laws directly instead of using any dual identity.
Toy sizes only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp as _lse

from .errors import NumericalError


@dataclass
class DiscreteTransportProblem:
    """Entropic transport between the nominal atoms and the grid nodes.

    ``log_reference`` holds log nu_ij; the reference coupling is
    pi0_ij = source_weights_i * nu_ij. ``target_weights`` may be None for a
    problem skeleton (filled per candidate by the primal search).
    """

    source_weights: np.ndarray
    cost_matrix: np.ndarray
    log_reference: np.ndarray
    epsilon: float
    target_weights: np.ndarray | None = None

    def __post_init__(self):
        self.source_weights = np.asarray(self.source_weights, dtype=np.float64).reshape(-1)
        self.cost_matrix = np.asarray(self.cost_matrix, dtype=np.float64)
        self.log_reference = np.asarray(self.log_reference, dtype=np.float64)
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if abs(self.source_weights.sum() - 1.0) > 1e-9:
            raise ValueError("source weights must sum to 1")
        if self.target_weights is not None:
            self.target_weights = np.asarray(self.target_weights, dtype=np.float64).reshape(-1)
            if abs(self.target_weights.sum() - 1.0) > 1e-9:
                raise ValueError("target weights must sum to 1")

    def with_target(self, q) -> "DiscreteTransportProblem":
        return replace(self, target_weights=np.asarray(q, dtype=np.float64))


@dataclass
class PrimalSearchResult:
    value: float
    weights: np.ndarray | None
    min_transport_cost: float


def entropic_ot(
    problem: DiscreteTransportProblem,
    marginal_tol: float = 1e-10,
    max_iterations: int = 100_000,
) -> tuple[float, np.ndarray]:
    """Entropy-regularized transport cost and optimal coupling.

    Sinkhorn scaling against the Gibbs kernel pi0 * exp(-c / eps), run in
    the log domain so tiny reference weights survive. Returns
    (<c, pi> + eps * KL(pi || pi0), pi).
    """
    if problem.target_weights is None:
        raise ValueError("problem has no target weights")
    a = problem.source_weights
    b = problem.target_weights
    eps = problem.epsilon
    log_pi0 = np.log(a)[:, None] + problem.log_reference
    log_kernel = log_pi0 - problem.cost_matrix / eps
    with np.errstate(divide="ignore"):
        log_a = np.log(a)
        log_b = np.where(b > 0, np.log(np.where(b > 0, b, 1.0)), -np.inf)
    u = np.zeros(a.shape[0])
    v = np.zeros(b.shape[0])
    err = np.inf
    for _ in range(max_iterations):
        u = eps * (log_a - _lse(log_kernel + v[None, :] / eps, axis=1))
        v = eps * (log_b - _lse(log_kernel + u[:, None] / eps, axis=0))
        log_pi = log_kernel + u[:, None] / eps + v[None, :] / eps
        pi = np.exp(log_pi)
        err = max(
            float(np.abs(pi.sum(axis=1) - a).sum()), float(np.abs(pi.sum(axis=0) - b).sum())
        )
        if err < marginal_tol:
            break
    else:
        raise NumericalError(
            f"sinkhorn did not reach marginal error {marginal_tol}", residual=err
        )
    cost = float((problem.cost_matrix * pi).sum())
    mask = pi > 0
    kl = float((pi[mask] * (log_pi[mask] - log_pi0[mask])).sum())
    return cost + eps * kl, pi


def _transport_cost_single_source(
    q: np.ndarray, costs: np.ndarray, log_ref: np.ndarray, eps: float
) -> np.ndarray:
    """W_eps for one nominal atom: the coupling is forced to equal q.

    Vectorized over candidate rows of q. Exact, because with a single source
    atom the marginal constraints determine the whole coupling.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(q > 0, q * (np.log(np.where(q > 0, q, 1.0)) - log_ref[None, :]), 0.0)
    return q @ costs + eps * ent.sum(axis=1)


def _compositions(k: int, total: int) -> np.ndarray:
    """Integer vectors of length k with nonnegative entries summing to total."""
    if k == 1:
        return np.array([[total]], dtype=np.int64)
    if k == 2:
        a = np.arange(total + 1, dtype=np.int64)
        return np.stack([a, total - a], axis=1)
    if k == 3:
        a, b = np.meshgrid(
            np.arange(total + 1, dtype=np.int64),
            np.arange(total + 1, dtype=np.int64),
            indexing="ij",
        )
        a, b = a.ravel(), b.ravel()
        keep = a + b <= total
        a, b = a[keep], b[keep]
        return np.stack([a, b, total - a - b], axis=1)
    blocks = []
    for first in range(total + 1):
        rest = _compositions(k - 1, total - first)
        block = np.empty((rest.shape[0], k), dtype=np.int64)
        block[:, 0] = first
        block[:, 1:] = rest
        blocks.append(block)
    return np.concatenate(blocks, axis=0)


def _simplex_grid(k: int, resolution: int) -> np.ndarray:
    """All weight vectors with entries that are multiples of 1/resolution."""
    return _compositions(k, resolution).astype(np.float64) / resolution


def _local_simplex_grid(center: np.ndarray, width: float, steps: int) -> np.ndarray:
    """Weight vectors on a fine lattice patch of the simplex around ``center``."""
    k = center.shape[0]
    offsets = np.linspace(-width, width, 2 * steps + 1)
    grids = np.meshgrid(*([offsets] * (k - 1)), indexing="ij")
    free = np.stack([g.ravel() for g in grids], axis=1) + center[:-1][None, :]
    last = 1.0 - free.sum(axis=1)
    q = np.concatenate([free, last[:, None]], axis=1)
    return q[np.all(q >= 0.0, axis=1)]


def primal_supremum(
    costs: np.ndarray,
    skeleton: DiscreteTransportProblem,
    budget: float,
    resolution: int = 200,
    refine_width: float = 1e-8,
    max_refine_rounds: int = 400,
) -> PrimalSearchResult:
    """Exhaustive search for sup <costs, Q> over the regularized ball.

    Candidate laws Q live on a simplex lattice of pitch 1/resolution over
    the grid atoms; a candidate is kept if its entropic transport cost from
    the nominal law is within the budget. The global pass is followed by a
    recentering lattice refinement (the incumbent patch walks along the
    budget boundary, then shrinks down to ``refine_width``) and, for a
    single nominal atom, a feasibility-safeguarded constrained solve of the
    primal program that removes the O(pitch) lattice under-estimate. Lattice
    maxima alone stall against the curved boundary far above the tolerances
    the duality certification needs.

    With one nominal atom the transport cost of a candidate is evaluated in
    closed form (the coupling is forced by the marginal constraints);
    otherwise every candidate goes through the Sinkhorn solver, so keep the
    node count tiny.
    """
    costs = np.asarray(costs, dtype=np.float64).reshape(-1)
    k = costs.shape[0]
    if k > 6:
        raise ValueError("primal search is exhaustive; grids above 6 nodes are not supported")
    single = skeleton.source_weights.shape[0] == 1

    def transport(qs: np.ndarray) -> np.ndarray:
        if single:
            return _transport_cost_single_source(
                qs, skeleton.cost_matrix[0], skeleton.log_reference[0], skeleton.epsilon
            )
        vals = np.empty(qs.shape[0])
        for i, q in enumerate(qs):
            vals[i], _ = entropic_ot(skeleton.with_target(q))
        return vals

    candidates = _simplex_grid(k, resolution)
    w = transport(candidates)
    feasible = w <= budget
    min_w = float(w.min())
    if not np.any(feasible):
        return PrimalSearchResult(value=-np.inf, weights=None, min_transport_cost=min_w)
    objective = candidates @ costs
    objective[~feasible] = -np.inf
    best = int(np.argmax(objective))
    best_q, best_val = candidates[best], float(objective[best])

    width = 2.0 / resolution
    steps = 8
    for _ in range(max_refine_rounds):
        if width < refine_width or k == 1:
            break
        local = _local_simplex_grid(best_q, width, steps=steps)
        if local.shape[0] == 0:
            width /= 4.0
            continue
        wloc = transport(local)
        obj = local @ costs
        obj[wloc > budget] = -np.inf
        j = int(np.argmax(obj))
        if np.isfinite(obj[j]) and obj[j] > best_val:
            moved = float(np.abs(local[j] - best_q).max())
            best_val = float(obj[j])
            best_q = local[j]
            if moved < 0.5 * width:
                width /= 4.0
        else:
            width /= 4.0

    if single and k > 1:
        polished = _polish_single_source(best_q, costs, skeleton, budget)
        if polished is not None:
            val = float(costs @ polished)
            if val > best_val:
                best_val, best_q = val, polished
    return PrimalSearchResult(value=best_val, weights=best_q, min_transport_cost=min_w)


def _polish_single_source(
    anchor: np.ndarray, costs: np.ndarray, skeleton: DiscreteTransportProblem, budget: float
) -> np.ndarray | None:
    """Sharpen the lattice incumbent by solving the primal program directly.

    The lattice maximum under-estimates the supremum by O(pitch) because the
    optimum sits on the curved budget boundary; a local constrained solve of
    max <costs, q> over the simplex removes that bias. The result is only
    accepted after being pulled back onto the feasible side along the
    segment to the (feasible) lattice anchor, so the reported value never
    exceeds the true supremum.
    """
    from scipy.optimize import minimize

    c_row = skeleton.cost_matrix[0]
    log_nu = skeleton.log_reference[0]
    eps = skeleton.epsilon
    k = costs.shape[0]
    floor = 1e-13

    def w_fun(q):
        qf = np.maximum(q, floor)
        return float(qf @ c_row + eps * (qf * (np.log(qf) - log_nu)).sum())

    def w_grad(q):
        qf = np.maximum(q, floor)
        return c_row + eps * (np.log(qf) - log_nu + 1.0)

    start = np.maximum(anchor, 1e-10)
    start = start / start.sum()
    res = minimize(
        lambda q: -float(costs @ q),
        start,
        jac=lambda q: -costs,
        method="SLSQP",
        bounds=[(floor, 1.0)] * k,
        constraints=[
            {"type": "eq", "fun": lambda q: q.sum() - 1.0, "jac": lambda q: np.ones(k)},
            {"type": "ineq", "fun": lambda q: budget - w_fun(q), "jac": lambda q: -w_grad(q)},
        ],
        options={"ftol": 1e-14, "maxiter": 500},
    )
    if not res.success:
        return None
    q = np.clip(res.x, 0.0, None)
    total = q.sum()
    if not np.isfinite(total) or total <= 0:
        return None
    q = q / total
    if w_fun(q) <= budget:
        return q
    # pull back toward the feasible anchor until the budget holds again
    lo, hi = 0.0, 1.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        blend = (1.0 - mid) * q + mid * anchor
        if w_fun(blend) <= budget:
            hi = mid
        else:
            lo = mid
    blend = (1.0 - hi) * q + hi * anchor
    return blend if w_fun(blend) <= budget else None


def fd_gradient(objective, point: np.ndarray, step: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector."""
    if step <= 0:
        raise ValueError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    grad = np.empty(point.shape[0])
    for i in range(point.shape[0]):
        hi = point.copy()
        lo = point.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (objective(hi) - objective(lo)) / (2.0 * step)
    return grad
