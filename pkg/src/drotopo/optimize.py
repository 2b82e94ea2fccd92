"""Outer design loop: alternating multiplier solve and projected density steps.

Each iteration filters the design, assembles and solves the two unit-load
systems, minimizes the dual objective over the multiplier, takes one
projected-gradient step on the density under the volume equality constraint
(Armijo backtracking against the objective at the frozen multiplier), and
applies the penalization continuation schedule.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .dro import (
    DroParams,
    DualObjectiveEvaluation,
    _hard_dual_full,
    density_gradient,
    eval_dual,
    minimize_lambda,
    nominal_evaluation,
)
from .elasticity import ComplianceForm, IsotropicHooke, Mesh2D, compliance_form
from .errors import ConfigurationError, NumericalError
from .material import DensityField, SimpParams, density_filter, simp_scale
from .uncertainty import LoadSpaceDiscretization, NominalLaw, ReferenceMarginals


@dataclass(frozen=True)
class OptimizerConfig:
    volume_fraction: float = 0.2
    max_iterations: int = 240
    initial_step: float | None = None
    armijo_factor: float = 1e-4
    backtrack_ratio: float = 0.5
    max_backtracks: int = 20
    step_growth: float = 1.2
    stagnation_tol: float = 1e-4
    stagnation_window: int = 10

    def __post_init__(self):
        if not 0.0 < self.volume_fraction < 1.0:
            raise ConfigurationError("volume_fraction must lie strictly between 0 and 1")
        if self.initial_step is not None and self.initial_step <= 0:
            raise ConfigurationError("initial_step must be positive")
        if not 0.0 < self.backtrack_ratio < 1.0:
            raise ConfigurationError("backtrack_ratio must lie in (0, 1)")


@dataclass
class HistoryRecord:
    """Per-iteration trace of the design loop."""

    iteration: int
    objective: float
    lam: float
    nominal_compliance: float
    volume: float
    penalization: float
    step: float
    wall_time_s: float


@dataclass
class ProblemSetup:
    """Everything one optimization run needs, already resolved."""

    mesh: Mesh2D
    hooke: IsotropicHooke
    simp: SimpParams
    nominal: NominalLaw
    dro_params: DroParams
    optimizer: OptimizerConfig
    grid: LoadSpaceDiscretization | None = None
    marginals: ReferenceMarginals | None = None

    def __post_init__(self):
        if self.dro_params.mode == "entropic" and (self.grid is None or self.marginals is None):
            raise ConfigurationError("entropic mode needs a load grid and reference marginals")
        if self.dro_params.mode == "hard" and self.grid is None:
            raise ConfigurationError("hard mode needs a load grid")


def project_volume_box(mesh: Mesh2D, raw: np.ndarray, volume_fraction: float) -> DensityField:
    """Euclidean projection onto {0 <= h <= 1, Vol(h) = V_T |D|}.

    The projection is clip(raw - mu) for the scalar shift mu that restores
    the volume, found by bisection; entries strictly inside (0, 1) share the
    common shift (KKT conditions of the projection).
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if raw.shape[0] != mesh.n_elements:
        raise ValueError("raw field must hold one value per element")
    if not 0.0 < volume_fraction < 1.0:
        raise ConfigurationError("volume target must lie strictly between 0 and |D|")
    target = volume_fraction * mesh.n_elements
    tol = 1e-12 * mesh.n_elements
    if raw.min() >= 0.0 and raw.max() <= 1.0 and abs(raw.sum() - target) <= tol:
        return DensityField(mesh, raw.copy())
    lo = raw.min() - 1.0
    hi = raw.max()
    values = None
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        values = np.clip(raw - mu, 0.0, 1.0)
        vol = values.sum()
        if abs(vol - target) <= tol:
            break
        if vol > target:
            lo = mu
        else:
            hi = mu
    return DensityField(mesh, values)


def _field_inner(mesh: Mesh2D, a: np.ndarray, b: np.ndarray) -> float:
    """L2 pairing of two piecewise-constant element fields."""
    return float((a * b).sum() * mesh.element_area)


class _Evaluator:
    """Builds the compliance form and dispatches on the robustness mode."""

    def __init__(self, setup: ProblemSetup, cost_hook=None):
        self.s = setup
        self.cost_hook = cost_hook

    def form_at(self, density: DensityField, p: float) -> ComplianceForm:
        params = replace(self.s.simp, penalization=p)
        physical = density_filter(density, params.filter_radius)
        scale = simp_scale(physical, params)
        return compliance_form(self.s.mesh, self.s.hooke, scale)

    def _costs(self, form: ComplianceForm) -> np.ndarray | None:
        if self.cost_hook is None:
            return None
        return self.cost_hook(form, self.s.grid)

    def full(self, form: ComplianceForm) -> tuple[float, float, DualObjectiveEvaluation]:
        """Objective with the multiplier re-optimized; returns (value, lam, eval)."""
        s = self.s
        costs = self._costs(form)
        if s.dro_params.mode == "nominal":
            ev = nominal_evaluation(form, s.nominal, s.grid, costs=costs)
            return ev.value, 0.0, ev
        if s.dro_params.mode == "hard":
            value, lam, ev = _hard_dual_full(
                form, s.grid, s.nominal, s.dro_params.wasserstein_radius, costs=costs
            )
            return value, lam, ev
        lam, value = minimize_lambda(form, s.grid, s.nominal, s.marginals, s.dro_params, costs=costs)
        ev = eval_dual(form, s.grid, s.nominal, s.marginals, s.dro_params, lam, costs=costs)
        return value, lam, ev

    def at_fixed_lam(self, form: ComplianceForm, lam: float) -> float:
        """Objective with the multiplier frozen (line-search evaluations)."""
        s = self.s
        costs = self._costs(form)
        if s.dro_params.mode == "nominal":
            return nominal_evaluation(form, s.nominal, s.grid, costs=costs).value
        if s.dro_params.mode == "hard":
            from .dro import _resolve_costs
            from .uncertainty import cost_matrix

            cn = _resolve_costs(form, s.grid, costs)
            c = cost_matrix(s.nominal.samples, s.grid.nodes)
            m = s.dro_params.wasserstein_radius
            if not np.isfinite(lam):
                vals = np.where(c == 0.0, cn[None, :], -np.inf).max(axis=1)
                return float(vals.mean())
            return float(lam * m + (cn[None, :] - lam * c).max(axis=1).mean())
        return eval_dual(form, s.grid, s.nominal, s.marginals, s.dro_params, lam, costs=costs).value


def optimize(setup: ProblemSetup, cost_hook=None) -> tuple[DensityField, float, list[HistoryRecord]]:
    """Run the projected-gradient design loop; returns (design, lam*, history).

    ``cost_hook(form, grid) -> costs`` substitutes a synthetic cost surface
    for the node compliances (test hook); since such costs do not depend on
    the design, the density gradient is then identically zero.

    The history gains one final record for the returned design, so it holds
    ``iterations + 1`` rows. Deterministic for a fixed setup.
    """
    cfg = setup.optimizer
    mesh = setup.mesh
    evaluator = _Evaluator(setup, cost_hook)
    density = DensityField(mesh, np.full(mesh.n_elements, cfg.volume_fraction))
    history: list[HistoryRecord] = []
    step = cfg.initial_step
    lam = 0.0
    stagnant = 0

    it = 0
    for it in range(cfg.max_iterations):
        t0 = time.perf_counter()
        p = setup.simp.exponent_at(it)
        try:
            form = evaluator.form_at(density, p)
            value, lam, evaluation = evaluator.full(form)
        except NumericalError as err:
            raise NumericalError(f"iteration {it}: {err}", residual=err.residual) from err
        if not np.isfinite(value):
            raise NumericalError(
                f"iteration {it}: objective is not finite (value={value!r}, lam={lam!r})"
            )
        if cost_hook is None:
            grad = density_gradient(
                evaluation, form, replace(setup.simp, penalization=p), density
            )
        else:
            grad = np.zeros(mesh.n_elements)

        if step is None:
            grad_mass = np.abs(grad).sum() * mesh.element_area
            step = 0.1 * mesh.domain_area / grad_mass if grad_mass > 0 else 1.0

        trial = density
        accepted_first_try = False
        t = step
        moved = False
        for attempt in range(cfg.max_backtracks + 1):
            candidate = project_volume_box(mesh, density.values - t * grad, cfg.volume_fraction)
            delta = candidate.values - density.values
            if not np.any(delta):
                trial = density
                break
            trial_form = evaluator.form_at(candidate, p)
            trial_value = evaluator.at_fixed_lam(trial_form, lam)
            sufficient = value + cfg.armijo_factor * _field_inner(mesh, grad, delta)
            if trial_value <= sufficient:
                trial = candidate
                moved = True
                accepted_first_try = attempt == 0
                break
            if attempt == cfg.max_backtracks and trial_value <= value:
                trial = candidate
                moved = True
                break
            t *= cfg.backtrack_ratio

        change = float(np.abs(trial.values - density.values).max())
        history.append(
            HistoryRecord(
                iteration=it,
                objective=value,
                lam=lam,
                nominal_compliance=form.compliance(setup.nominal.samples[0]),
                volume=density.volume_fraction(),
                penalization=p,
                step=t if moved else 0.0,
                wall_time_s=time.perf_counter() - t0,
            )
        )
        density = trial
        step = t * cfg.step_growth if accepted_first_try else t

        stagnant = stagnant + 1 if change < cfg.stagnation_tol else 0
        if stagnant >= cfg.stagnation_window and not setup.simp.pending_switch_after(it):
            it += 1
            break
    else:
        it = cfg.max_iterations

    # closing record for the returned design
    t0 = time.perf_counter()
    p = setup.simp.exponent_at(it)
    form = evaluator.form_at(density, p)
    value, lam, _ = evaluator.full(form)
    history.append(
        HistoryRecord(
            iteration=it,
            objective=value,
            lam=lam,
            nominal_compliance=form.compliance(setup.nominal.samples[0]),
            volume=density.volume_fraction(),
            penalization=p,
            step=0.0,
            wall_time_s=time.perf_counter() - t0,
        )
    )
    return density, lam, history
