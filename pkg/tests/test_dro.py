"""Dual objective, multiplier search, and adjoint gradient tests."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import drotopo as dt
from drotopo.elasticity import element_stiffness
from drotopo.material import density_filter_transpose

from conftest import make_form

TOY_COSTS = np.array([0.0, 1.0, 4.0])


def toy_params(m=0.5, eps=0.1, mode="entropic"):
    return dt.DroParams(wasserstein_radius=m, entropic_epsilon=eps, mode=mode)


def quiet_minimize(*args, **kwargs):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return dt.minimize_lambda(*args, **kwargs)


class TestDroParams:
    def test_negative_budget_rejected(self):
        with pytest.raises(ValueError):
            dt.DroParams(wasserstein_radius=-0.1)

    def test_entropic_mode_needs_positive_epsilon(self):
        with pytest.raises(ValueError):
            dt.DroParams(wasserstein_radius=0.5, entropic_epsilon=0.0)

    def test_bracket_order_enforced(self):
        with pytest.raises(ValueError):
            dt.DroParams(wasserstein_radius=0.5, lambda_bracket=(1.0, 0.5))

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            dt.DroParams(wasserstein_radius=0.5, mode="fuzzy")


class TestLogsumexp:
    def test_constant_values_return_the_constant(self):
        assert dt.logsumexp([3.7, 3.7, 3.7], [0.2, 0.5, 0.3]) == pytest.approx(3.7, abs=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_shift_invariance(self, seed):
        rng = np.random.default_rng(seed)
        v = rng.normal(0, 5, 6)
        w = rng.dirichlet(np.ones(6))
        shift = 1e6
        a = dt.logsumexp(v + shift, w)
        b = dt.logsumexp(v, w) + shift
        assert abs(a - b) <= 1e-9 * max(abs(b), 1.0)

    def test_no_overflow_for_huge_values(self):
        val = dt.logsumexp([0.0, 1000.0], [0.5, 0.5])
        assert abs(val - (1000.0 + math.log(0.5))) < 1e-12

    def test_all_zero_weights_rejected(self):
        with pytest.raises(ValueError):
            dt.logsumexp([1.0, 2.0], [0.0, 0.0])

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            dt.logsumexp([1.0, 2.0], [1.1, -0.1])


class TestEvalDual:
    def test_constant_cost_separates(self, toy_1d):
        grid, nominal, marg = toy_1d
        c0, lam, eps, m = 2.0, 1.3, 0.1, 0.5
        params = toy_params(m=m, eps=eps)
        ev = dt.eval_dual(None, grid, nominal, marg, params, lam, costs=np.full(3, c0))
        z = float(marg.weights[0] @ np.exp(-marg.cost_matrix[0] / eps))
        expected = lam * m + c0 + lam * eps * math.log(z)
        assert ev.value == pytest.approx(expected, rel=1e-12)

    def test_affine_in_budget(self, toy_1d):
        grid, nominal, marg = toy_1d
        lam = 0.8
        a = dt.eval_dual(None, grid, nominal, marg, toy_params(m=0.3), lam, costs=TOY_COSTS)
        b = dt.eval_dual(None, grid, nominal, marg, toy_params(m=0.7), lam, costs=TOY_COSTS)
        assert b.value - a.value == pytest.approx(lam * 0.4, rel=1e-12)

    def test_toy_matches_naive_direct_summation(self, toy_1d):
        grid, nominal, marg = toy_1d
        lam, eps, m = 1.0, 0.1, 0.5
        ev = dt.eval_dual(None, grid, nominal, marg, toy_params(m=m, eps=eps), lam, costs=TOY_COSTS)
        nu = marg.weights[0]
        acc = 0.0
        for j in range(3):
            acc += nu[j] * math.exp((TOY_COSTS[j] - lam * marg.cost_matrix[0, j]) / (lam * eps))
        naive = lam * m + lam * eps * math.log(acc)
        assert ev.value == pytest.approx(naive, rel=1e-12)

    def test_softmax_rows_are_probabilities(self, toy_1d):
        grid, nominal, marg = toy_1d
        ev = dt.eval_dual(None, grid, nominal, marg, toy_params(), 2.0, costs=TOY_COSTS)
        assert np.all(ev.weights >= 0.0)
        assert np.allclose(ev.weights.sum(axis=1), 1.0, atol=1e-12)
        assert np.trace(ev.moments[0]) <= grid.radius**2 + 1e-12

    def test_nonpositive_lam_rejected(self, toy_1d):
        grid, nominal, marg = toy_1d
        with pytest.raises(ValueError):
            dt.eval_dual(None, grid, nominal, marg, toy_params(), 0.0, costs=TOY_COSTS)

    def test_convexity_in_lam(self, toy_1d):
        grid, nominal, marg = toy_1d
        params = toy_params()
        rng = np.random.default_rng(12)
        for _ in range(10):
            l1, l2 = sorted(rng.uniform(0.05, 20.0, 2))
            mid = 0.5 * (l1 + l2)
            f = lambda lam: dt.eval_dual(
                None, grid, nominal, marg, params, lam, costs=TOY_COSTS
            ).value
            assert f(mid) <= 0.5 * (f(l1) + f(l2)) + 1e-10


class TestLambdaDerivative:
    def test_constant_cost_derivative_is_lam_free(self, toy_1d):
        grid, nominal, marg = toy_1d
        eps, m, c0 = 0.1, 0.5, 3.0
        params = toy_params(m=m, eps=eps)
        z = float(marg.weights[0] @ np.exp(-marg.cost_matrix[0] / eps))
        expected = m + eps * math.log(z)
        for lam in (0.2, 1.0, 7.0):
            ev = dt.eval_dual(None, grid, nominal, marg, params, lam, costs=np.full(3, c0))
            assert dt.dual_lambda_derivative(ev, params) == pytest.approx(expected, rel=1e-10)

    @pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
    def test_matches_central_difference(self, toy_1d, lam):
        grid, nominal, marg = toy_1d
        params = toy_params()
        ev = dt.eval_dual(None, grid, nominal, marg, params, lam, costs=TOY_COSTS)
        analytic = dt.dual_lambda_derivative(ev, params)
        step = 1e-5 * lam
        up = dt.eval_dual(None, grid, nominal, marg, params, lam + step, costs=TOY_COSTS).value
        dn = dt.eval_dual(None, grid, nominal, marg, params, lam - step, costs=TOY_COSTS).value
        fd = (up - dn) / (2 * step)
        assert abs(analytic - fd) <= 1e-6 * max(abs(fd), 1e-12)

    def test_budget_shift_moves_derivative_exactly(self, toy_1d):
        grid, nominal, marg = toy_1d
        lam = 1.7
        pa, pb = toy_params(m=0.3), toy_params(m=0.55)
        ea = dt.eval_dual(None, grid, nominal, marg, pa, lam, costs=TOY_COSTS)
        eb = dt.eval_dual(None, grid, nominal, marg, pb, lam, costs=TOY_COSTS)
        da = dt.dual_lambda_derivative(ea, pa)
        db = dt.dual_lambda_derivative(eb, pb)
        assert db - da == pytest.approx(0.25, rel=1e-12)


class TestMinimizeLambda:
    def test_constant_cost_recovers_the_constant(self, toy_1d):
        grid, nominal, marg = toy_1d
        c0 = 2.4
        params = toy_params(m=0.5)
        lam_star, value = quiet_minimize(None, grid, nominal, marg, params, costs=np.full(3, c0))
        assert abs(value - c0) <= 1e-6 * (1 + abs(c0))
        assert lam_star <= params.lambda_bracket[0] * (1 + 1e-4)

    def test_toy_matches_primal_supremum(self, toy_1d):
        grid, nominal, marg = toy_1d
        params = toy_params(m=0.5, eps=0.1)
        lam_star, dual = quiet_minimize(None, grid, nominal, marg, params, costs=TOY_COSTS)
        skel = dt.DiscreteTransportProblem(
            [1.0], marg.cost_matrix, marg.log_weights, params.entropic_epsilon
        )
        primal = dt.primal_supremum(TOY_COSTS, skel, 0.5)
        assert abs(dual - primal.value) <= 1e-4 * abs(primal.value)

    def test_budget_doubling_never_decreases_value(self, toy_1d):
        grid, nominal, marg = toy_1d
        values = []
        for m in (0.1, 0.2, 0.4, 0.8):
            _, v = quiet_minimize(None, grid, nominal, marg, toy_params(m=m), costs=TOY_COSTS)
            values.append(v)
        assert np.all(np.diff(values) >= -1e-10)

    def test_zero_budget_rejected(self, toy_1d):
        grid, nominal, marg = toy_1d
        with pytest.raises(ValueError):
            dt.minimize_lambda(None, grid, nominal, marg, toy_params(m=0.0), costs=TOY_COSTS)

    def test_tiny_budget_warns_possibly_infeasible(self, toy_1d):
        grid, nominal, marg = toy_1d
        params = toy_params(m=1e-4)  # below 10 * sigma = 1
        with pytest.warns(RuntimeWarning, match="infeasible"):
            dt.minimize_lambda(None, grid, nominal, marg, params, costs=TOY_COSTS)


class TestWorstCaseLimit:
    def test_identity_form_on_a_dense_ball(self):
        grid = dt.build_load_grid(3.0, 0.1)
        costs = np.einsum("jk,jk->j", grid.nodes, grid.nodes)  # M = I
        wc = dt.worst_case_limit(None, grid, costs=costs)
        assert abs(wc - 9.0) <= 2 * 3.0 * 0.1 + 0.1**2

    def test_anisotropic_form_aligns_with_the_stiff_axis(self):
        grid = dt.build_load_grid(2.0, 0.05)
        m = np.diag([4.0, 1.0])
        costs = np.einsum("jk,kl,jl->j", grid.nodes, m, grid.nodes)
        best = grid.nodes[np.argmax(costs)]
        assert abs(best[0]) > abs(best[1])

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(21)
        a = rng.standard_normal((2, 2))
        m = a @ a.T
        grid = dt.build_load_grid(1.5, 0.3)
        costs = np.einsum("jk,kl,jl->j", grid.nodes, m, grid.nodes)
        wc = dt.worst_case_limit(None, grid, costs=costs)
        scan = max(float(z @ m @ z) for z in grid.nodes)
        assert wc == pytest.approx(scan, rel=1e-14)


def hard_primal_by_vertex_enumeration(costs, transport, budget):
    """Exact LP solution of sup f.q over {c.q <= budget} on the simplex.

    With one nominal atom the (unregularized) transport cost is linear in q,
    so the optimum sits at a vertex: a single atom, or a two-atom mixture on
    the budget facet.
    """
    best = -np.inf
    k = len(costs)
    for j in range(k):
        if transport[j] <= budget:
            best = max(best, costs[j])
    for j in range(k):
        for l in range(k):
            if transport[j] == transport[l]:
                continue
            t = (budget - transport[l]) / (transport[j] - transport[l])
            if 0.0 <= t <= 1.0:
                best = max(best, t * costs[j] + (1 - t) * costs[l])
    return best


class TestHardDual:
    def test_zero_budget_is_the_nominal_cost(self, toy_1d):
        grid, nominal, marg = toy_1d
        value = dt.hard_dual(None, grid, nominal, 0.0, costs=TOY_COSTS)
        assert value == pytest.approx(0.0, abs=1e-12)  # cost at the sample node

    def test_huge_budget_is_the_worst_case(self, toy_1d):
        grid, nominal, marg = toy_1d
        budget = 4 * grid.radius**2
        value = dt.hard_dual(None, grid, nominal, budget, costs=TOY_COSTS)
        wc = dt.worst_case_limit(None, grid, costs=TOY_COSTS)
        assert value == pytest.approx(wc, rel=1e-6)

    def test_intermediate_budget_matches_lp_vertex_oracle(self, toy_1d):
        grid, nominal, marg = toy_1d
        for budget in (0.5, 1.0, 2.0):
            value = dt.hard_dual(None, grid, nominal, budget, costs=TOY_COSTS)
            primal = hard_primal_by_vertex_enumeration(
                TOY_COSTS, marg.cost_matrix[0], budget
            )
            assert value == pytest.approx(primal, rel=1e-6)
        for budget in (0.5, 1.0, 2.0):
            value = dt.hard_dual(None, grid, nominal, budget, costs=TOY_COSTS)
            nominal_cost = TOY_COSTS[nominal.node_indices[0]]
            assert value >= nominal_cost - 1e-12


class TestDensityGradient:
    def test_p_one_gradient_has_the_linear_form(self, hooke, small_bridge, coarse_load_setup):
        grid, nominal, marg = coarse_load_setup
        simp = dt.SimpParams(penalization=1.0, filter_radius=0.0)
        rng = np.random.default_rng(3)
        h = dt.DensityField(small_bridge, rng.uniform(0.2, 0.9, 100))
        form = make_form(small_bridge, hooke, h.values, simp=simp)
        params = toy_params(m=0.25, eps=1e-2)
        lam_star, _ = quiet_minimize(form, grid, nominal, marg, params)
        ev = dt.eval_dual(form, grid, nominal, marg, params, lam_star)
        grad = dt.density_gradient(ev, form, simp, h)
        expected = -(1 - simp.void_fraction) * dt.compliance_gradient_fields(
            form, ev.mean_moment()
        )
        assert np.allclose(grad, expected, rtol=1e-12)

    def test_matches_naive_per_node_accumulation(self, hooke, toy_1d):
        mesh = dt.bridge_mesh(6, 6)
        grid, nominal, marg = toy_1d
        simp = dt.SimpParams(penalization=3.0, filter_radius=1.5)
        rng = np.random.default_rng(7)
        h = dt.DensityField(mesh, rng.uniform(0.3, 0.9, 36))
        form = make_form(mesh, hooke, h.values, simp=simp)
        params = toy_params(m=0.5, eps=0.1)
        ev = dt.eval_dual(form, grid, nominal, marg, params, 2.0)
        grad = dt.density_gradient(ev, form, simp, h)

        physical = dt.density_filter(h, simp.filter_radius)
        slope = dt.simp_scale_derivative(physical, simp)
        ke = element_stiffness(hooke, mesh.hx, mesh.hy)
        u1, u2 = form.u_basis
        naive = np.zeros(mesh.n_elements)
        for i in range(nominal.n_samples):
            for j in range(grid.n_nodes):
                zj = grid.nodes[j]
                uj = zj[0] * u1.dofs + zj[1] * u2.dofs
                ue = uj[mesh.element_dofs()]
                dens = np.einsum("ei,ij,ej->e", ue, ke, ue) / mesh.element_area
                naive += ev.weights[i, j] * (-slope * dens) / nominal.n_samples
        naive = density_filter_transpose(naive, mesh, simp.filter_radius)
        assert np.allclose(grad, naive, rtol=1e-10, atol=1e-14)

    def test_directional_finite_differences(self, hooke, small_bridge, coarse_load_setup):
        grid, nominal, marg = coarse_load_setup
        simp = dt.SimpParams(penalization=3.0, filter_radius=1.5)
        rng = np.random.default_rng(31)
        h = dt.DensityField(small_bridge, rng.uniform(0.2, 0.8, 100))
        params = toy_params(m=0.25, eps=1e-2)
        form = make_form(small_bridge, hooke, h.values, simp=simp)
        lam_star, _ = quiet_minimize(form, grid, nominal, marg, params)
        ev = dt.eval_dual(form, grid, nominal, marg, params, lam_star)
        grad = dt.density_gradient(ev, form, simp, h)
        assert np.all(grad <= 0.0)

        def objective(values):
            f = make_form(small_bridge, hooke, np.clip(values, 0, 1), simp=simp)
            return dt.eval_dual(f, grid, nominal, marg, params, lam_star).value

        area = small_bridge.element_area
        for _ in range(5):
            direction = rng.standard_normal(100)
            t = 1e-6
            fd = (objective(h.values + t * direction) - objective(h.values - t * direction)) / (
                2 * t
            )
            adjoint = float((grad * direction).sum() * area)
            assert abs(fd - adjoint) <= 1e-4 * max(abs(fd), 1e-12)

    def test_mismatched_mesh_rejected(self, hooke, toy_1d):
        grid, nominal, marg = toy_1d
        mesh_a = dt.bridge_mesh(4, 4)
        mesh_b = dt.bridge_mesh(5, 4)
        form = dt.compliance_form(mesh_a, hooke, np.ones(16))
        ev = dt.eval_dual(form, grid, nominal, marg, toy_params(), 1.0)
        with pytest.raises(ValueError):
            dt.density_gradient(
                ev, form, dt.SimpParams(), dt.DensityField(mesh_b, np.full(20, 0.5))
            )


class TestValueOrdering:
    def test_nominal_dual_worst_case_sandwich(self, hooke, coarse_load_setup):
        grid, nominal, marg = coarse_load_setup
        mesh = dt.bridge_mesh(8, 8)
        rng = np.random.default_rng(40)
        form = make_form(mesh, hooke, rng.uniform(0.15, 0.9, 64))
        params = toy_params(m=0.25, eps=1e-2)
        _, dual = quiet_minimize(form, grid, nominal, marg, params)
        nominal_cost = dt.nominal_evaluation(form, nominal).value
        worst = dt.worst_case_limit(form, grid)
        assert nominal_cost <= dual + 1e-6
        assert dual <= worst + 1e-8

    def test_value_monotone_in_budget(self, hooke, coarse_load_setup):
        grid, nominal, marg = coarse_load_setup
        mesh = dt.bridge_mesh(8, 8)
        form = make_form(mesh, hooke, np.full(64, 0.4))
        values = []
        for m in (0.1, 0.25, 0.5, 1.0):
            _, v = quiet_minimize(form, grid, nominal, marg, toy_params(m=m, eps=1e-2))
            values.append(v)
        assert np.all(np.diff(values) >= -1e-9)
