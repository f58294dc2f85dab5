import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scalar_model
from hybrid_rclf.hybrid_core import flow_allowed, gradient_rel_error
from hybrid_rclf.pendulum import (PendulumParams, closed_form_law, lambda_const, make_pendulum,
                                  pendulum_rclf, psi_terms)
from hybrid_rclf.rclf import (GridSpec, InfeasibleInputError, certify_rclf, flow_sup, gamma_flow,
                              gamma_jump, jump_infsup, min_norm_flow, min_norm_jump,
                              minimality_oracle, quadratic_rclf, residual_contains, upsilon)

HP = math.pi / 2
flow_pts = st.tuples(st.floats(0.0, HP), st.floats(-3.0, 3.0))


def test_residual_contains_examples(rclf):
    assert residual_contains(rclf, 0.0, (0.0, 0.0))
    assert not residual_contains(rclf, 1.0, (1.0, 0.0))
    assert residual_contains(rclf, 2.0, (1.0, 0.0))
    with pytest.raises(ValueError):
        residual_contains(rclf, -1.0, (0.0, 0.0))


def test_gamma_flow_off_set_is_minus_inf(model, rclf):
    x = np.array([-0.5, 1.0])
    assert gamma_flow(model, rclf, x, np.array([0.0, 0.0]), 0.0) == -math.inf


def test_gamma_flow_matches_psi_expansion():
    # λ > 0 so the rate term is exercised
    p = PendulumParams(e1=0.6)
    m, r = make_pendulum(p), pendulum_rclf(p)
    lam = lambda_const(p).value
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = np.array([rng.uniform(0, HP), rng.uniform(-3, 3)])
        u = np.array([rng.uniform(-5, 5), rng.uniform(-HP, 0.0)])
        psi0, psi0w, psi1 = psi_terms(p, x, lam)
        got = gamma_flow(m, r, x, u, float(r.V(x)))
        assert got == pytest.approx(psi0 + psi0w + psi1 * u[0], abs=1e-9, rel=1e-12)


def test_gamma_at_origin_is_zero(model, rclf):
    z = np.zeros(2)
    assert gamma_flow(model, rclf, z, np.zeros(2), 0.0) == 0.0
    assert gamma_jump(model, rclf, z, np.zeros(1), 0.0) == 0.0


def test_gamma_jump_examples(params, model, rclf):
    assert gamma_jump(model, rclf, np.array([0.3, -1.0]), np.zeros(1), 0.0) == -math.inf
    x1, x2 = -0.2, -1.0
    rho = params.rho_tilde
    e0 = params.restitution(0.0)
    lam = lambda_const(params).value

    def display(w):
        return (-2 * x1 ** 2 * (1 - (1 + rho) ** 2) - x2 ** 2 * (1 - (e0 + w) ** 2)
                - 2 * x1 * x2 * (1 + (1 + rho) * (e0 + w)) + lam * (x1 ** 2 + x2 ** 2))

    oracle = max(display(w) for w in (0.0, params.wd_max))
    x = np.array([x1, x2])
    got = gamma_jump(model, rclf, x, np.zeros(1), float(rclf.V(x)))
    assert got == pytest.approx(oracle, abs=1e-12)


def test_jump_energy_identity_at_zero_input(params, model, rclf):
    rng = np.random.default_rng(2)
    rho, e = params.rho_tilde, float(params.restitution(0.0))
    for _ in range(200):
        x1, x2, w = rng.uniform(-HP, 0), rng.uniform(-3, 0), rng.uniform(0, params.wd_max)
        x = np.array([x1, x2])
        xp = model.jump_map(x, np.zeros(1), np.array([w]))
        got = float(rclf.V(xp) - rclf.V(x))
        disp = (-2 * x1 ** 2 * (1 - (1 + rho) ** 2) - x2 ** 2 * (1 - (e + w) ** 2)
                - 2 * x1 * x2 * (1 + (1 + rho) * (e + w)))
        assert got == pytest.approx(disp, abs=1e-9)


def test_upsilon_on_manifold_drops_input_term(params, model, rclf):
    x = np.array([1.0, -1.0])
    psi0, psi0w, _ = psi_terms(params, x, lambda_const(params).value)
    for u1 in (-3.0, 0.0, 7.0):
        assert upsilon(model, rclf, "flow", x, np.array([u1, 0.0])) == pytest.approx(psi0 + psi0w)


def test_upsilon_below_r_star_evaluates_at_r_star(params, model):
    r = pendulum_rclf(params, r_star=0.5)
    x = np.array([0.1, 0.1])  # V = 0.05 < r*
    u = np.zeros(2)
    assert upsilon(model, r, "flow", x, u) == gamma_flow(model, r, x, u, 0.5) == -math.inf
    x = np.array([1.0, 0.0])
    assert upsilon(model, r, "flow", x, u) == gamma_flow(model, r, x, u, float(r.V(x)))


def test_min_norm_flow_branches(params, model, rclf):
    lam = lambda_const(params).value
    x = np.array([0.5, 0.5])
    psi0, psi0w, psi1 = psi_terms(params, x, lam)
    u = min_norm_flow(model, rclf, x)
    assert u[0] == pytest.approx(-(psi0 + psi0w) / psi1, abs=1e-9)
    assert u[1] == 0.0
    # gravity alone decreases V at rest with zero disturbance design
    p0 = params.with_design_bound(0.0)
    m0, r0 = make_pendulum(p0), pendulum_rclf(p0)
    x = np.array([0.5, 0.0])
    assert sum(psi_terms(p0, x, 0.0)[:2]) <= 0
    np.testing.assert_array_equal(min_norm_flow(m0, r0, x), [0.0, 0.0])


def test_min_norm_flow_outside_projection_raises(model, rclf):
    with pytest.raises(ValueError):
        min_norm_flow(model, rclf, np.array([2.0, 0.0]))


def test_min_norm_flow_infeasible_carries_best():
    m = scalar_model(flow_map=lambda x, u, w: np.ones_like(x))
    r = quadratic_rclf([[1.0]], rate=0.0)
    with pytest.raises(InfeasibleInputError) as err:
        min_norm_flow(m, r, np.array([1.0]))
    assert err.value.best > 0


def test_min_norm_jump_examples(model, rclf):
    for x in ([-0.2, -1.0], [-1.0, -0.1], [0.0, -2.0]):
        np.testing.assert_array_equal(min_norm_jump(model, rclf, np.array(x)), [0.0])
    np.testing.assert_array_equal(min_norm_jump(model, rclf, np.zeros(2)), [0.0])


def _interval_model():
    # V(G) - V(x) <= 0 at x = 1 exactly for u in [0.4, 0.7]
    g = lambda x, u, w: np.asarray(x) * (1 + 4 * (u - 0.4) * (u - 0.7))
    return scalar_model(jump_map=g), quadratic_rclf([[1.0]], rate=0.0)


def test_min_norm_jump_scans_to_feasible_interval():
    m, r = _interval_model()
    u = min_norm_jump(m, r, np.array([1.0]))
    assert u[0] == pytest.approx(0.4, abs=1e-6)
    grid = np.linspace(-1, 1, 20001)[:, None]
    oracle = minimality_oracle(m, r, "jump", np.array([1.0]), grid)
    assert abs(oracle[0] - u[0]) <= 1e-4 + 1e-6


def test_minimality_oracle_examples(params, model, rclf):
    x = np.array([0.5, 0.5])
    ustar = closed_form_law(params, x).u_c
    grid = np.column_stack([np.linspace(-50, 50, 2001), np.zeros(2001)])
    got = minimality_oracle(model, rclf, "flow", x, grid)
    assert abs(got[0] - ustar[0]) <= 0.05
    coarse = minimality_oracle(model, rclf, "flow", x, grid[::4])
    assert np.linalg.norm(got) <= np.linalg.norm(coarse)
    m, r = _interval_model()
    assert minimality_oracle(m, r, "jump", np.array([1.0]), np.array([[0.0], [0.9]])) is None


@settings(max_examples=100, deadline=None)
@given(flow_pts)
def test_min_norm_flow_feasible_and_in_box(x):
    p = PendulumParams()
    m, r = make_pendulum(p), pendulum_rclf(p)
    x = np.array(x)
    u = min_norm_flow(m, r, x)
    assert m.input_box_flow(x).contains(u)
    if float(r.V(x)) <= r.v_zero_tol:
        return  # invariance feedback region
    assert upsilon(m, r, "flow", x, u) <= 1e-9 * (1 + float(r.V(x)))


@settings(max_examples=60, deadline=None)
@given(flow_pts)
def test_closed_loop_decrease_with_half_rate(x):
    p = PendulumParams(e1=0.6)
    m = make_pendulum(p)
    r = pendulum_rclf(p, gamma_fraction=0.5)
    x = np.array(x)
    if float(r.V(x)) <= r.v_zero_tol:
        return
    u = min_norm_flow(m, r, x)
    sup, _ = flow_sup(m, r, x, u)
    assert sup <= -0.5 * float(r.alpha3(np.linalg.norm(x))) + 1e-8


@settings(max_examples=100, deadline=None)
@given(flow_pts, st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(-5, 5))
def test_gamma_monotone_in_disturbance_box(x, wa, wb, u1):
    lo, hi = min(wa, wb), max(wa, wb)
    pl, ph = PendulumParams().with_design_bound(lo), PendulumParams().with_design_bound(hi)
    x = np.array(x)
    u = np.array([u1, 0.0])
    gl = gamma_flow(make_pendulum(pl), pendulum_rclf(pl), x, u, 0.0)
    gh = gamma_flow(make_pendulum(ph), pendulum_rclf(ph), x, u, 0.0)
    assert gl <= gh + 1e-12


@settings(max_examples=100, deadline=None)
@given(flow_pts, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_torque_monotone_in_design_bound(x, wa, wb):
    lo, hi = min(wa, wb), max(wa, wb)
    x = np.array(x)
    if x[0] + x[1] == 0:
        return
    ul = closed_form_law(PendulumParams().with_design_bound(lo), x).u_c[0]
    uh = closed_form_law(PendulumParams().with_design_bound(hi), x).u_c[0]
    assert abs(ul) <= abs(uh) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(-2, 2), st.floats(-3, 3), st.floats(-3, 3), st.floats(-2, 0.5), st.floats(0, 3))
def test_gamma_minus_inf_exactly_off_delta(x1, x2, u1, mu, r):
    p = PendulumParams()
    m, rc = make_pendulum(p), pendulum_rclf(p)
    x, u = np.array([x1, x2]), np.array([u1, mu])
    g = gamma_flow(m, rc, x, u, r)
    inside = flow_allowed(m, x, u, np.zeros(2)) and float(rc.V(x)) >= r
    assert (g == -math.inf) == (not inside)


def test_gradV_matches_finite_differences(rclf):
    pts = np.random.default_rng(3).uniform([-HP, -3], [HP, 3], size=(1000, 2))
    assert gradient_rel_error(rclf.V, rclf.gradV, pts) <= 1e-6


def test_quadratic_rclf_degenerate_flag():
    assert quadratic_rclf(np.eye(2), 0.0).degenerate
    assert not quadratic_rclf(np.eye(2), 0.1).degenerate
    with pytest.raises(ValueError):
        quadratic_rclf([[1.0, 2.0], [0.0, 1.0]], 0.1)


def test_certify_small_grid_passes_with_flag(model, rclf):
    rep = certify_rclf(model, rclf, GridSpec(((-HP, HP), (-3, 3)), (41, 41)))
    assert rep.passed
    assert rep.flags == ("degenerate_rate",)
    d = rep.to_dict()
    assert set(d) == {"condition", "points_checked", "violations", "worst_margin", "flags", "details"}


def test_certify_corrupted_V_fails():
    p = PendulumParams(e1=0.6)
    r = pendulum_rclf(p, P=np.eye(2))
    rep = certify_rclf(make_pendulum(p), r, GridSpec(((-HP, HP), (-3, 3)), (41, 41)))
    assert not rep.passed
    assert rep.worst_margin < 0


def test_jump_infsup_argmin_at_lower_corner(params, model, rclf):
    x = np.array([[-0.4, -1.0], [-1.2, -0.5]])
    _, args = jump_infsup(model, rclf, x)
    assert np.all(np.isfinite(args))
