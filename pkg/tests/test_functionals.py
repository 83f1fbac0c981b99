import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gklab.basis import TestFunction, space_matrix, time_matrix
from gklab.fields import GridError, Trajectory, cell_centers
from gklab.functionals import (PairingProblem, RateError, RateReport, energy_bound_check,
                               energy_direct, energy_variational, eval_JG, f_cost, held_constant_rate,
                               homogeneous_control, invert_control, rate_explicit_smooth,
                               rate_homogeneous, rate_variational)
from gklab.pde import PdeParams, control_values, solve_cauchy, solve_controlled
from gklab.rates import make_double_well, make_pair
from oracles import held_rate, ode_path

HELD_QUARTER = 1 - math.sqrt(3) / 2  # (sqrt(3/4) - sqrt(1/4))^2


def sin_path(J=256, K=4, T=1.0):
    return Trajectory.held((1 + np.sin(2 * np.pi * cell_centers(J))) / 2, T, K)


def gamma_sq(J):
    return np.clip((1 + np.sin(2 * np.pi * cell_centers(J))) ** 2 / 4, 0, 1)


@pytest.fixture(scope="module")
def hydro_path(const_model):
    J = 64
    return solve_cauchy(gamma_sq(J), const_model, 1.0, PdeParams(J=J, frames=1000))


@pytest.fixture(scope="module")
def controlled(const_model):
    J = 64
    g = 0.5 + 0.2 * np.sin(2 * np.pi * cell_centers(J))
    H = lambda t, u: 0.8 * np.sin(2 * np.pi * u + 1.0) * np.cos(2 * t) + 0.2 * np.cos(4 * np.pi * u)  # noqa: E731,E501
    return solve_controlled(g, const_model, H, 1.0, PdeParams(J=J, frames=1000)), H


# -------------------------------------------------------------- energy
def test_energy_direct_examples():
    assert energy_direct(Trajectory.held(np.full(16, 0.3), 1.0, 4)) == 0.0
    assert energy_direct(sin_path()) == pytest.approx(math.pi ** 2 / 2, abs=1e-3)
    pi = sin_path(64)
    doubled = Trajectory(2 * pi.times, pi.frames)
    assert energy_direct(doubled) == 2 * energy_direct(pi)


def test_energy_variational_examples():
    pi = sin_path(256)
    direct = energy_direct(pi)
    assert energy_variational(pi, K_s=1, K_t=2) >= 0.999 * math.pi ** 2 / 2
    vals = [energy_variational(pi, K_s=k, K_t=2) for k in (1, 2, 4, 8)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert max(vals) <= direct + 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_energy_variational_below_direct(seed):
    rng = np.random.default_rng(seed)
    J, K = 32, 8
    frames = np.clip(0.5 + 0.1 * rng.standard_normal((K + 1, J)).cumsum(axis=1) / 4, 0, 1)
    pi = Trajectory(np.linspace(0, 1, K + 1), frames)
    assert energy_variational(pi, 4, 4) <= energy_direct(pi) + 1e-6


# ---------------------------------------------------------- pairing
def test_pairing_zero_test_function(pair_model):
    pi = sin_path(32, 8)
    assert eval_JG(pi, 0.0, pi.frames[0], pair_model) == 0.0


def test_pairing_hand_value(const_model):
    pi = Trajectory.held(np.full(32, 0.5), 1.0, 16)
    val = eval_JG(pi, 1.0, np.full(32, 0.5), const_model)
    assert val == pytest.approx(-(math.e + 1 / math.e - 2) / 2, abs=1e-6)


def test_pairing_nonpositive_on_solution(const_model, hydro_path):
    rng = np.random.default_rng(0)
    for _ in range(5):
        coef = rng.normal(scale=0.5, size=(5, 7))
        G = TestFunction(coef, 1.0)
        assert eval_JG(hydro_path, G, hydro_path.frames[0], const_model) <= 1e-6


def test_pairing_grid_mismatch(const_model):
    pi = sin_path(16, 4)
    with pytest.raises(GridError):
        eval_JG(pi, np.zeros((3, 16)), pi.frames[0], const_model)


def _random_problem(seed, m, J=16, K=8, K_s=2, K_t=3):
    rng = np.random.default_rng(seed)
    base = 0.5 + 0.3 * np.sin(2 * np.pi * (cell_centers(J) + rng.uniform()))
    frames = np.clip(base[None, :] + 0.05 * rng.standard_normal((K + 1, J)), 0.01, 0.99)
    pi = Trajectory(np.linspace(0, 1, K + 1), frames)
    return PairingProblem(pi, frames[0], m, K_s, K_t), rng


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_concavity_certificate(seed, theta):
    prob, rng = _random_problem(seed, make_pair(2.0))
    G1, G2 = rng.normal(size=(2, prob.pi.K + 1, prob.pi.J))
    mix = prob.value_grid(theta * G1 + (1 - theta) * G2)
    assert mix >= theta * prob.value_grid(G1) + (1 - theta) * prob.value_grid(G2) - 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    prob, rng = _random_problem(seed, make_double_well(1, 4))
    th = 0.3 * rng.standard_normal(int(np.prod(prob.shape)))
    g = prob.grad(th)
    eps = 1e-6
    fd = np.array([(prob.value(th + eps * e) - prob.value(th - eps * e)) / (2 * eps)
                   for e in np.eye(th.size)])
    assert np.max(np.abs(g - fd)) <= 1e-5 * max(1.0, np.max(np.abs(g)))


def test_hessian_matches_gradient_differences(const_model):
    prob, rng = _random_problem(3, const_model)
    th = 0.2 * rng.standard_normal(int(np.prod(prob.shape)))
    H = prob.hess(th)
    eps = 1e-6
    fd = np.column_stack([(prob.grad(th + eps * e) - prob.grad(th - eps * e)) / (2 * eps)
                          for e in np.eye(th.size)])
    np.testing.assert_allclose(H, fd, atol=1e-6 * np.abs(H).max())


# ------------------------------------------------------- variational
def test_rate_zero_on_solution(const_model, hydro_path):
    rep = rate_variational(hydro_path, hydro_path.frames[0], const_model, 8, 16)
    assert rep.value < 1e-4 and rep.route == "variational"


def test_rate_held_quarter(const_model):
    pi = Trajectory.held(np.full(32, 0.25), 1.0, 32)
    rep = rate_variational(pi, None, const_model, 8, 16)
    assert abs(rep.value - HELD_QUARTER) / HELD_QUARTER < 0.02
    assert HELD_QUARTER == pytest.approx(0.13397, abs=1e-5)


def test_variational_nested_bases_monotone(const_model, controlled):
    pi, _ = controlled
    vals = [rate_variational(pi, pi.frames[0], const_model, ks, kt).value
            for ks, kt in ((1, 2), (2, 4), (4, 8))]
    assert vals[0] <= vals[1] + 1e-9 <= vals[2] + 2e-9


def test_variational_warns_for_non_concave(pair_model):
    pi = Trajectory.held(np.full(16, 0.4), 1.0, 8)
    with pytest.warns(RuntimeWarning, match="concave"):
        rate_variational(pi, None, pair_model, 1, 2)


def test_rate_report_clamp():
    assert RateReport(-1e-10, "x").value == 0.0
    rep = RateReport(-1e-3, "x")
    assert rep.value == -1e-3 and "defect" in rep.details


# ------------------------------------------------------------ explicit
def test_explicit_zero_on_solution(const_model):
    J = 64
    g = 0.5 + 0.2 * np.sin(2 * np.pi * cell_centers(J))
    sol = solve_cauchy(g, const_model, 1.0, PdeParams(J=J, frames=1000))
    rep = rate_explicit_smooth(sol, const_model)
    assert rep.value < 1e-8
    assert np.max(np.abs(rep.maximizer)) < 1e-4


@pytest.mark.parametrize("r", [0.25, 0.6])
def test_explicit_held_constant(pair_model, r):
    pi = Trajectory.held(np.full(16, r), 1.0, 8)
    rep = rate_explicit_smooth(pi, pair_model)
    B, D = float(pair_model.B(r)), float(pair_model.D(r))
    np.testing.assert_allclose(np.exp(rep.maximizer), math.sqrt(D / B), rtol=1e-9)
    assert rep.value == pytest.approx(held_rate(B, D), rel=1e-9)


def test_explicit_round_trip(const_model, controlled):
    pi, H = controlled
    rep = rate_explicit_smooth(pi, const_model)
    Ht = control_values(H, pi.times, pi.J)
    assert np.max(np.abs(rep.maximizer - Ht)) < 1e-3
    var = rate_variational(pi, pi.frames[0], const_model, 8, 16)
    assert abs(var.value - rep.value) / rep.value < 0.03


def test_explicit_rejects_boundary_profiles(const_model):
    pi = Trajectory.held(np.linspace(0, 1, 16), 1.0, 4)
    with pytest.raises(RateError, match="rate_variational"):
        invert_control(pi, const_model)


def test_f_cost_stable():
    a = np.array([-1e-9, 1e-5, -2e-4, 0.5, -3.0])
    ref = np.array([float(1 - math.exp(x) + x * math.exp(x)) for x in a])
    series = a ** 2 / 2 + a ** 3 / 3
    np.testing.assert_allclose(f_cost(a)[:3], series[:3], rtol=1e-6)
    np.testing.assert_allclose(f_cost(a)[3:], ref[3:], rtol=1e-12)
    assert np.all(f_cost(np.linspace(-5, 5, 101)) >= 0)


# --------------------------------------------------------- homogeneous
def test_homogeneous_zero_on_ode(const_model):
    t = np.linspace(0, 1, 401)
    r = ode_path(lambda y: 1 - 2 * y, 0.1, t)
    assert rate_homogeneous(t, r, const_model) < 1e-8


def test_homogeneous_held_quarter(const_model):
    t = np.linspace(0, 1, 11)
    assert rate_homogeneous(t, np.full(11, 0.25), const_model) == pytest.approx(HELD_QUARTER,
                                                                                abs=1e-12)
    assert held_constant_rate(0.25, const_model) == pytest.approx(HELD_QUARTER, abs=1e-15)


def test_homogeneous_optimizer_formula(pair_model):
    r, rdot = 0.3, 0.2
    g = homogeneous_control(np.array([r]), np.array([rdot]), pair_model)[0]
    B, D = float(pair_model.B(r)), float(pair_model.D(r))
    assert math.exp(g) == pytest.approx((rdot + math.sqrt(rdot ** 2 + 4 * B * D)) / (2 * B))


def test_homogeneous_route_agrees_with_constant_basis(const_model):
    K = 400
    t = np.linspace(0, 1, K + 1)
    r = 0.4 + 0.15 * np.sin(3 * t)
    pi = Trajectory(t, np.tile(r[:, None], (1, 8)))
    hom = rate_homogeneous(t, r, const_model)
    var = rate_variational(pi, pi.frames[0], const_model, K_s=0, K_t=32).value
    assert abs(var - hom) / hom < 0.01


def test_homogeneous_rejects_boundary(const_model):
    with pytest.raises(RateError):
        rate_homogeneous(np.linspace(0, 1, 3), np.array([0.0, 0.1, 0.2]), const_model)


# -------------------------------------------------------- energy bound
def test_energy_bound_constant_half(const_model):
    pi = Trajectory.held(np.full(16, 0.5), 1.0, 8)
    out = energy_bound_check(pi, pi.frames[0], const_model, 0.01)
    assert out["lhs"] == 0.0 and out["ratio"] == 0.0


def test_energy_bound_finite_on_solution(const_model):
    J = 64
    g = 0.5 + 0.3 * np.sin(2 * np.pi * cell_centers(J))
    sol = solve_cauchy(g, const_model, 1.0, PdeParams(J=J, frames=200))
    ratios = [energy_bound_check(sol, g, const_model, a, rate=0.0)["ratio"]
              for a in (0.1, 0.01, 0.001)]
    assert all(np.isfinite(ratios)) and ratios[0] <= ratios[1] <= ratios[2]
    # limit a -> 0 is the chi-weighted energy of an interior solution
    assert ratios[2] < 1.2 * ratios[1]


def test_energy_bound_rejects_bad_regularization(const_model):
    pi = Trajectory.held(np.full(16, 0.5), 1.0, 8)
    with pytest.raises(ValueError):
        energy_bound_check(pi, None, const_model, 0.0)


# ---------------------------------------------------------------- basis
def test_basis_derivatives_match_finite_differences():
    rng = np.random.default_rng(0)
    G = TestFunction(rng.normal(size=(5, 7)), 2.0)
    t = np.array([0.13, 0.77, 1.31])
    u = np.array([0.2, 0.55, 0.9])
    h = 1e-6
    np.testing.assert_allclose(G.grad(t, u), (G(t, u + h) - G(t, u - h)) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(G.lap(t, u), (G.grad(t, u + h) - G.grad(t, u - h)) / (2 * h),
                               rtol=1e-6)
    # off the hat nodes the time derivative is the exact slope
    np.testing.assert_allclose(G.dt(t, u), (G(t + h, u) - G(t - h, u)) / (2 * h), rtol=1e-6)


def test_basis_matrices_shapes():
    assert space_matrix(np.linspace(0, 1, 5), 3).shape == (5, 7)
    T = time_matrix(np.linspace(0, 1, 5), 4, 1.0)
    np.testing.assert_allclose(T.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        TestFunction(np.full((2, 3), np.nan), 1.0)
