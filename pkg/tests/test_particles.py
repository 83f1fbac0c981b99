import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gklab.fields import EmpiricalMeasure, measure_distance
from gklab.particles import (Configuration, SimParams, SimulationError, event_rates,
                             exact_stationary_small, generator_matrix, kmc_step, make_rng,
                             occupation_histogram, sample_profile_configuration,
                             simulate_trajectory, stationary_samples)
from gklab.rates import make_double_well
from oracles import (binomial_two_sided_tail, constant_profile_distance, dense_generator,
                     stationary_dense)


# ------------------------------------------------------------ sampling
def test_degenerate_profiles():
    rng = make_rng(0)
    ones = sample_profile_configuration(lambda u: np.ones_like(u), 50, rng)
    assert ones.particle_count == 50
    assert EmpiricalMeasure.from_configuration(ones.occupancy).mass == 1.0
    assert sample_profile_configuration(np.zeros(10), 50, rng).particle_count == 0


def test_half_profile_mass_concentrates():
    N, eps = 10_000, 0.02
    # the exact binomial tail guarantees the stated probability
    assert binomial_two_sided_tail(N, 0.5, eps) < 0.01
    rng = make_rng(11)
    masses = [sample_profile_configuration(lambda u: 0.5 + 0 * u, N, rng).particle_count / N
              for _ in range(100)]
    assert max(abs(m - 0.5) for m in masses) < eps


def test_profile_out_of_range_rejected():
    with pytest.raises(SimulationError):
        sample_profile_configuration(np.array([0.5, 1.2]), 10, make_rng(0))


def test_pairing_law_of_large_numbers():
    rng = make_rng(3)
    eta = sample_profile_configuration(lambda u: 0.5 + 0.3 * np.sin(2 * np.pi * u), 200_000, rng)
    pi = EmpiricalMeasure.from_configuration(eta.occupancy)
    # <pi, sin 2 pi u> -> int 0.3 sin^2 = 0.15
    assert abs(pi.pair(lambda u: np.sin(2 * np.pi * u)) - 0.15) < 0.01


# --------------------------------------------------------------- kmc step
def test_full_configuration_only_flips(const_model):
    N = 20
    eta = Configuration(np.ones(N, dtype=np.int64))
    bonds, flips = event_rates(eta, const_model)
    assert bonds.sum() == 0.0 and np.all(flips == 1.0)
    rng = make_rng(5)
    waits, sites = [], []
    for _ in range(4000):
        new, w = kmc_step(eta, const_model, N, rng)
        waits.append(w)
        sites.append(int(np.flatnonzero(new.occupancy == 0)[0]))
    se = (1 / N) / math.sqrt(len(waits))
    assert abs(np.mean(waits) - 1 / N) < 4 * se
    counts = np.bincount(sites, minlength=N)
    # chi-square with N-1 dof, generous bound
    chi2 = ((counts - 200) ** 2 / 200).sum()
    assert chi2 < 50


def test_single_particle_walk_conserves_count(const_model):
    N = 16
    occ = np.zeros(N, dtype=np.int64)
    occ[3] = 1
    eta = Configuration(occ)
    rng = make_rng(1)
    total_wait = 0.0
    for _ in range(500):
        eta, w = kmc_step(eta, const_model, N, rng, glauber=False)
        total_wait += w
        assert eta.particle_count == 1
    # two discordant bonds at rate N^2/2 each
    assert total_wait / 500 == pytest.approx(1 / N ** 2, rel=0.15)


def test_three_site_rates_and_selection(const_model):
    eta = Configuration(np.array([1, 0, 0]))
    bonds, flips = event_rates(eta, const_model, 3)
    assert bonds.sum() + flips.sum() == 12.0
    assert sorted(bonds) == [0.0, 4.5, 4.5]
    rng = make_rng(9)
    n = 20_000
    exchanges = sum(kmc_step(eta, const_model, 3, rng)[0].particle_count == 1
                    for _ in range(n))
    # flips of the two empty sites add a particle, flipping the occupied one removes it;
    # only exchanges keep the count at one
    assert abs(exchanges / n - 9 / 12) < 4 * math.sqrt(0.75 * 0.25 / n)


# ----------------------------------------------------------- trajectories
def test_zero_horizon_single_frame(const_model):
    eta = sample_profile_configuration(lambda u: 0.5 + 0 * u, 64, make_rng(0))
    tr = simulate_trajectory(eta, const_model, SimParams(N=64, horizon=0.0, block=16))
    assert tr.frames.shape == (1, 4)
    np.testing.assert_array_equal(tr.frames[0], eta.occupancy.reshape(4, 16).mean(axis=1))


def test_half_density_stays_at_fixed_point(const_model):
    N = 512
    rng = make_rng(2)
    eta = sample_profile_configuration(lambda u: 0.5 + 0 * u, N, rng)
    tr = simulate_trajectory(eta, const_model, SimParams(
        N=N, horizon=0.5, record_times=np.linspace(0, 0.5, 6), block=N), rng)
    se = 0.5 / math.sqrt(N)
    assert np.all(np.abs(tr.frames[:, 0] - 0.5) < 3 * se)


def test_empty_start_follows_ode(const_model):
    N = 512
    tr = simulate_trajectory(Configuration(np.zeros(N, dtype=np.int64)), const_model,
                             SimParams(N=N, horizon=1.0, seed=4, block=N))
    assert abs(tr.final[0] - (1 - math.exp(-2)) / 2) < 0.05


@pytest.mark.parametrize("engine", ["thinned", "tree"])
def test_kawasaki_only_conserves_mass_and_bookkeeping(const_model, engine):
    N = 128
    eta = sample_profile_configuration(lambda u: 0.3 + 0 * u, N, make_rng(0))
    p = SimParams(N=N, horizon=3.0, block=N, glauber=False, engine=engine,
                  record_times=np.linspace(0, 3, 11))
    tr = simulate_trajectory(eta, const_model, p)
    assert np.all(tr.frames[:, 0] * N == eta.particle_count)
    assert tr.meta["events"] > 1_000_000
    assert tr.meta["bookkeeping_error"] < 1e-9


def test_tree_engine_bookkeeping_with_flips(pair_model):
    N = 128
    eta = sample_profile_configuration(lambda u: 0.5 + 0 * u, N, make_rng(0))
    tr = simulate_trajectory(eta, pair_model, SimParams(N=N, horizon=2.5, engine="tree", block=N))
    assert tr.meta["events"] > 1_000_000
    assert tr.meta["bookkeeping_error"] < 1e-9


@pytest.mark.parametrize("engine", ["thinned", "tree"])
def test_determinism(pair_model, engine):
    eta = sample_profile_configuration(lambda u: 0.5 + 0 * u, 64, make_rng(0))
    p = SimParams(N=64, horizon=0.3, seed=17, replica=2, engine=engine,
                  record_times=np.linspace(0, 0.3, 4), block=4)
    a = simulate_trajectory(eta, pair_model, p)
    b = simulate_trajectory(eta, pair_model, p)
    assert np.array_equal(a.frames, b.frames)
    c = simulate_trajectory(eta, pair_model, SimParams(
        N=64, horizon=0.3, seed=17, replica=3, engine=engine,
        record_times=np.linspace(0, 0.3, 4), block=4))
    assert not np.array_equal(a.frames, c.frames)


def test_window_size_guard(pair_model):
    with pytest.raises(SimulationError, match="too small"):
        SimParams(N=4, horizon=1.0).check_model(pair_model)


def test_params_validation():
    with pytest.raises(SimulationError):
        SimParams(N=10, horizon=1.0, record_times=[0.5, 0.2])
    with pytest.raises(SimulationError):
        SimParams(N=10, horizon=1.0, block=3)


def test_stationary_marginals_uniform(const_model):
    N = 128
    snaps = stationary_samples(const_model, SimParams(N=N, horizon=1.0, seed=3, block=1),
                               burn_in=2.0, count=50, thin=0.2)
    mean = np.mean(snaps)
    # the mass relaxes at rate 2, so snapshots 0.2 apart have correlation e^-0.4
    rho = math.exp(-0.4)
    se = 0.5 / math.sqrt(N * 50) * math.sqrt((1 + rho) / (1 - rho))
    assert abs(mean - 0.5) < 3 * se


# ------------------------------------------------------------- exact oracle
def test_exact_constant_rate_uniform(const_model):
    for N in (3, 6):
        mu = exact_stationary_small(const_model, N)
        assert np.max(np.abs(mu - 2.0 ** -N)) < 1e-12


@pytest.mark.parametrize("N", [3, 4, 5])
def test_exact_pair_matches_dense_oracle(pair_model, N):
    mu = exact_stationary_small(pair_model, N)
    Q = dense_generator(lambda w: 1 + 2 * w[0] * w[2], 1, N)
    np.testing.assert_allclose(mu, stationary_dense(Q), atol=1e-12)
    assert abs(mu.sum() - 1) < 1e-12 and mu.min() >= 0
    assert np.max(np.abs(mu @ generator_matrix(pair_model, N).toarray())) < 1e-10


def test_generator_matches_dense(dw_model):
    N = 10
    Q = dense_generator(dw_model.cylinder.rate, dw_model.cylinder.half_width, N)
    np.testing.assert_allclose(generator_matrix(dw_model, N).toarray(), Q, atol=1e-12)


def test_exact_size_limit(const_model):
    with pytest.raises(SimulationError):
        exact_stationary_small(const_model, 13)


@pytest.mark.slow
@pytest.mark.parametrize("engine", ["thinned", "tree"])
def test_simulator_matches_exact_pair(pair_model, engine):
    N = 6
    mu = exact_stationary_small(pair_model, N)
    h = occupation_histogram(pair_model, N, 20_000.0, seed=1, engine=engine)
    assert 0.5 * np.abs(h - mu).sum() < 0.02


# ---------------------------------------------------------------- distance
def test_distance_examples():
    a, b = np.full(32, 0.5), np.full(32, 0.25)
    assert measure_distance(a, a) == 0.0
    d = measure_distance(a, b, 16)
    assert d == pytest.approx(constant_profile_distance(0.5, 0.25, 16), abs=1e-12)
    assert d == pytest.approx(0.2703, abs=1e-4)


def test_distance_empirical_vs_field():
    occ = np.zeros(40, dtype=np.int64)
    occ[::2] = 1
    pi = EmpiricalMeasure.from_configuration(occ)
    assert measure_distance(pi, np.full(40, 0.5)) < 0.02


fields = st.lists(st.floats(0, 1), min_size=8, max_size=8).map(np.array)


@settings(max_examples=80, deadline=None)
@given(fields, fields, fields)
def test_distance_metric_axioms(x, y, z):
    dxy, dyx = measure_distance(x, y), measure_distance(y, x)
    assert dxy == pytest.approx(dyx, abs=1e-15)
    assert measure_distance(x, z) <= dxy + measure_distance(y, z) + 1e-12
    assert dxy >= 0


def test_double_well_needs_wide_ring():
    m = make_double_well(1, 4)
    assert m.cylinder.window_size == 9
    with pytest.raises(SimulationError):
        SimParams(N=16, horizon=1.0).check_model(m)
