from __future__ import annotations

import warnings

import numpy as np
import pytest
from scipy.stats import chi2

from nqs3d.hamiltonian import H_CRITICAL, build_tfim, local_energies
from nqs3d.lattice import Lattice3D, basis_configurations, configuration_index
from nqs3d.network import ArchitectureSpec, AmplitudeTable, init_parameters, zero_state
from nqs3d.sampler import (SamplerConfig, acceptance_probability, empirical_distribution, exact_enumeration,
                           sample)

DIMS = (2, 2, 3)


def _random_psi(scale=25.0, seed=3):
    return init_parameters(ArchitectureSpec(2, 1), seed, scale, DIMS)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(n_samples=1001, n_chains=10)
    with pytest.raises(ValueError):
        SamplerConfig(burn_in=0)


def test_uniform_target_always_accepts():
    psi = zero_state(ArchitectureSpec(2, 1), DIMS)
    batch = sample(psi, SamplerConfig(n_samples=4000, n_chains=40, seed=1))
    assert batch.acceptance_rate == 1.0
    mz = batch.configs.mean(axis=1).astype(float)
    assert abs(batch.mean(mz)) < 5 * batch.stderr(mz)


def test_cached_log_amplitudes_match():
    psi = _random_psi()
    batch = sample(psi, SamplerConfig(n_samples=400, n_chains=20, seed=2))
    np.testing.assert_allclose(batch.log_amplitudes, psi.log_psi(batch.configs), atol=1e-12)


def test_deterministic_given_seed():
    psi = _random_psi()
    a = sample(psi, SamplerConfig(n_samples=400, n_chains=20, seed=5))
    b = sample(psi, SamplerConfig(n_samples=400, n_chains=20, seed=5))
    np.testing.assert_array_equal(a.configs, b.configs)
    np.testing.assert_array_equal(a.log_amplitudes, b.log_amplitudes)
    assert a.acceptance_rate == b.acceptance_rate


def test_detailed_balance_analytic():
    rng = np.random.default_rng(0)
    la = rng.normal(size=1000) * 3 + 1j * rng.normal(size=1000)
    lb = rng.normal(size=1000) * 3 + 1j * rng.normal(size=1000)
    pa, pb = np.exp(2 * la.real), np.exp(2 * lb.real)
    np.testing.assert_allclose(pa * acceptance_probability(la, lb), pb * acceptance_probability(lb, la), rtol=1e-12)


def test_two_state_marginal_chain():
    # chain restricted to a pair of configurations: stationary occupation equals pi_a / (pi_a + pi_b)
    rng = np.random.default_rng(1)
    la, lb = 0.0, 0.4
    state, visits = 0, 0
    logs = (la, lb)
    for _ in range(200000):
        new = 1 - state
        if rng.random() < acceptance_probability(logs[state], logs[new]):
            state = new
        visits += state
    expected = np.exp(2 * lb) / (np.exp(2 * la) + np.exp(2 * lb))
    assert abs(visits / 200000 - expected) < 0.01


def test_chi_square_against_dense_distribution():
    psi = _random_psi(scale=15.0)
    table = psi.full_table()
    dense = np.abs(table.dense()) ** 2
    p = dense / dense.sum()
    # thinning by 20 sweeps makes stored samples effectively independent at ~10% acceptance
    cfg = SamplerConfig(n_samples=10**6, n_chains=1000, burn_in=20, thin=20, seed=11)
    batch = sample(psi, cfg)
    counts = np.bincount(configuration_index(batch.configs), minlength=p.size)
    expected = p * batch.n_samples
    keep = expected >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    stat = float(((obs - exp) ** 2 / exp).sum())
    pval = chi2.sf(stat, obs.size - 1)
    assert pval > 1e-3
    np.testing.assert_allclose(empirical_distribution(batch).sum(), 1.0)


def test_exact_enumeration_weights():
    psi = zero_state(ArchitectureSpec(2, 1), DIMS)
    ens = exact_enumeration(psi)
    np.testing.assert_allclose(ens.weights, 2.0**-12)
    ens = exact_enumeration(_random_psi())
    assert abs(ens.weights.sum() - 1) < 1e-12


def test_exact_enumeration_size_limit():
    psi = zero_state(ArchitectureSpec(1, 1), (5, 5, 5))
    with pytest.raises(ValueError):
        exact_enumeration(psi)


def test_low_acceptance_warning():
    # a nearly deterministic amplitude table (delta peak on all-up)
    logs = np.full(4096, -60.0 + 0j)
    logs[0] = 0.0
    with pytest.warns(RuntimeWarning):
        batch = sample(AmplitudeTable(logs), SamplerConfig(n_samples=100, n_chains=10, seed=0),
                       init=np.ones((10, 12), dtype=np.int8))
    assert batch.diagnostics["low_acceptance"]


def test_mc_energy_converges_as_inverse_sqrt():
    lat = Lattice3D(DIMS)
    psi = _random_psi(scale=15.0)
    H = build_tfim(lat, 1.0, H_CRITICAL)
    exact = exact_enumeration(psi)
    e_exact = float(np.real(exact.mean(local_energies(H, exact.configs, exact.lookup))))
    errs, sizes = [], [2000, 8000, 32000]
    for n in sizes:
        batch = sample(psi, SamplerConfig(n_samples=n, n_chains=100, seed=n))
        e = np.real(local_energies(H, batch.configs, batch.lookup))
        assert abs(batch.mean(e) - e_exact) < 5 * batch.stderr(e)
        errs.append(batch.stderr(e))
    slope = np.polyfit(np.log(sizes), np.log(errs), 1)[0]
    assert -0.7 < slope < -0.3
