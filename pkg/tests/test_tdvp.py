from __future__ import annotations

import numpy as np
import pytest
from scipy.linalg import expm

from nqs3d import ed
from nqs3d.hamiltonian import H_CRITICAL, build_tfim, local_energies
from nqs3d.lattice import Lattice3D
from nqs3d.network import ArchitectureSpec, init_parameters, zero_state
from nqs3d.sampler import exact_enumeration
from nqs3d.tdvp import (IntegrationError, IntegratorConfig, RankDeficientError, Regularization, TdvpDriver,
                        TdvpEstimates, estimate_sf, ground_state_search, heun_step, solve_tdvp)

DIMS = (2, 2, 3)


def _psi(scale=20.0, seed=2):
    return init_parameters(ArchitectureSpec(2, 1), seed, scale, DIMS)


def test_identity_metric_real_time():
    v = np.random.default_rng(0).normal(size=6)
    est = TdvpEstimates.from_matrices(np.eye(6), 1j * v)
    np.testing.assert_allclose(solve_tdvp(est, Regularization(1e-8, 0.0)), v, atol=1e-14)


def test_identity_metric_imaginary_time():
    v = np.random.default_rng(1).normal(size=4)
    est = TdvpEstimates.from_matrices(np.eye(4), v + 0j)
    np.testing.assert_allclose(solve_tdvp(est, Regularization(1e-8, 0.0), imaginary=True), -v, atol=1e-14)


def test_singular_metric_minimal_norm():
    rng = np.random.default_rng(2)
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    lam = np.array([3.0, 1.5, 0.7, 0.0, 0.0])
    S = Q @ np.diag(lam) @ Q.T
    x = Q[:, :3] @ rng.normal(size=3)  # in the range of S
    F = 1j * (S @ x)
    theta_dot, info = solve_tdvp(TdvpEstimates.from_matrices(S, F), Regularization(1e-8, 0.0), return_info=True)
    np.testing.assert_allclose(theta_dot, np.linalg.pinv(S) @ F.imag, atol=1e-12)
    np.testing.assert_allclose(theta_dot, x, atol=1e-12)
    assert info["rank"] == 3
    assert np.linalg.norm(S @ theta_dot - F.imag) < 1e-12


def test_rank_deficient_error():
    with pytest.raises(RankDeficientError, match="rank-deficient geometric tensor"):
        solve_tdvp(TdvpEstimates.from_matrices(np.zeros((3, 3)), np.zeros(3, dtype=complex)))


def test_pure_field_force_vanishes_on_uniform_state():
    lat = Lattice3D(DIMS)
    psi = zero_state(ArchitectureSpec(2, 1), DIMS)
    est = estimate_sf(psi, build_tfim(lat, 0.0, 1.3), exact_enumeration(psi))
    assert np.abs(est.F).max() < 1e-12
    assert abs(est.energy + 1.3 * 12) < 1e-12


def test_estimates_match_dense_construction():
    lat = Lattice3D(DIMS)
    H = build_tfim(lat, 1.0, H_CRITICAL)
    psi = _psi()
    ens = exact_enumeration(psi)
    est = estimate_sf(psi, H, ens, full=True)
    logs, O = psi.evaluate(ens.configs)
    amps = np.exp(logs - logs.real.max())
    p = np.abs(amps) ** 2
    p /= p.sum()
    # dense H acting on the dense amplitude vector gives E_loc independently of the Pauli-string code
    Hpsi = ed.DenseOperator(H).apply(amps)
    eloc = Hpsi / amps
    Obar = p @ O
    S = (O.conj() * p[:, None]).T @ O - np.outer(Obar.conj(), Obar)
    F = (O.conj() * p[:, None]).T @ eloc - Obar.conj() * (p @ eloc)
    scale = max(1.0, np.abs(S).max())
    np.testing.assert_allclose(est.S, S, atol=1e-12 * scale)
    np.testing.assert_allclose(est.F, F, atol=1e-12 * max(1.0, np.abs(F).max()))
    assert np.diag(est.S_real).min() >= -1e-10
    lam = np.linalg.eigvalsh(est.S)
    assert lam.min() >= -1e-10 * lam.max()
    np.testing.assert_allclose(est.S, est.S.conj().T, atol=1e-14)


def test_excluded_fraction_too_large_raises():
    class Broken:
        configs = np.ones((4, 12), dtype=np.int8)
        weights = np.full(4, 0.25)
        log_amplitudes = np.zeros(4, dtype=complex)
        lookup = None

        def unique(self):
            return self.configs, self.weights, self.log_amplitudes

    class NanNet:
        n_sites = 12

        def evaluate(self, configs):
            return np.zeros(len(configs), dtype=complex), np.full((len(configs), 3), np.nan + 0j)

        def log_psi(self, configs):
            return np.zeros(len(configs), dtype=complex)

    with pytest.raises(FloatingPointError):
        estimate_sf(NanNet(), build_tfim(Lattice3D(DIMS), 1.0, 1.0), Broken())


def test_norm_direction_projected_out():
    # a constant shift of ln Psi only changes the connected estimates at round-off level
    lat = Lattice3D(DIMS)
    H = build_tfim(lat, 1.0, H_CRITICAL)
    psi = _psi()
    a = estimate_sf(psi, H, exact_enumeration(psi))

    class Shifted:
        def __init__(self, inner):
            self.inner = inner
            self.n_sites = inner.n_sites

        def evaluate(self, configs):
            v, g = self.inner.evaluate(configs)
            return v + 3.0, g

        def log_psi(self, configs):
            return self.inner.log_psi(configs) + 3.0

    shifted = Shifted(psi)
    b = estimate_sf(shifted, H, exact_enumeration(shifted))
    np.testing.assert_allclose(b.S_real, a.S_real, atol=1e-12)
    np.testing.assert_allclose(b.F, a.F, atol=1e-10)


def _linear_rhs(A):
    return lambda theta, t: (A @ theta, {})


def test_heun_second_order_on_linear_system():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(4, 4))
    A = A - A.T - 0.3 * np.eye(4)
    theta0 = rng.normal(size=4)
    T = 1.0
    exact = expm(A * T) @ theta0
    errs = []
    for n in (50, 100, 200):
        cfg = IntegratorConfig(dt=T / n, dt_max=1.0, adaptive=False)
        theta, t = theta0.copy(), 0.0
        for _ in range(n):
            theta = heun_step(theta, t, T / n, _linear_rhs(A), cfg).theta
            t += T / n
        errs.append(np.linalg.norm(theta - exact))
    order = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(order - 2) < 0.15)


def test_controller_monotone_in_tolerance():
    A = np.array([[0.0, 3.0], [-3.0, 0.0]])
    theta = np.array([1.0, 0.5])
    dts = []
    for tol in (1e-3, 1e-4, 1e-5, 1e-6):
        res = heun_step(theta, 0.0, 0.05, _linear_rhs(A), IntegratorConfig(tol=tol, dt_max=0.1))
        dts.append(res.dt)
        assert res.error <= tol
    assert all(b <= a for a, b in zip(dts, dts[1:]))


def test_step_underflow():
    A = np.array([[0.0, 1e6], [-1e6, 0.0]])
    cfg = IntegratorConfig(tol=1e-12, dt_min=1e-6, dt_max=0.1)
    with pytest.raises(IntegrationError, match="underflow"):
        heun_step(np.ones(2), 0.0, 0.1, _linear_rhs(A), cfg)


def test_integrator_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(tol=0)
    with pytest.raises(ValueError):
        IntegratorConfig(dt_min=1.0, dt_max=0.1)


def test_imaginary_time_energy_descends():
    lat = Lattice3D(DIMS)
    H = build_tfim(lat, 1.0, H_CRITICAL)
    e0 = ed.ground_state(H, lat).energy
    driver = TdvpDriver(_psi(scale=3.0), H, reg=Regularization(1e-8, 1e-2), imaginary=True)
    theta = driver.psi.theta.copy()
    energies = []
    for _ in range(25):
        theta_dot, info = driver(theta, 0.0)
        energies.append(float(np.real(info["energy"])))
        theta = theta + 0.01 * theta_dot
    assert all(b <= a + 1e-9 for a, b in zip(energies, energies[1:]))
    assert energies[-1] >= e0 - 1e-9


def test_ground_state_product_limit():
    lat = Lattice3D(DIMS)
    res = ground_state_search(zero_state(ArchitectureSpec(2, 1), DIMS), build_tfim(lat, 0.0, 1.7))
    assert abs(res.energy + 1.7 * 12) < 1e-6 * 1.7 * 12
    assert res.variance_per_site < 1e-8


def test_ground_state_critical_point():
    lat = Lattice3D(DIMS)
    H = build_tfim(lat, 1.0, H_CRITICAL)
    e0 = ed.ground_state(H, lat).energy
    res = ground_state_search(_psi(scale=3.0), H, step=0.02, max_iters=400, variance_threshold=1e-6)
    assert abs(res.energy - e0) < 1e-3 * abs(e0)
    assert res.energy >= e0 - 1e-9


def test_real_time_energy_conservation():
    lat = Lattice3D(DIMS)
    H = build_tfim(lat, 1.0, H_CRITICAL)
    psi = _psi(scale=10.0)
    driver = TdvpDriver(psi, H, reg=Regularization(1e-10, 1e-8))
    cfg = IntegratorConfig(dt=1e-3, tol=1e-5, dt_max=0.01)
    theta, t, dt = psi.theta.copy(), 0.0, 1e-3
    e0 = None
    while t < 0.005:
        res = heun_step(theta, t, min(dt, 0.005 - t), driver, cfg)
        if e0 is None:
            e0 = float(np.real(res.k1_info["energy"]))
        theta, t, dt = res.theta, t + res.dt, res.dt_next
    ens = exact_enumeration(psi.with_theta(theta))
    e1 = float(np.real(ens.mean(local_energies(H, ens.configs, ens.lookup))))
    assert abs(e1 - e0) < 1e-4 * abs(e0)
