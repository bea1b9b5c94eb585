from __future__ import annotations

import math

import numpy as np
import pytest

from nqs3d import ed
from nqs3d.lattice import Lattice3D, basis_configurations
from nqs3d.network import (ArchitectureSpec, AmplitudeTable, NetworkState, init_parameters, log_derivatives, log_psi,
                           parameter_count, zero_state)
from oracles import gelu


def reference_log_psi(arch, theta, dims, spins):
    """Scalar-loop forward pass written against the parameter layout only."""
    X, Y, Z = dims
    w = 2 * arch.channels
    k = 0
    stream = None
    field = [[[[float(spins[(x * Y + y) * Z + z])] for z in range(Z)] for y in range(Y)] for x in range(X)]

    def conv(inp, c_in, bias):
        nonlocal k
        W = theta[k:k + w * c_in * 27]
        k += w * c_in * 27
        b = theta[k:k + w] if bias else [0.0] * w
        if bias:
            k += w
        out = [[[[0.0] * w for _ in range(Z)] for _ in range(Y)] for _ in range(X)]
        for x in range(X):
            for y in range(Y):
                for z in range(Z):
                    for o in range(w):
                        acc = b[o]
                        for i in range(c_in):
                            for dx in range(3):
                                for dy in range(3):
                                    for dz in range(3):
                                        wt = W[((o * c_in + i) * 3 + dx) * 9 + dy * 3 + dz]
                                        acc += wt * inp[(x + dx - 1) % X][(y + dy - 1) % Y][(z + dz - 1) % Z][i]
                        out[x][y][z][o] = gelu(acc)
        return out

    for blk in range(arch.depth):
        c_in = 1 if blk == 0 else w
        inp = field if blk == 0 else stream
        h = conv(conv(inp, c_in, blk > 0), w, True)
        s = 1 / math.sqrt(blk + 1)
        if blk == 0:
            stream = [[[[v * s for v in h[x][y][z]] for z in range(Z)] for y in range(Y)] for x in range(X)]
        else:
            stream = [[[[stream[x][y][z][o] + s * h[x][y][z][o] for o in range(w)] for z in range(Z)]
                       for y in range(Y)] for x in range(X)]
    total = 0j
    for x in range(X):
        for y in range(Y):
            for z in range(Z):
                for c in range(arch.channels):
                    total += np.exp(complex(stream[x][y][z][2 * c], stream[x][y][z][2 * c + 1]))
    return np.log(total)


@pytest.mark.parametrize("n,count", [(2, 5424), (3, 8896), (4, 12368)])
def test_parameter_count_published(n, count):
    arch = ArchitectureSpec(n, 4)
    assert parameter_count(arch) == count
    assert init_parameters(arch, 0, 1.0, (3, 3, 3)).n_params == count


def test_parameter_count_closed_form():
    for n in range(1, 5):
        for c in range(1, 4):
            w = 2 * c
            assert parameter_count(ArchitectureSpec(n, c)) == 27 * w + (2 * n - 1) * (27 * w * w + w)


def test_invalid_architecture():
    with pytest.raises(ValueError):
        ArchitectureSpec(0, 2)


def test_zero_parameters_give_log_c_n():
    arch = ArchitectureSpec(2, 3)
    psi = zero_state(arch, (2, 2, 3))
    rng = np.random.default_rng(0)
    s = rng.choice([-1, 1], size=(5, 12))
    np.testing.assert_allclose(psi.log_psi(s), math.log(3 * 12), atol=1e-14)


def test_zero_parameters_final_bias_derivative():
    arch = ArchitectureSpec(2, 2)
    psi = zero_state(arch, (2, 2, 2))
    O = psi.log_derivatives(np.ones((1, 8)))[0]
    # final bias shifts every site of one real channel; softmax weight of each complex channel is 1/c
    bias = O[-arch.width:]
    scale = 1 / math.sqrt(arch.depth)
    np.testing.assert_allclose(bias[0::2], scale / arch.channels * 0.5, atol=1e-14)
    np.testing.assert_allclose(bias[1::2], 1j * scale / arch.channels * 0.5, atol=1e-14)


def test_matches_scalar_reference():
    arch = ArchitectureSpec(2, 1)
    dims = (3, 3, 3)
    psi = init_parameters(arch, 7, 20.0, dims)
    s = np.random.default_rng(1).choice([-1, 1], size=27)
    ref = reference_log_psi(arch, psi.theta, dims, s)
    got = log_psi(psi, s)
    assert abs(got - ref) < 1e-10


def test_translation_invariance():
    arch = ArchitectureSpec(3, 2)
    lat = Lattice3D((2, 3, 4))
    psi = init_parameters(arch, 3, 30.0, lat.dims)
    rng = np.random.default_rng(2)
    s = rng.choice([-1, 1], size=lat.n_sites)
    base, O = psi.evaluate(s[None, :])
    for shift in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 2, 3)]:
        t = lat.translate(s, shift)
        v, Ot = psi.evaluate(t[None, :])
        assert abs(v[0] - base[0]) < 1e-12
        np.testing.assert_allclose(Ot, O, atol=1e-12)


def test_gradient_check_random_instances():
    arch = ArchitectureSpec(2, 1)
    dims = (2, 2, 3)
    rng = np.random.default_rng(5)
    worst = 0.0
    for inst in range(100):
        psi = init_parameters(arch, inst, 20.0, dims)
        s = rng.choice([-1, 1], size=12)
        O = log_derivatives(psi, s)
        k = rng.integers(psi.n_params)
        e = np.zeros(psi.n_params)
        e[k] = 1e-5
        fd = (log_psi(psi.with_theta(psi.theta + e), s) - log_psi(psi.with_theta(psi.theta - e), s)) / 2e-5
        worst = max(worst, abs(fd - O[k]) / max(abs(fd), 1e-3))
    assert worst < 1e-4


def test_full_gradient_against_finite_differences():
    arch = ArchitectureSpec(2, 1)
    psi = init_parameters(arch, 11, 20.0, (2, 2, 3))
    s = np.random.default_rng(9).choice([-1, 1], size=12)
    O = log_derivatives(psi, s)
    fd = np.empty_like(O)
    for k in range(psi.n_params):
        e = np.zeros(psi.n_params)
        e[k] = 1e-5
        fd[k] = (log_psi(psi.with_theta(psi.theta + e), s) - log_psi(psi.with_theta(psi.theta - e), s)) / 2e-5
    np.testing.assert_allclose(O, fd, rtol=1e-5, atol=1e-8)


def test_never_non_finite_for_large_parameters():
    psi = init_parameters(ArchitectureSpec(2, 2), 0, 5e4, (2, 2, 2))
    vals, grads = psi.evaluate(basis_configurations(8)[:32])
    assert np.isfinite(vals).all() and np.isfinite(grads).all()


def test_size_independent_parameters():
    psi = init_parameters(ArchitectureSpec(2, 1), 0, 10.0, (2, 2, 2))
    for dims in [(5, 5, 5), (6, 6, 6)]:
        q = psi.on_lattice(dims)
        v = q.log_psi(np.ones((1, int(np.prod(dims)))))
        assert np.isfinite(v).all()
        # all-up is translation invariant: every site contributes equally
        v1 = psi.log_psi(np.ones((1, 8)))
        assert abs((v[0] - math.log(np.prod(dims))) - (v1[0] - math.log(8))) < 1e-10


def test_init_deterministic_and_scaled():
    arch = ArchitectureSpec(2, 2)
    a = init_parameters(arch, 4, 1.0, (2, 2, 2))
    b = init_parameters(arch, 4, 1.0, (2, 2, 2))
    np.testing.assert_array_equal(a.theta, b.theta)
    first = a.theta[:27 * arch.width]
    assert abs(first.std() - 1 / 27) < 0.3 / 27


def test_small_scale_close_to_uniform():
    lat = Lattice3D((2, 2, 3))
    psi = init_parameters(ArchitectureSpec(2, 2), 0, 0.01, lat.dims)
    amps = AmplitudeTable(psi.log_psi(basis_configurations(12))).dense()
    amps = amps / np.linalg.norm(amps)
    fid = abs(np.vdot(ed.DenseState.x_product(lat).amplitudes, amps)) ** 2
    assert fid > 0.99


def test_save_load_bit_exact(tmp_path):
    psi = init_parameters(ArchitectureSpec(3, 2), 8, 2.0, (2, 2, 3))
    path = tmp_path / "state.npz"
    psi.save(path)
    q = NetworkState.load(path)
    assert q.arch == psi.arch and tuple(q.dims) == tuple(psi.dims)
    np.testing.assert_array_equal(q.theta, psi.theta)


def test_wrong_theta_length():
    with pytest.raises(ValueError):
        NetworkState(ArchitectureSpec(2, 1), np.zeros(5), (2, 2, 2))
