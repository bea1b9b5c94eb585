from __future__ import annotations

import numpy as np
import pytest

from nqs3d import ed
from nqs3d.hamiltonian import H_CRITICAL, PauliString, PauliStringHamiltonian, build_tfim
from nqs3d.lattice import Lattice3D, basis_configurations
from nqs3d.network import ArchitectureSpec, AmplitudeTable, init_parameters, zero_state
from nqs3d.observables import (ObservableRecord, connected_correlation_sum, correlation_profile, excess_energy,
                               lab_magnetization, magnetization, measure, qfi_density)
from nqs3d.sampler import SamplerConfig, exact_enumeration, sample
from oracles import sparse_string as dense_string

DIMS = (2, 2, 3)
LAT = Lattice3D(DIMS)


def _psi():
    return init_parameters(ArchitectureSpec(2, 1), 4, 20.0, DIMS)


def _dense(psi):
    v = np.exp(psi.log_psi(basis_configurations(12)))
    return v / np.linalg.norm(v)


def _delta_table():
    logs = np.full(4096, -np.inf + 0j)
    logs[0] = 0.0
    return AmplitudeTable(logs)


def test_delta_state():
    table = _delta_table()
    ens = exact_enumeration(table, LAT)
    assert magnetization(ens, table, "z")[0] == 1.0
    assert magnetization(ens, table, "x")[0] == 0.0
    assert qfi_density(ens)[0] == 0.0


def test_uniform_state():
    psi = zero_state(ArchitectureSpec(2, 1), DIMS)
    ens = exact_enumeration(psi)
    assert abs(magnetization(ens, psi, "x")[0] - 1) < 1e-12
    assert abs(magnetization(ens, psi, "z")[0]) < 1e-12
    assert abs(qfi_density(ens)[0] - 1) < 1e-12
    prof = correlation_profile(ens, LAT, 1)
    assert prof[0] == (0, 1.0, 0.0)
    assert abs(prof[1][1]) < 1e-12


def test_uniform_state_sampled():
    psi = zero_state(ArchitectureSpec(2, 1), DIMS)
    batch = sample(psi, SamplerConfig(n_samples=8000, n_chains=80, seed=3))
    mz, err = magnetization(batch, psi, "z")
    assert abs(mz) < 5 * err
    mx, _ = magnetization(batch, psi, "x")
    assert abs(mx - 1) < 1e-12
    C1 = correlation_profile(batch, LAT, 1)[1]
    assert abs(C1[1]) < 5 * C1[2]


@pytest.mark.parametrize("axis,op", [("x", "X"), ("y", "Y"), ("z", "Z")])
def test_magnetization_matches_dense(axis, op):
    psi = _psi()
    v = _dense(psi)
    ref = np.mean([np.vdot(v, dense_string(12, [(i, op)]) @ v).real for i in range(12)])
    got, _ = magnetization(exact_enumeration(psi), psi, axis)
    assert abs(got - ref) < 1e-10


def test_qfi_matches_dense():
    psi = _psi()
    v = _dense(psi)
    M = sum(dense_string(12, [(i, "Z")]) for i in range(12))
    ref = (np.vdot(v, M @ M @ v).real - np.vdot(v, M @ v).real ** 2) / 12
    ens = exact_enumeration(psi)
    assert abs(qfi_density(ens)[0] - ref) < 1e-10
    assert abs(connected_correlation_sum(ens) - ref) < 1e-10


def test_ghz_qfi():
    assert abs(ed.qfi_density(ed.DenseState.ghz(LAT)) - 12) < 1e-12


def test_correlation_matches_dense():
    psi = _psi()
    v = _dense(psi)
    got = correlation_profile(exact_enumeration(psi), LAT, 1)
    for R, C, _ in got:
        vals = []
        for i in range(12):
            for ax in range(3):
                j = LAT.shifted(i, ax, R)
                op = dense_string(12, [(i, "Z")]) @ dense_string(12, [(j, "Z")])
                vals.append(np.vdot(v, op @ v).real)
        assert abs(C - np.mean(vals)) < 1e-10


def test_correlation_range_checked():
    with pytest.raises(ValueError):
        correlation_profile(exact_enumeration(_psi()), LAT, 2)


def test_excess_energy_of_ground_state_vanishes():
    H = build_tfim(LAT, 0.0, 2.0)
    psi = zero_state(ArchitectureSpec(2, 1), DIMS)
    q = excess_energy(exact_enumeration(psi), psi, H, 0.0, -2.0)
    assert abs(q.Q) < 1e-12


def test_excess_energy_matches_dense_after_quench():
    H = build_tfim(LAT, 1.0, H_CRITICAL)
    psi = _psi()
    v = ed.DenseState(_dense(psi), LAT)
    e_gs = ed.ground_state(H, LAT).energy / 12
    ref = ed.energy(H, v) / 12 - e_gs
    q = excess_energy(exact_enumeration(psi), psi, H, 0.0, e_gs)
    assert abs(q.Q - ref) < 1e-10


def test_excess_energy_shift_invariant():
    H = build_tfim(LAT, 1.0, 2.0)
    shifted = H + PauliStringHamiltonian(12, [PauliString((), 3.6)])
    psi = _psi()
    ens = exact_enumeration(psi)
    a = excess_energy(ens, psi, H, 0.0, -5.0)
    b = excess_energy(ens, psi, shifted, 0.0, -5.0 + 3.6 / 12)
    assert abs(a.Q - b.Q) < 1e-12


def test_excess_energy_resolution_flag():
    psi = zero_state(ArchitectureSpec(2, 1), DIMS)
    q = excess_energy(exact_enumeration(psi), psi, build_tfim(LAT, 0.0, 1.0), 0.0, -1.0 - 1e-6, ground_error=1e-3)
    assert q.resolution_limited


def test_lab_magnetization_rotated_frame():
    # in the rotated frame lab sigma^z is sigma^x of the simulated state
    psi = _psi()
    ens = exact_enumeration(psi)
    a = lab_magnetization(ens, psi, "z", frame="rotated")[0]
    b = magnetization(ens, psi, "x")[0]
    assert abs(a - b) < 1e-12


def test_measure_record_round_trip():
    psi = _psi()
    rec = measure(0.3, exact_enumeration(psi), psi, LAT, 1)
    d = rec.to_dict()
    assert d["time"] == 0.3 and len(d["correlations"]) == 2
    row = rec.csv_row()
    assert "C0" in row and "C1" in row
    assert isinstance(rec, ObservableRecord)
