"""Physical observables estimated from exact or sampled ensembles.

Every estimator returns a (value, error) pair; the error is zero for exact
enumeration and a per-chain standard error for Metropolis samples.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .hamiltonian import PauliString, PauliStringHamiltonian, local_energies, rotate_basis_y
from .lattice import Lattice3D

FRAMES = ("lab", "rotated", "rotating")


def _lookup(ensemble, psi):
    return ensemble.lookup if ensemble.lookup is not None else psi


def _stats(ensemble, values) -> tuple[float, float]:
    values = np.asarray(values)
    return float(np.real(ensemble.mean(values))), float(ensemble.stderr(np.real(values)))


def operator_expectation(ensemble, psi, op: PauliStringHamiltonian, t: float = 0.0) -> tuple[float, float]:
    """<Psi|op|Psi> from the local estimator sum_s' <s|op|s'> Psi(s')/Psi(s).

    The real part is reported; ``op`` is expected to be Hermitian.
    """
    configs, weights, logs = ensemble.unique()
    local = local_energies(op, configs, _lookup(ensemble, psi), t, log_amplitudes=logs)
    # configurations of zero weight (exact zeros of Psi) do not contribute
    local = np.where(weights > 0, local, 0.0)
    return _stats(ensemble, ensemble.expand(local))


def _single_site_sum(n_sites: int, axis: str) -> PauliStringHamiltonian:
    op = axis.upper()
    return PauliStringHamiltonian(n_sites, [PauliString(((i, op),), 1.0 / n_sites) for i in range(n_sites)])


def magnetization(ensemble, psi, axis: str = "z") -> tuple[float, float]:
    """Site-averaged <sigma^axis> in the simulation basis."""
    axis = axis.lower()
    if axis not in ("x", "y", "z"):
        raise ValueError(f"axis must be x, y or z, got {axis!r}")
    if axis == "z":
        return _stats(ensemble, ensemble.configs.mean(axis=1))
    return operator_expectation(ensemble, psi, _single_site_sum(psi.n_sites, axis))


def lab_operator(n_sites: int, axis: str, frame: str = "lab", h: float = 0.0, t: float = 0.0):
    """Site-averaged lab-frame sigma^axis written in the simulation frame.

    rotated: basis rotated about y. rotating: rotated basis plus the interaction
    picture with respect to -h sum X, where sigma^z picks up cos/sin(2ht) mixing
    with sigma^y.
    """
    if frame not in FRAMES:
        raise ValueError(f"frame must be one of {FRAMES}")
    axis = axis.upper()
    terms = []
    for i in range(n_sites):
        if frame == "rotating" and axis in ("Z", "Y"):
            c, s = math.cos(2 * h * t), math.sin(2 * h * t)
            if axis == "Z":
                terms += [PauliString(((i, "Z"),), c / n_sites), PauliString(((i, "Y"),), -s / n_sites)]
            else:
                terms += [PauliString(((i, "Y"),), c / n_sites), PauliString(((i, "Z"),), s / n_sites)]
        else:
            terms.append(PauliString(((i, axis),), 1.0 / n_sites))
    op = PauliStringHamiltonian(n_sites, terms)
    return op if frame == "lab" else rotate_basis_y(op)


def lab_magnetization(ensemble, psi, axis: str, frame: str = "lab", h: float = 0.0, t: float = 0.0):
    """Lab-frame site-averaged magnetization from a state simulated in ``frame``."""
    if frame == "lab":
        return magnetization(ensemble, psi, axis)
    op = lab_operator(psi.n_sites, axis, frame, h, t)
    return operator_expectation(ensemble, psi, op)


def _chain_stat(ensemble, per_sample, reducer) -> float:
    """Standard error of a nonlinear statistic from its per-chain spread."""
    n_chains = getattr(ensemble, "n_chains", 0)
    if n_chains < 2:
        return 0.0
    parts = np.array_split(per_sample, n_chains)
    vals = np.array([reducer(p) for p in parts])
    return float(np.std(vals, ddof=1) / math.sqrt(n_chains))


def qfi_density(ensemble, psi=None) -> tuple[float, float]:
    """f_Q = (<M^2> - <M>^2) / N with M = sum_i sigma^z_i (variance normalisation, no factor 4)."""
    configs = ensemble.configs
    N = configs.shape[1]
    M = configs.sum(axis=1, dtype=np.float64)
    w = ensemble.weights
    f = float((w @ M**2 - (w @ M) ** 2) / N)
    err = _chain_stat(ensemble, M, lambda m: np.var(m) / N)
    return f, err


def _pair_products(configs: np.ndarray, lattice: Lattice3D, R: int) -> np.ndarray:
    """Per-configuration s_i s_{i+R e_a}, averaged over sites i and the three axes."""
    s = configs.reshape((-1,) + lattice.dims).astype(np.float64)
    acc = np.zeros(s.shape[0])
    for axis in range(3):
        acc += (s * np.roll(s, -R, axis=axis + 1)).mean(axis=(1, 2, 3))
    return acc / 3.0


def correlation_profile(ensemble, lattice: Lattice3D, max_R: int) -> list[tuple[int, float, float]]:
    """[(R, C(R), error)] with C(R) = <sigma^z_0 sigma^z_R> along lattice axes."""
    limit = min(lattice.dims) // 2
    if not 0 <= max_R <= limit:
        raise ValueError(f"max_R must lie in [0, {limit}] for dims {lattice.dims}")
    out = [(0, 1.0, 0.0)]
    for R in range(1, max_R + 1):
        v, e = _stats(ensemble, _pair_products(ensemble.configs, lattice, R))
        out.append((R, v, e))
    return out


def connected_correlation_sum(ensemble) -> float:
    """(1/N) sum_ij (<s_i s_j> - <s_i><s_j>); equals f_Q identically."""
    s = ensemble.configs.astype(np.float64)
    w = ensemble.weights
    m = w @ s
    cov = (s * w[:, None]).T @ s - np.outer(m, m)
    return float(cov.sum() / s.shape[1])


@dataclass(frozen=True)
class ExcessEnergy:
    Q: float
    error: float
    resolution_limited: bool


def excess_energy(ensemble, psi, H: PauliStringHamiltonian, t: float, ground_energy_density: float,
                  ground_error: float = 0.0) -> ExcessEnergy:
    """Q = <H(t)>/N - e_GS(t); flagged when the ground-state error exceeds |Q|."""
    e, err = operator_expectation(ensemble, psi, H, t)
    N = psi.n_sites
    Q = e / N - ground_energy_density
    total = math.hypot(err / N, ground_error)
    return ExcessEnergy(Q, total, bool(ground_error > abs(Q)))


@dataclass
class ObservableRecord:
    time: float
    sx_mean: float
    sz_mean: float
    qfi_density: float
    correlations: list  # C(R) for R = 0..max_R
    excess_energy: float | None = None
    sx_err: float = 0.0
    sz_err: float = 0.0
    qfi_err: float = 0.0
    correlation_errs: list = field(default_factory=list)
    excess_energy_err: float | None = None
    resolution_limited: bool = False
    frame: str = "lab"

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> dict:
        row = {"time": self.time, "sx": self.sx_mean, "sx_err": self.sx_err, "sz": self.sz_mean,
               "sz_err": self.sz_err, "f_Q": self.qfi_density, "f_Q_err": self.qfi_err,
               "Q": "" if self.excess_energy is None else self.excess_energy,
               "Q_err": "" if self.excess_energy_err is None else self.excess_energy_err,
               "resolution_limited": int(self.resolution_limited), "frame": self.frame}
        for R, (c, e) in enumerate(zip(self.correlations, self.correlation_errs)):
            row[f"C{R}"] = c
            row[f"C{R}_err"] = e
        return row


def measure(t: float, ensemble, psi, lattice: Lattice3D, max_R: int | None = None, *, frame: str = "lab",
            h: float = 0.0, H: PauliStringHamiltonian | None = None, ground_energy_density: float | None = None,
            ground_error: float = 0.0) -> ObservableRecord:
    """All observables at one time.

    sigma^x and sigma^z are reported in the lab frame.  f_Q and C(R) are
    diagonal estimators in the simulation basis, so they are lab quantities
    only when ``frame`` is "lab".
    """
    if max_R is None:
        max_R = min(lattice.dims) // 2
    sx, sx_e = lab_magnetization(ensemble, psi, "x", frame, h, t)
    sz, sz_e = lab_magnetization(ensemble, psi, "z", frame, h, t)
    fq, fq_e = qfi_density(ensemble)
    prof = correlation_profile(ensemble, lattice, max_R)
    rec = ObservableRecord(t, sx, sz, fq, [c for _, c, _ in prof], sx_err=sx_e, sz_err=sz_e, qfi_err=fq_e,
                           correlation_errs=[e for _, _, e in prof], frame=frame)
    if H is not None and ground_energy_density is not None:
        q = excess_energy(ensemble, psi, H, t, ground_energy_density, ground_error)
        rec.excess_energy, rec.excess_energy_err, rec.resolution_limited = q.Q, q.error, q.resolution_limited
    return rec
