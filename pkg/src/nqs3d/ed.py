"""Exact state-vector reference for up to 24 spins.

Hamiltonians act matrix-free on 2^N amplitudes: diagonal strings as a
precomputed vector, flipping strings as axis reversals of the (2,)*N view.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, eigsh

from .hamiltonian import PauliStringHamiltonian, compile_terms
from .lattice import Lattice3D

MAX_SITES = 24


def _check_size(n_sites: int):
    if n_sites > MAX_SITES:
        raise ValueError(f"{n_sites} spins exceed the exact-state limit of {MAX_SITES}")


def site_spins(n_sites: int, site: int) -> np.ndarray:
    """sigma^z eigenvalue of ``site`` for every basis index."""
    k = np.arange(2**n_sites, dtype=np.int64)
    return (1 - 2 * ((k >> (n_sites - 1 - site)) & 1)).astype(np.float64)


def flip_sites(psi: np.ndarray, n_sites: int, sites) -> np.ndarray:
    """psi[k ^ mask(sites)] without building index arrays."""
    out = psi
    for site in sites:
        out = out.reshape(2**site, 2, 2 ** (n_sites - 1 - site))[:, ::-1, :].reshape(-1)
    return out if out is not psi else psi.copy()


@dataclass
class DenseState:
    amplitudes: np.ndarray
    lattice: Lattice3D | None = None

    @property
    def n_sites(self) -> int:
        return int(round(math.log2(self.amplitudes.size)))

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "DenseState":
        return DenseState(self.amplitudes / self.norm(), self.lattice)

    def probabilities(self) -> np.ndarray:
        p = np.abs(self.amplitudes) ** 2
        return p / p.sum()

    @classmethod
    def all_up(cls, lattice: Lattice3D) -> "DenseState":
        _check_size(lattice.n_sites)
        a = np.zeros(2**lattice.n_sites, dtype=complex)
        a[0] = 1.0
        return cls(a, lattice)

    @classmethod
    def x_product(cls, lattice: Lattice3D) -> "DenseState":
        _check_size(lattice.n_sites)
        D = 2**lattice.n_sites
        return cls(np.full(D, 1 / math.sqrt(D), dtype=complex), lattice)

    @classmethod
    def ghz(cls, lattice: Lattice3D) -> "DenseState":
        _check_size(lattice.n_sites)
        a = np.zeros(2**lattice.n_sites, dtype=complex)
        a[0] = a[-1] = 1 / math.sqrt(2)
        return cls(a, lattice)


class DenseOperator:
    """Matrix-free form of a (possibly scheduled) Pauli-string Hamiltonian."""

    def __init__(self, H: PauliStringHamiltonian):
        _check_size(H.n_sites)
        self.n_sites = H.n_sites
        self.schedule = dict(H.schedule)
        self.parts = {}
        self._spins = {}
        for group, Hg in H.groups().items():
            self.parts[group] = self._compile(Hg)
        self.is_real = all(
            np.isrealobj(d) and all(np.isrealobj(ph) for _, ph in flips) for d, flips in self.parts.values()
        )
        self.max_coupling = max((abs(t.coefficient) for t in H.terms), default=0.0)

    def _spin(self, site):
        if site not in self._spins:
            self._spins[site] = site_spins(self.n_sites, site)
        return self._spins[site]

    def _phase(self, entries):
        D = 2**self.n_sites
        total = np.zeros(D, dtype=complex)
        for coeff, z_sites, y_sites in entries:
            v = np.full(D, coeff, dtype=complex)
            for s in z_sites:
                v *= self._spin(s)
            for s in y_sites:
                v *= -1j * self._spin(s)
            total += v
        if np.all(total.imag == 0):
            total = total.real.copy()
        return total

    def _compile(self, Hg):
        compiled = compile_terms(Hg)
        diag = np.zeros(2**self.n_sites)
        flips = []
        for mask, entries in zip(compiled.masks, compiled.entries):
            phase = self._phase(entries)
            if mask.any():
                flips.append((tuple(np.flatnonzero(mask)), phase))
            else:
                diag = diag + phase
        return diag, flips

    def weights(self, t: float) -> dict:
        return {g: (complex(self.schedule[g](t)) if g in self.schedule else 1.0) for g in self.parts}

    def apply(self, psi: np.ndarray, t: float = 0.0, weights=None) -> np.ndarray:
        weights = self.weights(t) if weights is None else weights
        out = None
        for group, (diag, flips) in self.parts.items():
            w = weights[group]
            if w == 0:
                continue
            acc = diag * psi
            for sites, phase in flips:
                acc += phase * flip_sites(psi, self.n_sites, sites)
            acc = acc * w if w != 1.0 else acc
            out = acc if out is None else out + acc
        return np.zeros_like(psi) if out is None else out

    def linear_operator(self, t: float = 0.0) -> LinearOperator:
        w = self.weights(t)
        real = self.is_real and all(abs(complex(v).imag) == 0 for v in w.values())
        dtype = np.float64 if real else np.complex128
        if real:
            w = {g: complex(v).real for g, v in w.items()}
        D = 2**self.n_sites
        return LinearOperator((D, D), matvec=lambda v: self.apply(np.asarray(v).reshape(-1), weights=w), dtype=dtype)

    def expectation(self, state: DenseState, t: float = 0.0) -> complex:
        a = state.amplitudes
        return complex(np.vdot(a, self.apply(a, t)) / np.vdot(a, a))


def apply_hamiltonian(H: PauliStringHamiltonian, state: DenseState, t: float = 0.0) -> DenseState:
    op = H if isinstance(H, DenseOperator) else DenseOperator(H)
    return DenseState(op.apply(np.asarray(state.amplitudes, dtype=complex), t), state.lattice)


class KrylovError(RuntimeError):
    pass


def krylov_expm(op, psi: np.ndarray, dt: float, t: float, m_max: int = 40, tol: float = 1e-12):
    """exp(-i H(t) dt) psi by Lanczos; returns (vector, error estimate)."""
    weights = op.weights(t)
    beta0 = np.linalg.norm(psi)
    V = [psi / beta0]
    alpha, beta = [], []
    err = np.inf
    for j in range(m_max):
        w = op.apply(V[j], weights=weights)
        a = np.vdot(V[j], w).real
        w = w - a * V[j] - (beta[-1] * V[j - 1] if j > 0 else 0)
        # full reorthogonalisation keeps the small basis accurate
        for v in V:
            w = w - np.vdot(v, w) * v
        alpha.append(a)
        b = np.linalg.norm(w)
        T = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
        small = scipy.linalg.expm(-1j * dt * T)[:, 0]
        err = b * abs(small[-1]) if j < m_max else np.inf
        if b < 1e-14 or err < tol:
            break
        beta.append(b)
        V.append(w / b)
    out = beta0 * sum(c * v for c, v in zip(small, V[: len(small)]))
    return out, err


def propagate(state: DenseState, H, t0: float, t1: float, dt: float, tol: float = 1e-12,
              m_max: int = 40, callback=None) -> DenseState:
    """Evolve from t0 to t1 with exp(-i H(t_mid) dt) steps (midpoint coupling evaluation)."""
    op = H if isinstance(H, DenseOperator) else DenseOperator(H)
    span = t1 - t0
    if span == 0:
        return DenseState(state.amplitudes.copy(), state.lattice)
    n = max(1, math.ceil(abs(span) / dt - 1e-12))
    step = span / n
    scale = max(op.max_coupling * max(abs(v) for v in op.weights(t0).values()),
                op.max_coupling * max(abs(v) for v in op.weights(t1).values()))
    if abs(step) * scale >= 0.1 + 1e-12:
        raise ValueError(f"dt={abs(step):.3g} does not resolve coupling scale {scale:.3g} (need dt*scale < 0.1)")
    psi = np.asarray(state.amplitudes, dtype=complex).copy()
    t = t0
    for _ in range(n):
        psi, t = _adaptive_step(op, psi, t, step, tol, m_max)
        psi /= np.linalg.norm(psi)
        if callback is not None:
            callback(t, DenseState(psi, state.lattice))
    return DenseState(psi, state.lattice)


def _adaptive_step(op, psi, t, step, tol, m_max, depth=0):
    new, err = krylov_expm(op, psi, step, t + step / 2, m_max=m_max, tol=tol)
    if err <= tol:
        return new, t + step
    if depth > 20:
        raise KrylovError(f"Krylov propagation failed to converge at t={t}")
    half = step / 2
    psi, t = _adaptive_step(op, psi, t, half, tol, m_max, depth + 1)
    return _adaptive_step(op, psi, t, half, tol, m_max, depth + 1)


@dataclass
class GroundState:
    energy: float
    state: DenseState
    degenerate: bool
    gap: float
    residual: float


def ground_state(H, lattice: Lattice3D | None = None, t: float = 0.0, tol_degenerate: float = 1e-8) -> GroundState:
    """Lowest eigenpair by Lanczos (ARPACK); flags a degenerate ground space."""
    op = H if isinstance(H, DenseOperator) else DenseOperator(H)
    lin = op.linear_operator(t)
    D = lin.shape[0]
    if D <= 64:
        dense = np.column_stack([lin.matvec(e) for e in np.eye(D, dtype=lin.dtype)])
        vals, vecs = np.linalg.eigh(dense)
    else:
        rng = np.random.default_rng(0)
        v0 = rng.normal(size=D).astype(lin.dtype)
        vals, vecs = eigsh(lin, k=2, which="SA", v0=v0, tol=0)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    e0 = float(vals[0])
    v = vecs[:, 0].astype(complex)
    v /= np.linalg.norm(v)
    gap = float(vals[1] - vals[0])
    residual = float(np.linalg.norm(op.apply(v, t) - e0 * v))
    return GroundState(e0, DenseState(v, lattice), gap < tol_degenerate * max(1.0, abs(e0)), gap, residual)


# ---------------------------------------------------------------------------
# exact observables


def magnetization(state: DenseState, axis: str) -> float:
    """Site-averaged <sigma^axis>."""
    a = state.amplitudes / state.norm()
    N = state.n_sites
    total = 0.0
    for i in range(N):
        s = site_spins(N, i)
        if axis == "z":
            total += float(np.sum(np.abs(a) ** 2 * s))
        elif axis == "x":
            total += float(np.vdot(a, flip_sites(a, N, [i])).real)
        elif axis == "y":
            total += float(np.vdot(a, -1j * s * flip_sites(a, N, [i])).real)
        else:
            raise ValueError(f"axis must be x, y or z, got {axis!r}")
    return total / N


def qfi_density(state: DenseState) -> float:
    p = state.probabilities()
    N = state.n_sites
    M = sum(site_spins(N, i) for i in range(N))
    return float((p @ M**2 - (p @ M) ** 2) / N)


def correlation_profile(state: DenseState, lattice: Lattice3D, max_R: int) -> np.ndarray:
    p = state.probabilities()
    N = lattice.n_sites
    spins = [site_spins(N, i) for i in range(N)]
    out = []
    for R in range(max_R + 1):
        vals = [p @ (spins[i] * spins[lattice.shifted(i, ax, R)]) for i in range(N) for ax in range(3)]
        out.append(float(np.mean(vals)))
    return np.array(out)


def energy(H, state: DenseState, t: float = 0.0) -> float:
    op = H if isinstance(H, DenseOperator) else DenseOperator(H)
    return op.expectation(state, t).real
