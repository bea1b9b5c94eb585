"""Time-dependent variational principle for real parameters.

With real theta and complex ln Psi the equations of motion close as

    Re(S) theta_dot = Im(F)      (real time)
    Re(S) theta_dot = -Re(F)     (imaginary time)

with S_jk = <O_j* O_k>_c and F_j = <O_j* E_loc>_c.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .hamiltonian import local_energies
from .sampler import SamplerConfig, exact_enumeration, sample

log = logging.getLogger(__name__)


class RankDeficientError(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    pass


@dataclass
class Regularization:
    cutoff: float = 1e-8  # relative to the largest eigenvalue
    shift: float = 1e-10


@dataclass
class TdvpEstimates:
    S_real: np.ndarray
    F: np.ndarray
    energy: complex = 0.0
    energy_variance: float = 0.0
    n_eff: float = 0.0
    n_excluded: int = 0
    S_imag: np.ndarray | None = None

    @classmethod
    def from_matrices(cls, S, F, **kw) -> "TdvpEstimates":
        S = np.asarray(S)
        return cls(np.ascontiguousarray(S.real), np.asarray(F, dtype=complex), S_imag=np.ascontiguousarray(S.imag),
                   **kw)

    @property
    def S(self) -> np.ndarray:
        if self.S_imag is None:
            raise ValueError("imaginary part of S was not computed; pass full=True to estimate_sf")
        return self.S_real + 1j * self.S_imag


def estimate_sf(psi, H, ensemble, t: float = 0.0, full: bool = False, max_excluded: float = 1e-3) -> TdvpEstimates:
    """Connected-correlator estimates of S and F over an ensemble."""
    configs, weights, _ = ensemble.unique()
    if configs.shape[0] == 0:
        raise ValueError("empty ensemble")
    cached = getattr(ensemble, "log_derivatives", None)
    if cached is not None and cached.shape[0] == configs.shape[0]:
        logs, O = ensemble.log_amplitudes, cached
    else:
        logs, O = psi.evaluate(configs)
    lookup = ensemble.lookup if ensemble.lookup is not None else psi
    eloc = local_energies(H, configs, lookup, t, log_amplitudes=logs)
    bad = ~np.isfinite(eloc) | ~np.all(np.isfinite(O), axis=1)
    n_bad = int(bad.sum())
    if n_bad:
        frac = float(weights[bad].sum())
        if frac > max_excluded:
            raise FloatingPointError(f"non-finite local energies on {frac:.2%} of the ensemble weight")
        log.warning("excluded %d configurations with non-finite local energy", n_bad)
        keep = ~bad
        configs, weights, O, eloc = configs[keep], weights[keep], O[keep], eloc[keep]
        weights = weights / weights.sum()
    O_mean = weights @ O
    Oc = O - O_mean
    E = complex(weights @ eloc)
    Ec = eloc - E
    sw = np.sqrt(weights)[:, None]
    A, B = Oc.real * sw, Oc.imag * sw
    X = np.concatenate([A, B])
    S_real = X.T @ X
    S_real = 0.5 * (S_real + S_real.T)
    S_imag = None
    if full:
        S_imag = A.T @ B
        S_imag = S_imag - S_imag.T
    F = Oc.conj().T @ (weights * Ec)
    with np.errstate(over="ignore", invalid="ignore"):
        var = float(weights @ np.abs(Ec) ** 2)
    n_eff = 1.0 / float(np.sum(weights**2))
    return TdvpEstimates(S_real, F, E, var, n_eff, n_bad, S_imag)


def solve_tdvp(est: TdvpEstimates, reg: Regularization | None = None, imaginary: bool = False,
               return_info: bool = False):
    """Regularised pseudo-inverse solve via the eigendecomposition of Re(S)."""
    reg = reg or Regularization()
    rhs = -est.F.real if imaginary else est.F.imag
    lam, V = np.linalg.eigh(est.S_real)
    top = lam[-1]
    keep = lam > reg.cutoff * top if top > 0 else np.zeros_like(lam, dtype=bool)
    if not keep.any():
        raise RankDeficientError("rank-deficient geometric tensor: no eigenvalue above the cutoff")
    Vk = V[:, keep]
    coef = (Vk.T @ rhs) / (lam[keep] + reg.shift)
    theta_dot = Vk @ coef
    if return_info:
        return theta_dot, {"rank": int(keep.sum()), "lambda_max": float(top),
                           "lambda_min_kept": float(lam[keep][0])}
    return theta_dot


# ---------------------------------------------------------------------------
# integration


@dataclass
class IntegratorConfig:
    dt: float = 1e-3
    tol: float = 1e-4
    dt_min: float = 1e-8
    dt_max: float = 0.05
    regularization: Regularization = field(default_factory=Regularization)
    adaptive: bool = True

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if not self.dt_min < self.dt_max:
            raise ValueError("dt_min must be smaller than dt_max")


@dataclass
class StepResult:
    theta: np.ndarray
    dt: float  # step actually taken
    error: float
    dt_next: float
    rejected: int = 0
    k1_info: dict = field(default_factory=dict)


def _controller(dt, err, tol):
    factor = 2.0 if err == 0 else min(2.0, max(0.2, 0.9 * math.sqrt(tol / err)))
    return dt * factor


def heun_step(theta: np.ndarray, t: float, dt: float, rhs: Callable, cfg: IntegratorConfig,
              k1=None) -> StepResult:
    """Adaptive second-order Heun step; ``rhs(theta, t)`` returns (theta_dot, info)."""
    if not cfg.dt_min <= dt <= cfg.dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt} outside [{cfg.dt_min}, {cfg.dt_max}]")
    if k1 is None:
        k1 = rhs(theta, t)
    k1_dot, info = k1
    rejected = 0
    while True:
        theta_p = theta + dt * k1_dot
        k2_dot, _ = rhs(theta_p, t + dt)
        theta_new = theta + 0.5 * dt * (k1_dot + k2_dot)
        err = np.linalg.norm(theta_new - theta_p) / 2 / (np.linalg.norm(theta) + 1)
        if not cfg.adaptive:
            return StepResult(theta_new, dt, err, dt, 0, info)
        dt_next = min(_controller(dt, err, cfg.tol), cfg.dt_max)
        if err <= cfg.tol:
            return StepResult(theta_new, dt, err, dt_next, rejected, info)
        rejected += 1
        dt = dt_next
        if dt < cfg.dt_min:
            raise IntegrationError(
                f"step size underflow at t={t:.6g}: dt={dt:.3g} < dt_min={cfg.dt_min:.3g}, error={err:.3g}, "
                f"|theta|={np.linalg.norm(theta):.3g}, energy={info.get('energy')}"
            )


class TdvpDriver:
    """Builds the TDVP right-hand side from a Hamiltonian and an ensemble strategy.

    ``sampler`` None means exact enumeration; otherwise Metropolis samples with
    chains warm-started from the previous call.
    """

    def __init__(self, psi, H, sampler: SamplerConfig | None = None, reg: Regularization | None = None,
                 imaginary: bool = False):
        self.psi = psi
        self.H = H
        self.sampler = sampler
        self.reg = reg or Regularization()
        self.imaginary = imaginary
        self._chains = None
        self._calls = 0
        self.last = None

    def ensemble(self, psi):
        if self.sampler is None:
            return exact_enumeration(psi, derivatives=True)
        cfg = self.sampler
        cfg = SamplerConfig(cfg.n_samples, cfg.n_chains, cfg.burn_in, cfg.thin, cfg.seed + self._calls,
                            cfg.table_sites)
        self._calls += 1
        batch = sample(psi, cfg, init=self._chains)
        self._chains = batch.final_states
        return batch

    def __call__(self, theta, t):
        psi = self.psi.with_theta(theta)
        ens = self.ensemble(psi)
        est = estimate_sf(psi, self.H, ens, t)
        theta_dot, sinfo = solve_tdvp(est, self.reg, imaginary=self.imaginary, return_info=True)
        info = {"energy": est.energy, "energy_variance": est.energy_variance, "n_eff": est.n_eff, **sinfo}
        if hasattr(ens, "acceptance_rate"):
            info["acceptance_rate"] = ens.acceptance_rate
        self.last = (psi, ens, est)
        return theta_dot, info


def evolve(psi, H, t0: float, t1: float, cfg: IntegratorConfig, sampler: SamplerConfig | None = None,
           measure_times=(), observer: Callable | None = None, step_log: Callable | None = None,
           checkpoint: Callable | None = None, checkpoint_every: int = 0):
    """Real-time TDVP from t0 to t1, landing exactly on each measurement time.

    ``observer(t, psi, ensemble)`` is called at every measurement time in
    [t0, t1]; ``step_log(record)`` receives one dict per accepted step and
    ``checkpoint(t, theta, dt)`` is called every ``checkpoint_every`` steps with
    the current step-size proposal.
    """
    driver = TdvpDriver(psi, H, sampler, cfg.regularization)
    theta = psi.theta.copy()
    t = t0
    dt = cfg.dt
    marks = sorted({float(m) for m in measure_times if t0 - 1e-12 <= m <= t1 + 1e-12})
    stops = sorted({m for m in marks if m > t0 + 1e-12} | {t1})

    def observe(when):
        if observer is not None and any(abs(when - m) <= 1e-12 for m in marks):
            p = psi.with_theta(theta)
            observer(when, p, driver.ensemble(p))

    observe(t0)
    n_steps = 0
    for stop in stops:
        while stop - t > 1e-12:
            h = min(dt, stop - t)
            truncated = h < dt
            step_cfg = cfg
            if h < cfg.dt_min:
                step_cfg = IntegratorConfig(h, cfg.tol, h, cfg.dt_max, cfg.regularization, cfg.adaptive)
            res = heun_step(theta, t, h, driver, step_cfg)
            theta = res.theta
            t = stop if abs(stop - (t + res.dt)) <= 1e-12 else t + res.dt
            # a step shortened only to land on a stop keeps the previous proposal
            if not (truncated and res.rejected == 0):
                dt = res.dt_next
            n_steps += 1
            if step_log is not None:
                info = res.k1_info
                step_log({"t": t, "dt": res.dt, "error": res.error, "rejected": res.rejected,
                          "energy": float(np.real(info.get("energy", np.nan))),
                          "energy_variance": info.get("energy_variance"), "rank": info.get("rank"),
                          "lambda_max": info.get("lambda_max"), "lambda_min_kept": info.get("lambda_min_kept"),
                          "n_eff": info.get("n_eff"), "acceptance_rate": info.get("acceptance_rate")})
            if checkpoint is not None and checkpoint_every and n_steps % checkpoint_every == 0:
                checkpoint(t, theta, dt)
        observe(stop)
    return psi.with_theta(theta)


@dataclass
class GroundStateResult:
    psi: object
    energy: float
    energy_error: float
    variance_per_site: float
    iterations: int
    history: list


def ground_state_search(psi, H, sampler: SamplerConfig | None = None, *, step: float = 0.02,
                        max_iters: int = 2000, variance_threshold: float = 1e-8, patience: int = 200,
                        reg: Regularization | None = None, min_iters: int = 0) -> GroundStateResult:
    """Imaginary-time TDVP (Euler steps in tau) until the energy variance per site is small.

    The default diagonal shift is large (1e-2): it only bends the descent path,
    not its fixed point, and keeps explicit steps stable near product states.
    """
    driver = TdvpDriver(psi, H, sampler, reg or Regularization(cutoff=1e-8, shift=1e-2), imaginary=True)
    theta = psi.theta.copy()
    N = psi.n_sites
    history = []
    best, best_iter = np.inf, 0
    var_site = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        theta_dot, info = driver(theta, 0.0)
        E = float(np.real(info["energy"]))
        var_site = info["energy_variance"] / N
        history.append((E, var_site))
        if not math.isfinite(E):
            raise IntegrationError(f"non-finite energy at iteration {it}; reduce step or raise the shift")
        if var_site < variance_threshold and it > min_iters:
            break
        if E < best - 1e-12 * max(1.0, abs(E)):
            best, best_iter = E, it
        elif it - best_iter > patience:
            raise IntegrationError(f"energy has not decreased for {patience} iterations (best {best:.10g})")
        if it == max_iters:
            break  # keep the parameters the reported estimates were computed on
        theta = theta + step * theta_dot
    final = psi.with_theta(theta)
    _, ens, est = driver.last
    err = 0.0 if sampler is None else math.sqrt(est.energy_variance / ens.n_samples)
    return GroundStateResult(final, float(np.real(est.energy)), err, var_site, it, history)
