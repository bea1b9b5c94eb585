"""Kibble-Zurek scaling at the upper critical dimension.

Two-loop flow of the quartic coupling u and the distance r from criticality,
log-corrected freeze-out scales, and the data-collapse fit of correlation
profiles onto K exp(-R / xi_hat) / xi_hat^2.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

BETA_A = 1.5  # one-loop coefficient in du/dl
BETA_B = 17.0 / 6.0  # two-loop coefficient
U_STAR = BETA_A / BETA_B  # nontrivial zero of the beta function, 9/17

DELTA_CORRELATION = 2
DELTA_EXCESS_ENERGY = 4
DELTA_QFI = -1


class ValidityError(ValueError):
    """Parameters outside the asymptotic domain of a closed form."""


@dataclass(frozen=True)
class RgState:
    u: float
    r: float
    ell: float = 0.0


def rg_flow_rhs(state: RgState) -> tuple[float, float]:
    """(du/dl, dr/dl) at two loops."""
    u, r = state.u, state.r
    return -BETA_A * u**2 + BETA_B * u**3, (2.0 - u / 2.0 + (5.0 / 12.0) * u**2) * r


def running_coupling(u0: float, ell):
    """Asymptotic closed form u(l) = u0 / [1 + 3/2 u0 l - 17/9 u0 ln(1 + 3/2 u0 l / (1 - 17/9 u0))]."""
    if not 0 < u0 < U_STAR:
        raise ValidityError(f"u0={u0} outside (0, 9/17)")
    ell = np.asarray(ell, dtype=float)
    g = 1.0 - u0 / U_STAR
    denom = 1.0 + BETA_A * u0 * ell - (u0 / U_STAR) * np.log1p(BETA_A * u0 * ell / g)
    if np.any(denom <= 0):
        raise ValidityError("running coupling denominator nonpositive: outside validity domain")
    out = u0 / denom
    return float(out) if out.ndim == 0 else out


def integrate_running_coupling(u0: float, ells, rtol: float = 1e-10) -> np.ndarray:
    """Direct integration of du/dl (reference for :func:`running_coupling`)."""
    ells = np.atleast_1d(np.asarray(ells, dtype=float))
    sol = solve_ivp(lambda l, y: [-BETA_A * y[0] ** 2 + BETA_B * y[0] ** 3], (0.0, ells.max()), [u0],
                    method="DOP853", t_eval=np.sort(ells), rtol=rtol, atol=1e-14)
    if not sol.success:
        raise RuntimeError(sol.message)
    order = np.argsort(ells)
    out = np.empty_like(ells)
    out[order] = sol.y[0]
    return out


def correlation_length_flow(r: float, u0: float, rtol: float = 1e-10) -> float:
    """xi = exp(l0) where the flow started at (u0, r) reaches r(l0) = 1.

    Integrates ln r instead of r so arbitrarily small starting distances work;
    pass ``r`` as its logarithm via :func:`correlation_length_flow_log` when it
    underflows a float.
    """
    if r <= 0 or r >= 1:
        raise ValueError("need 0 < r < 1")
    return math.exp(correlation_length_flow_log(-math.log(r), u0, rtol))


def correlation_length_flow_log(log_inv_r: float, u0: float, rtol: float = 1e-10) -> float:
    """l0 (= ln xi) for a flow starting at ln r = -log_inv_r."""

    def rhs(l, y):
        u = y[0]
        return [-BETA_A * u**2 + BETA_B * u**3, 2.0 - u / 2.0 + (5.0 / 12.0) * u**2]

    def hit(l, y):
        return y[1]

    hit.terminal = True
    hit.direction = 1
    span = (0.0, log_inv_r)  # ln r grows at rate >= 2 - u/2 > 1, so l0 < log_inv_r
    sol = solve_ivp(rhs, span, [u0, -log_inv_r], method="DOP853", events=hit, rtol=rtol, atol=1e-13)
    if not sol.t_events[0].size:
        raise RuntimeError("flow did not reach r = 1")
    return float(sol.t_events[0][0])


def G_mu(x, mu: float):
    """Sub-leading correction 5/27 + 1/(3 mu) - (34/81) ln(1 + mu x / 3)."""
    return 5.0 / 27.0 + 1.0 / (3.0 * mu) - (34.0 / 81.0) * np.log1p(mu * np.asarray(x) / 3.0)


def correlation_length_refined(r, r0: float, mu: float, prefactor: float = 1.0):
    """xi_GS = prefactor r^(-1/2) x^(1/6) (1 + G_mu(x)/x) with x = ln(r0/r)."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r >= r0):
        raise ValidityError("need 0 < r < r0")
    x = np.log(r0 / r)
    corr = 1.0 + G_mu(x, mu) / x
    if np.any(corr <= 0):
        raise ValidityError("correction factor nonpositive: outside validity domain")
    out = prefactor * r**-0.5 * x ** (1.0 / 6.0) * corr
    return float(out) if out.ndim == 0 else out


def mu_from_coupling(u0: float) -> float:
    """mu for which ln(1 + mu x / 3) reproduces the two-loop logarithm of u(l) at l = x/2."""
    return 2.25 * u0 / (1.0 - u0 / U_STAR)


@dataclass(frozen=True)
class MatchedConstants:
    prefactor: float
    r0: float
    mu: float


def match_flow_constants(u0: float, anchors=(1e5, 1e6)) -> MatchedConstants:
    """Constants of :func:`correlation_length_refined` matched to the flow deep in the asymptotic regime.

    mu is fixed from the coupling; (prefactor, r0) solve xi_refined = xi_flow at
    two anchor values of ln(1/r) where the neglected terms are negligible.
    """
    mu = mu_from_coupling(u0)
    L1, L2 = anchors
    l1, l2 = (correlation_length_flow_log(L, u0) for L in anchors)

    def log_refined(L, ln_r0):
        x = ln_r0 + L
        return 0.5 * L + math.log(x) / 6.0 + math.log1p(float(G_mu(x, mu)) / x)

    # ln(prefactor) cancels in the difference of the two matching equations
    f = lambda ln_r0: (log_refined(L2, ln_r0) - log_refined(L1, ln_r0)) - (l2 - l1)
    ln_r0 = brentq(f, 1e-6, 1e3)
    ln_k = l1 - log_refined(L1, ln_r0)
    return MatchedConstants(math.exp(ln_k), math.exp(ln_r0), mu)


# ---------------------------------------------------------------------------
# freeze-out


@dataclass(frozen=True)
class FreezeOutScales:
    tau_q: float
    t_hat: float
    xi_hat: float
    A: float
    C: float
    mu: float


def _freeze_out_array(tau_q, A, C, mu):
    tau_q = np.asarray(tau_q, dtype=float)
    X = np.log(C * tau_q)
    if np.any(C * tau_q <= 1):
        raise ValidityError("C tau_q must exceed 1")
    corr = 1.0 + G_mu(X, mu) / X
    if np.any(corr <= 0):
        raise ValidityError("freeze-out correction factor nonpositive: outside validity domain")
    return A * tau_q ** (1.0 / 3.0) * X ** (1.0 / 9.0) * corr


def freeze_out(tau_q: float, A: float, C: float, mu: float) -> FreezeOutScales:
    """t_hat = A tau_q^(1/3) [ln C tau_q]^(1/9) (1 + G_mu(ln C tau_q) / ln C tau_q); xi_hat = t_hat (z = 1)."""
    t_hat = float(_freeze_out_array(tau_q, A, C, mu))
    return FreezeOutScales(float(tau_q), t_hat, t_hat, A, C, mu)


def sonic_horizon_time(tau_q: float, speed: float, r0: float, mu: float, prefactor: float = 1.0) -> float:
    """Solve xi_GS(t / tau_q) = speed * t for t on a linear approach r = t / tau_q.

    ln xi - ln(speed t) diverges to +inf at both ends of 0 < t < r0 tau_q; the
    freeze-out time is the crossing on the small-t side of its minimum.
    """
    def f(lt):
        return math.log(correlation_length_refined(math.exp(lt) / tau_q, r0, mu, prefactor)) - math.log(speed) - lt

    hi = math.log(r0 * tau_q)
    lo = hi - 10.0
    while f(lo) < 0:
        lo -= 10.0
    grid = np.linspace(lo, hi - 1e-9, 2001)
    vals = np.array([f(v) if _valid(v, tau_q, r0, mu) else np.inf for v in grid])
    k = int(np.argmin(vals))
    if vals[k] >= 0:
        raise ValidityError(f"no sonic-horizon crossing for tau_q={tau_q}")
    m = minimize_scalar(f, bounds=(grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]), method="bounded",
                        options={"xatol": 1e-12})
    top = m.x if m.fun < 0 else grid[k]
    return math.exp(brentq(f, lo, top, xtol=1e-14, rtol=1e-14))


def _valid(lt, tau_q, r0, mu):
    try:
        correlation_length_refined(math.exp(lt) / tau_q, r0, mu)
        return True
    except ValidityError:
        return False


def sonic_constants(speed: float, r0: float, prefactor: float = 1.0) -> tuple[float, float]:
    """(A, C) of the closed form matched to the horizon condition at leading order.

    t^(3/2) = (K/c) tau^(1/2) x^(1/6) with x ~ (2/3) ln(C tau) gives
    C = (c/K)^... collected as C = (c r0^(3/2) / K), A = (2/3)^(1/9) (K/c)^(2/3).
    """
    C = speed * r0**1.5 / prefactor
    A = (2.0 / 3.0) ** (1.0 / 9.0) * (prefactor / speed) ** (2.0 / 3.0)
    return A, C


def effective_size(L) -> float:
    """L_eff = L (ln L)^(1/4)."""
    L = np.asarray(L, dtype=float)
    if np.any(L < 2) and not np.all(np.isclose(L, math.e)):
        raise ValueError("L must be at least 2")
    out = L * np.log(L) ** 0.25
    return float(out) if out.ndim == 0 else out


def rescale_observable(values, scales: FreezeOutScales, L_eff: float | None = None, kind: str = "correlation",
                       R=None, t=None):
    """Collapse coordinates (x, y) for one dataset.

    correlation: (R / xi_hat, xi_hat^2 C(R)); excess_energy: (xi_hat / L_eff, Q L_eff^4);
    qfi: (xi_hat / L_eff, f_Q / L_eff) or, with ``t`` given, (t / t_hat, f_Q / xi_hat).
    """
    values = np.asarray(values, dtype=float)
    xi = scales.xi_hat
    if kind == "correlation":
        if R is None:
            raise ValueError("correlation rescaling needs R")
        R = np.asarray(R, dtype=float)
        if R.shape != values.shape:
            raise ValueError("R and values differ in length")
        return R / xi, xi**DELTA_CORRELATION * values
    if kind == "excess_energy":
        return np.full(values.shape, xi / L_eff), values * L_eff**DELTA_EXCESS_ENERGY
    if kind == "qfi":
        if t is not None:
            t = np.asarray(t, dtype=float)
            if t.shape != values.shape:
                raise ValueError("t and values differ in length")
            return t / scales.t_hat, values * xi**DELTA_QFI
        return np.full(values.shape, xi / L_eff), values / L_eff
    raise ValueError(f"unknown observable kind {kind!r}")


# ---------------------------------------------------------------------------
# collapse fit


@dataclass
class CollapseData:
    """Flattened correlation profiles: one entry per (L, tau_q, R) point with R >= 1."""

    R: np.ndarray
    C: np.ndarray
    tau_q: np.ndarray
    L: np.ndarray | None = None

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        self.tau_q = np.asarray(self.tau_q, dtype=float)
        self.L = None if self.L is None else np.asarray(self.L, dtype=float)
        n = self.R.size
        if self.C.size != n or self.tau_q.size != n or (self.L is not None and self.L.size != n):
            raise ValueError("R, C, tau_q (and L) must have equal length")
        if np.any(self.R < 1):
            raise ValueError("collapse data must exclude R = 0")
        if np.unique(self.tau_q).size < 2:
            raise ValueError("need at least two distinct tau_q values")

    @classmethod
    def from_profiles(cls, profiles) -> "CollapseData":
        """``profiles``: iterable of (L, tau_q, R array, C array)."""
        R, C, T, Ls = [], [], [], []
        for L, tau, r, c in profiles:
            r, c = np.asarray(r, dtype=float), np.asarray(c, dtype=float)
            keep = r >= 1
            R.append(r[keep]); C.append(c[keep])
            T.append(np.full(keep.sum(), tau)); Ls.append(np.full(keep.sum(), L))
        return cls(np.concatenate(R), np.concatenate(C), np.concatenate(T), np.concatenate(Ls))

    def descriptor(self) -> dict:
        sizes = [] if self.L is None else sorted({int(x) for x in self.L})
        return {"n_points": int(self.R.size), "system_sizes": sizes,
                "tau_q": sorted(float(x) for x in np.unique(self.tau_q))}


def collapse_residuals(data: CollapseData, A, C, mu, K, xi_hat=None, errors=None) -> np.ndarray:
    """xi_hat_i^2 C(R_i) - K exp(-R_i / xi_hat_i).

    With ``errors`` (standard errors of C(R_i)) each residual is divided by the
    propagated error xi_hat_i^2 errors_i, turning the cost into an ordinary
    chi-square on the raw profiles.
    """
    if xi_hat is None:
        xi_hat = _freeze_out_array(data.tau_q, A, C, mu)
    res = xi_hat**2 * data.C - K * np.exp(-data.R / xi_hat)
    return res if errors is None else res / (xi_hat**2 * errors)


def collapse_chi(data: CollapseData, A, C, mu, K, xi_hat=None, errors=None) -> float:
    """Root-mean-square collapse deviation."""
    r = collapse_residuals(data, A, C, mu, K, xi_hat, errors)
    return float(np.sqrt(np.mean(r**2)))


def optimal_K(data: CollapseData, xi_hat) -> float:
    """Least-squares K for fixed freeze-out scales (the model is linear in K)."""
    e = np.exp(-data.R / xi_hat)
    return float(np.dot(e, xi_hat**2 * data.C) / np.dot(e, e))


@dataclass
class TrustRegionResult:
    x: np.ndarray
    f: float
    iterations: int
    status: str  # converged | maxiter | boundary
    history: list = field(default_factory=list)  # objective after each accepted step


def _tr_subproblem(g, H, radius):
    """Exact minimiser of g.p + p.H.p/2 over |p| <= radius (small dense problems)."""
    lam, V = np.linalg.eigh(H)
    gt = V.T @ g
    if lam[0] > 0:
        p = -V @ (gt / lam)
        if np.linalg.norm(p) <= radius:
            return p

    def norm_at(shift):
        return np.linalg.norm(gt / (lam + shift))

    lo = max(0.0, -lam[0]) + 1e-15 * max(1.0, abs(lam).max())
    if norm_at(lo) <= radius:
        # hard case: move to the boundary along the lowest eigenvector
        p = -V @ (gt / (lam + lo))
        tau = math.sqrt(max(radius**2 - p @ p, 0.0))
        return p + tau * V[:, 0]
    hi = lo + 1.0
    while norm_at(hi) > radius:
        hi = lo + 2 * (hi - lo)
    shift = brentq(lambda s: norm_at(s) - radius, lo, hi, xtol=1e-14)
    return -V @ (gt / (lam + shift))


def trust_region_newton(fun, x0, *, radius=0.5, max_radius=5.0, gtol=1e-12, ftol=0.0, max_iter=200,
                        fd_step=1e-5, lower=None, upper=None) -> TrustRegionResult:
    """Trust-region Newton with finite-difference gradient and Hessian.

    ``fun`` may return inf outside its domain; such trial points are rejected.
    Accepted steps strictly decrease the objective.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, float)

    def f_box(y):
        if np.any(y < lower) or np.any(y > upper):
            return np.inf
        v = fun(y)
        return v if np.isfinite(v) else np.inf

    def grad(y):
        h = fd_step * np.maximum(1.0, np.abs(y))
        g = np.empty(n)
        for i in range(n):
            e = np.zeros(n); e[i] = h[i]
            g[i] = (fun(y + e) - fun(y - e)) / (2 * h[i])
        return g

    def hess(y):
        h = 1e-4 * np.maximum(1.0, np.abs(y))
        H = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n); e[i] = h[i]
            H[:, i] = (grad(y + e) - grad(y - e)) / (2 * h[i])
        return 0.5 * (H + H.T)

    f = f_box(x)
    if not np.isfinite(f):
        raise ValidityError("starting point outside the domain of the objective")
    history = [f]
    status = "maxiter"
    it = 0
    for it in range(1, max_iter + 1):
        if f <= ftol:
            status = "converged"
            break
        try:
            g = grad(x)
            H = hess(x)
        except (ValidityError, FloatingPointError):
            status = "boundary"
            break
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
            status = "boundary"
            break
        if np.linalg.norm(g) <= gtol * max(1.0, f):
            status = "converged"
            break
        p = _tr_subproblem(g, H, radius)
        predicted = -(g @ p + 0.5 * p @ H @ p)
        f_new = f_box(x + p)
        rho = (f - f_new) / predicted if predicted > 0 else -np.inf
        if rho < 0.25:
            radius *= 0.25
        elif rho > 0.75 and np.linalg.norm(p) > 0.99 * radius:
            radius = min(2 * radius, max_radius)
        if rho > 0.1 and f_new < f:
            x, f = x + p, f_new
            history.append(f)
        if radius < 1e-14 * max(1.0, np.linalg.norm(x)):
            status = "converged" if np.linalg.norm(g) <= 1e-6 * max(1.0, math.sqrt(f)) else "stalled"
            break
    near_edge = np.any(x - lower < 1e-6) or np.any(upper - x < 1e-6)
    if near_edge:
        status = "boundary"
    return TrustRegionResult(x, f, it, status, history)


@dataclass
class CollapseFit:
    A: float
    C: float
    mu: float
    K: float
    chi_min: float
    dataset: dict
    xi_hat: np.ndarray
    residuals: np.ndarray
    iterations: int
    starts: list
    history: list

    @property
    def parameters(self) -> dict:
        return {"A": self.A, "C": self.C, "mu": self.mu, "K": self.K}

    def to_dict(self) -> dict:
        return {"parameters": self.parameters, "chi_min": self.chi_min, "dataset": self.dataset,
                "iterations": self.iterations, "starts": self.starts, "residuals": self.residuals.tolist(),
                "xi_hat": self.xi_hat.tolist(), "history": self.history}


class CollapseFitError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


DEFAULT_C_GRID = tuple(np.logspace(0, 3, 4))
DEFAULT_MU_GRID = tuple(np.logspace(-2, 0, 3))


def fit_collapse(data: CollapseData, init=(0.35, 80.0, 0.2, 0.2), *, c_grid=DEFAULT_C_GRID,
                 mu_grid=DEFAULT_MU_GRID, errors=None, max_iter: int = 300, log_bounds: float = 6.0) -> CollapseFit:
    """Fit (A, C, mu, K) by minimising the RMS collapse deviation.

    Internally the mean squared deviation is minimised over (ln A, ln C, ln mu, K)
    by trust-region Newton, started from ``init`` and from every (C, mu) grid
    pair (A and K taken from ``init``).  Positive parameters are confined to
    ``init`` times exp(+-log_bounds) to exclude the degenerate A -> 0, K -> 0
    direction, along which the deviation vanishes trivially.

    ``errors`` (standard errors of C(R)) switches to an error-weighted
    chi-square.  This variant is NOT the unweighted literature cost; it is
    offered because the unweighted cost multiplies noise by xi_hat^2, which
    biases the fitted (C, mu) towards smaller xi_hat when the data are noisy.
    """
    A0, C0, mu0, K0 = (float(v) for v in init)
    tau_min = float(data.tau_q.min())

    def objective(p):
        A, C, mu, K = math.exp(p[0]), math.exp(p[1]), math.exp(p[2]), p[3]
        if C * tau_min <= 1:
            return np.inf
        try:
            xi = _freeze_out_array(data.tau_q, A, C, mu)
        except ValidityError:
            return np.inf
        r = collapse_residuals(data, A, C, mu, K, xi, errors)
        return float(np.mean(r**2))

    centre = np.log([A0, C0, mu0])
    lower = np.concatenate([centre - log_bounds, [-np.inf]])
    upper = np.concatenate([centre + log_bounds, [np.inf]])
    starts = [(A0, C0, mu0, K0)] + [(A0, c, m, K0) for c in c_grid for m in mu_grid]
    runs = []
    for k, (A, C, mu, K) in enumerate(starts):
        p0 = np.array([math.log(A), math.log(C), math.log(mu), K])
        p0[:3] = np.clip(p0[:3], lower[:3] + 1e-3, upper[:3] - 1e-3)
        if not np.isfinite(objective(p0)):
            runs.append({"start": k, "status": "invalid-start"})
            continue
        res = trust_region_newton(objective, p0, max_iter=max_iter, lower=lower, upper=upper)
        runs.append({"start": k, "status": res.status, "chi": math.sqrt(res.f), "iterations": res.iterations,
                     "result": res})
    ok = [r for r in runs if r["status"] == "converged"]
    pool = ok or [r for r in runs if "result" in r]
    if not pool:
        raise CollapseFitError("no valid starting point for the collapse fit")
    best = min(pool, key=lambda r: (r["chi"], r["start"]))
    res = best["result"]
    A, C, mu, K = math.exp(res.x[0]), math.exp(res.x[1]), math.exp(res.x[2]), float(res.x[3])
    if not ok:
        raise CollapseFitError(f"collapse fit did not converge from any start; best chi={best['chi']:.3e} at "
                               f"A={A:.6g}, C={C:.6g}, mu={mu:.6g}, K={K:.6g}", best=(A, C, mu, K, best["chi"]))
    xi = _freeze_out_array(data.tau_q, A, C, mu)
    resid = collapse_residuals(data, A, C, mu, K, xi, errors)
    summary = [{k: v for k, v in r.items() if k != "result"} for r in runs]
    return CollapseFit(A, C, mu, K, collapse_chi(data, A, C, mu, K, xi, errors), data.descriptor(), xi, resid,
                       res.iterations, summary, [math.sqrt(v) for v in res.history])


def synthetic_profiles(tau_qs, R_max: int, A, C, mu, K, noise: float = 0.0, seed: int = 0, L: int | None = None):
    """Correlation profiles on the exact scaling form, with optional multiplicative noise."""
    rng = np.random.default_rng(seed)
    out = []
    for tau in tau_qs:
        xi = freeze_out(tau, A, C, mu).xi_hat
        R = np.arange(1, R_max + 1, dtype=float)
        Cr = K * np.exp(-R / xi) / xi**2
        if noise:
            Cr = Cr * (1.0 + noise * rng.standard_normal(R.size))
        out.append((L if L is not None else R_max * 2, float(tau), R, Cr))
    return out


def scales_dict(s: FreezeOutScales) -> dict:
    return asdict(s)
