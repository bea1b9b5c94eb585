"""Metropolis sampling from |Psi|^2 and exact full-basis ensembles."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .lattice import basis_configurations, configuration_index
from .network import AmplitudeTable

MAX_ENUMERATION_SITES = 24


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 4000
    n_chains: int = 100
    burn_in: int = 10
    thin: int = 1
    seed: int = 0
    table_sites: int = 16  # lattices up to this size use a full-basis amplitude table

    def __post_init__(self):
        if self.n_samples <= 0 or self.n_chains <= 0:
            raise ValueError("n_samples and n_chains must be positive")
        if self.n_samples % self.n_chains:
            raise ValueError(f"n_samples={self.n_samples} not divisible by n_chains={self.n_chains}")
        if self.burn_in < 1:
            raise ValueError("burn_in must be at least one sweep")
        if self.thin < 1:
            raise ValueError("thin must be at least one sweep")


class Ensemble:
    """Weighted set of configurations; weights sum to one."""

    configs: np.ndarray
    weights: np.ndarray
    log_amplitudes: np.ndarray

    def unique(self):
        """(configs, weights, log amplitudes) with repeated configurations merged."""
        return self.configs, self.weights, self.log_amplitudes

    def expand(self, unique_values) -> np.ndarray:
        """Per-entry values from values computed on :meth:`unique` configurations."""
        return np.asarray(unique_values)

    def mean(self, values) -> float | complex:
        return np.asarray(values).T @ self.weights

    def stderr(self, values) -> float:
        return 0.0

    @property
    def lookup(self):
        """Object answering ``log_psi`` queries for connected configurations, if cheap."""
        return None


@dataclass
class ExactEnsemble(Ensemble):
    configs: np.ndarray
    weights: np.ndarray
    log_amplitudes: np.ndarray
    table: AmplitudeTable | None = None
    log_derivatives: np.ndarray | None = None  # (2^N, P), filled when requested

    @property
    def n_samples(self) -> int:
        return self.configs.shape[0]

    @property
    def lookup(self):
        return self.table


@dataclass
class SampleBatch(Ensemble):
    configs: np.ndarray  # (n_samples, N), chain-major order
    log_amplitudes: np.ndarray
    acceptance_rate: float
    n_chains: int
    burn_in_acceptance: float = 1.0
    final_states: np.ndarray | None = None
    table: AmplitudeTable | None = None
    diagnostics: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_samples(self) -> int:
        return self.configs.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_samples, 1.0 / self.n_samples)

    @property
    def chain_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_chains), self.n_samples // self.n_chains)

    @property
    def lookup(self):
        return self.table

    def _dedup(self):
        if "dedup" not in self._cache:
            packed = np.packbits(self.configs < 0, axis=1)
            _, first, inverse, counts = np.unique(packed, axis=0, return_index=True, return_inverse=True,
                                                  return_counts=True)
            self._cache["dedup"] = (first, inverse.reshape(-1), counts)
        return self._cache["dedup"]

    def unique(self):
        first, _, counts = self._dedup()
        return self.configs[first], counts / self.n_samples, self.log_amplitudes[first]

    def expand(self, unique_values) -> np.ndarray:
        return np.asarray(unique_values)[self._dedup()[1]]

    def chain_means(self, values) -> np.ndarray:
        v = np.asarray(values)
        return v.reshape((self.n_chains, -1) + v.shape[1:]).mean(axis=1)

    def stderr(self, values) -> float:
        """Standard error from the spread of per-chain means (naive if fewer than 8 chains)."""
        v = np.asarray(values)
        if self.n_chains >= 8:
            return float(np.std(self.chain_means(v), ddof=1) / np.sqrt(self.n_chains))
        return float(np.std(v, ddof=1) / np.sqrt(v.shape[0]))


def exact_enumeration(psi, lattice=None, derivatives: bool = False) -> ExactEnsemble:
    """All 2^N configurations weighted by |Psi|^2 / Z.

    ``derivatives`` also stores O_k(s) from the same forward/backward sweep.
    """
    n = psi.n_sites if lattice is None else lattice.n_sites
    if n > MAX_ENUMERATION_SITES:
        raise ValueError(f"exact enumeration limited to {MAX_ENUMERATION_SITES} sites, got {n}")
    configs = basis_configurations(n)
    O = None
    if derivatives:
        logs, O = psi.evaluate(configs)
    else:
        logs = np.asarray(psi.log_psi(configs))
    p = np.exp(2 * (logs.real - logs.real.max()))
    return ExactEnsemble(configs, p / p.sum(), logs, AmplitudeTable(logs), O)


def acceptance_probability(log_old, log_new) -> np.ndarray:
    """Metropolis acceptance min(1, |Psi(s')/Psi(s)|^2) for symmetric single-flip proposals."""
    return np.minimum(1.0, np.exp(np.minimum(0.0, 2 * (np.real(log_new) - np.real(log_old)))))


def _evaluator(psi, cfg: SamplerConfig):
    if isinstance(psi, AmplitudeTable):
        return psi, psi
    if psi.n_sites <= cfg.table_sites:
        table = psi.full_table()
        return table, table
    return psi, None


def sample(psi, cfg: SamplerConfig, init: np.ndarray | None = None) -> SampleBatch:
    """Single-spin-flip Metropolis chains run in lock-step.

    One sweep is N proposals per chain. ``init`` (n_chains, N) warm-starts the
    chains, e.g. from the previous time step's final states.
    """
    rng = np.random.default_rng(cfg.seed)
    evaluator, table = _evaluator(psi, cfg)
    N = psi.n_sites
    C = cfg.n_chains
    if init is None:
        state = rng.choice(np.array([-1, 1], dtype=np.int8), size=(C, N))
    else:
        state = np.array(init, dtype=np.int8).reshape(C, N)
    logp = np.asarray(evaluator.log_psi(state))
    rows = np.arange(C)

    def sweep():
        nonlocal state, logp
        accepted = 0
        for _ in range(N):
            sites = rng.integers(N, size=C)
            proposal = state.copy()
            proposal[rows, sites] *= -1
            new = np.asarray(evaluator.log_psi(proposal))
            accept = rng.random(C) < acceptance_probability(logp, new)
            state = np.where(accept[:, None], proposal, state)
            logp = np.where(accept, new, logp)
            accepted += int(accept.sum())
        return accepted

    acc = sum(sweep() for _ in range(cfg.burn_in))
    burn_rate = acc / (cfg.burn_in * N * C)
    if burn_rate < 0.01:
        warnings.warn(f"Metropolis acceptance {burn_rate:.2e} during burn-in; wavefunction nearly deterministic",
                      RuntimeWarning, stacklevel=2)
    per_chain = cfg.n_samples // C
    configs = np.empty((per_chain, C, N), dtype=np.int8)
    logs = np.empty((per_chain, C), dtype=complex)
    acc = 0
    for k in range(per_chain):
        for _ in range(cfg.thin):
            acc += sweep()
        configs[k] = state
        logs[k] = logp
    rate = acc / (per_chain * cfg.thin * N * C)
    # chain-major ordering: chain c occupies rows c*per_chain ... (c+1)*per_chain-1
    configs = configs.transpose(1, 0, 2).reshape(-1, N)
    logs = logs.T.reshape(-1)
    return SampleBatch(configs, logs, rate, C, burn_rate, state.copy(), table,
                       {"burn_in_acceptance": burn_rate, "low_acceptance": burn_rate < 0.01})


def empirical_distribution(batch: SampleBatch) -> np.ndarray:
    """Histogram over basis indices (small lattices only)."""
    idx = configuration_index(batch.configs)
    return np.bincount(idx, minlength=2 ** batch.configs.shape[1]) / batch.n_samples
