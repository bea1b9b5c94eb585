"""3D residual convolutional wavefunction ln Psi(s) and its parameter derivatives.

Layout of the flat parameter vector, block by block (block i = 0..n-1):
``conv_a`` weights (out, in, 3, 3, 3) [+ bias], then ``conv_b`` weights + bias.
Only the first convolution (1 -> 2c channels) has no bias. Convolutions are
cross-correlations with circular padding:

    out[o, p] = b[o] + sum_{i, d} W[o, i, d] * x[i, p + d - 1]

with d = (dx, dy, dz) in {0, 1, 2}^3 and p + d - 1 taken modulo the lattice.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import erf

from .lattice import Lattice3D, basis_configurations, configuration_index

KERNEL = 27  # 3 x 3 x 3
_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ArchitectureSpec:
    depth: int
    channels: int

    def __post_init__(self):
        if self.depth < 1 or self.channels < 1:
            raise ValueError(f"depth and channels must be >= 1, got {self.depth}, {self.channels}")

    @property
    def width(self) -> int:
        return 2 * self.channels

    def layers(self) -> list[tuple[str, tuple[int, ...], bool]]:
        """(name, weight shape, has_bias) in parameter order."""
        w = self.width
        out = []
        for i in range(self.depth):
            c_in = 1 if i == 0 else w
            out.append((f"block{i}.conv_a", (w, c_in, 3, 3, 3), i > 0))
            out.append((f"block{i}.conv_b", (w, w, 3, 3, 3), True))
        return out


def parameter_count(arch: ArchitectureSpec) -> int:
    w = arch.width
    return KERNEL * w + (2 * arch.depth - 1) * (KERNEL * w * w + w)


@lru_cache(maxsize=None)
def _neighbor_table(dims: tuple[int, int, int]) -> np.ndarray:
    """nbr[p, d] = site at p + d - 1 for the 27 kernel offsets (row-major d)."""
    lat = Lattice3D(dims)
    nbr = np.empty((lat.n_sites, KERNEL), dtype=np.int64)
    for p in range(lat.n_sites):
        x, y, z = lat.coords(p)
        k = 0
        for dx in range(3):
            for dy in range(3):
                for dz in range(3):
                    nbr[p, k] = lat.site_index(((x + dx - 1) % dims[0], (y + dy - 1) % dims[1], (z + dz - 1) % dims[2]))
                    k += 1
    return nbr


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


class _Layer:
    __slots__ = ("W", "Wmat", "b", "offset", "shape", "has_bias")

    def __init__(self, theta, offset, shape, has_bias):
        size = int(np.prod(shape))
        self.shape = shape
        self.offset = offset
        self.W = theta[offset:offset + size].reshape(shape)
        # rows ordered (kernel offset, input channel) to match _im2col
        self.Wmat = self.W.reshape(shape[0], shape[1], KERNEL).transpose(2, 1, 0).reshape(KERNEL * shape[1], shape[0])
        self.has_bias = has_bias
        self.b = theta[offset + size:offset + size + shape[0]] if has_bias else None

    @property
    def n_params(self):
        return int(np.prod(self.shape)) + (self.shape[0] if self.has_bias else 0)


def _layers(arch: ArchitectureSpec, theta) -> list[_Layer]:
    out, k = [], 0
    for _, shape, has_bias in arch.layers():
        layer = _Layer(theta, k, shape, has_bias)
        out.append(layer)
        k += layer.n_params
    return out


def _im2col(x, nbr):
    # x: (B, N, C) -> (B, N, 27 * C) ordered (offset, channel)
    B, N, C = x.shape
    return x[:, nbr, :].reshape(B, N, KERNEL * C)


@lru_cache(maxsize=None)
def _inverse_neighbor_table(dims: tuple[int, int, int]) -> np.ndarray:
    """inv[p, d] = site q with nbr[q, d] = p (each kernel offset is a permutation)."""
    nbr = _neighbor_table(dims)
    inv = np.empty_like(nbr)
    for k in range(KERNEL):
        inv[nbr[:, k], k] = np.arange(nbr.shape[0])
    return inv


def _col2im(g_cols, inv, C):
    # adjoint of _im2col, written as a gather over the inverse permutations
    B, N, _ = g_cols.shape
    g_cols = g_cols.reshape(B, N, KERNEL, C)
    return g_cols[:, inv, np.arange(KERNEL), :].sum(axis=2)


def _weight_grad(cols, g):
    # sum_n cols[b, n, k] * g[b, n, o] for real cols and complex g via one real matmul
    O = g.shape[2]
    stacked = np.concatenate([g.real, g.imag], axis=2)
    out = np.matmul(cols.transpose(0, 2, 1), stacked)
    return out[:, :, :O] + 1j * out[:, :, O:]


def _forward(arch, dims, theta, spins, keep=False):
    nbr = _neighbor_table(dims)
    layers = _layers(arch, theta)
    x = np.asarray(spins, dtype=np.float64)[:, :, None]
    tape = []
    for i in range(arch.depth):
        la, lb = layers[2 * i], layers[2 * i + 1]
        cols_x = _im2col(x, nbr)
        a1 = cols_x @ la.Wmat
        if la.has_bias:
            a1 += la.b
        h1 = _gelu(a1)
        cols_h = _im2col(h1, nbr)
        a2 = cols_h @ lb.Wmat + lb.b
        h2 = _gelu(a2)
        scale = 1.0 / math.sqrt(i + 1)
        x = (h2 * scale) if i == 0 else x + h2 * scale
        if keep:
            tape.append((cols_x, a1, cols_h, a2))
    z = (x[:, :, 0::2] + 1j * x[:, :, 1::2]).reshape(x.shape[0], -1)
    m = z.real.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    total = e.sum(axis=1)
    out = m[:, 0] + np.log(total)
    if keep:
        return out, (layers, tape, e / total[:, None], x.shape)
    return out


def _backward(arch, dims, n_params, cache):
    layers, tape, softmax, xshape = cache
    inv = _inverse_neighbor_table(dims)
    B, N, W2 = xshape
    grads = np.zeros((B, n_params), dtype=complex)
    g_x = np.zeros((B, N, W2), dtype=complex)
    sm = softmax.reshape(B, N, W2 // 2)
    g_x[:, :, 0::2] = sm
    g_x[:, :, 1::2] = 1j * sm
    for i in reversed(range(arch.depth)):
        la, lb = layers[2 * i], layers[2 * i + 1]
        cols_x, a1, cols_h, a2 = tape[i]
        g_a2 = g_x * (_gelu_grad(a2) / math.sqrt(i + 1))
        _store(grads, lb, _weight_grad(cols_h, g_a2), g_a2.sum(axis=1))
        g_h1 = _col2im(g_a2 @ lb.Wmat.T, inv, lb.shape[1])
        g_a1 = g_h1 * _gelu_grad(a1)
        _store(grads, la, _weight_grad(cols_x, g_a1), g_a1.sum(axis=1) if la.has_bias else None)
        if i > 0:
            g_x = g_x + _col2im(g_a1 @ la.Wmat.T, inv, la.shape[1])
    return grads


def _store(grads, layer, g_wmat, g_b):
    O, C = layer.shape[0], layer.shape[1]
    B = g_wmat.shape[0]
    # (B, 27*C, O) -> (B, O, C, 27) flattened like W
    g_w = g_wmat.reshape(B, KERNEL, C, O).transpose(0, 3, 2, 1).reshape(B, -1)
    size = g_w.shape[1]
    grads[:, layer.offset:layer.offset + size] = g_w
    if g_b is not None:
        grads[:, layer.offset + size:layer.offset + size + O] = g_b


@dataclass
class NetworkState:
    arch: ArchitectureSpec
    theta: np.ndarray
    dims: tuple[int, int, int]
    seed: int | None = None
    chunk: int = field(default=2048, repr=False)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if self.theta.size != parameter_count(self.arch):
            raise ValueError(f"theta has {self.theta.size} entries, architecture needs {parameter_count(self.arch)}")

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_params(self) -> int:
        return self.theta.size

    def with_theta(self, theta) -> "NetworkState":
        return NetworkState(self.arch, theta, self.dims, self.seed, self.chunk)

    def on_lattice(self, dims) -> "NetworkState":
        """Same parameters evaluated on another lattice (weights are shared)."""
        return NetworkState(self.arch, self.theta, dims, self.seed, self.chunk)

    def _batches(self, configs):
        configs = np.asarray(configs)
        if configs.ndim == 1:
            configs = configs[None, :]
        if configs.shape[1] != self.n_sites:
            raise ValueError(f"configurations have {configs.shape[1]} sites, lattice has {self.n_sites}")
        for k in range(0, configs.shape[0], self.chunk):
            yield configs[k:k + self.chunk]

    def log_psi(self, configs) -> np.ndarray:
        parts = [_forward(self.arch, self.dims, self.theta, b) for b in self._batches(configs)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=complex)

    def log_derivatives(self, configs) -> np.ndarray:
        """O_k(s) = d ln Psi(s) / d theta_k as a (B, P) complex array."""
        return self.evaluate(configs)[1]

    def evaluate(self, configs) -> tuple[np.ndarray, np.ndarray]:
        """ln Psi and its derivatives from one forward/backward sweep."""
        values, grads = [], []
        for b in self._batches(configs):
            v, cache = _forward(self.arch, self.dims, self.theta, b, keep=True)
            values.append(v)
            grads.append(_backward(self.arch, self.dims, self.n_params, cache))
        return np.concatenate(values), np.concatenate(grads)

    def full_table(self) -> "AmplitudeTable":
        return AmplitudeTable(self.log_psi(basis_configurations(self.n_sites)))

    def save(self, path) -> None:
        meta = {"depth": self.arch.depth, "channels": self.arch.channels, "dims": list(self.dims), "seed": self.seed}
        with open(Path(path), "wb") as fh:
            np.savez(fh, theta=self.theta, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))

    @classmethod
    def load(cls, path) -> "NetworkState":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            theta = data["theta"].copy()
        return cls(ArchitectureSpec(meta["depth"], meta["channels"]), theta, tuple(meta["dims"]), meta["seed"])


class AmplitudeTable:
    """Precomputed ln Psi over the full basis, usable wherever ``log_psi`` lookups are needed."""

    def __init__(self, log_amplitudes: np.ndarray):
        self.values = np.asarray(log_amplitudes)
        self.n_sites = int(round(math.log2(self.values.size)))

    def log_psi(self, configs) -> np.ndarray:
        configs = np.asarray(configs)
        if configs.ndim == 1:
            configs = configs[None, :]
        return self.values[configuration_index(configs)]

    def dense(self) -> np.ndarray:
        """Normalised amplitude vector in basis order."""
        a = np.exp(self.values - self.values.real.max())
        return a / np.linalg.norm(a)


def init_parameters(arch: ArchitectureSpec, seed: int, scale: float, dims) -> NetworkState:
    """Gaussian entries with std = scale / fan-in of each layer (biases included)."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    chunks = []
    for _, shape, has_bias in arch.layers():
        fan_in = shape[1] * KERNEL
        chunks.append(rng.normal(0.0, scale / fan_in, size=int(np.prod(shape))))
        if has_bias:
            chunks.append(rng.normal(0.0, scale / fan_in, size=shape[0]))
    return NetworkState(arch, np.concatenate(chunks), dims, seed)


def zero_state(arch: ArchitectureSpec, dims) -> NetworkState:
    return NetworkState(arch, np.zeros(parameter_count(arch)), dims)


def log_psi(psi: NetworkState, s) -> complex:
    spins = s.spins if hasattr(s, "spins") else np.asarray(s)
    return complex(psi.log_psi(spins[None, :])[0])


def log_derivatives(psi: NetworkState, s) -> np.ndarray:
    spins = s.spins if hasattr(s, "spins") else np.asarray(s)
    return psi.log_derivatives(spins[None, :])[0]


def fit_uniform(psi: NetworkState, n_configs: int = 4096, seed: int = 0, max_iter: int = 500,
                tol: float = 1e-14) -> tuple[NetworkState, float]:
    """Fit the network to the uniform-amplitude state starting from ``psi``.

    Minimises the variance of ln Psi over a fixed set of configurations (the
    full basis when it has at most ``n_configs`` entries, uniform random draws
    otherwise). The variance is zero exactly for the uniform state and
    approximates the infidelity when small. Starting from O(1) random weights
    keeps the network away from the degenerate small-weight regime where the
    tangent space cannot represent the first-order dynamics. Returns the fitted
    state and the final variance.
    """
    from scipy.optimize import minimize

    n = psi.n_sites
    if 2**n <= n_configs:
        configs = basis_configurations(n)
    else:
        configs = np.random.default_rng(seed).choice(np.array([-1, 1], dtype=np.int8), size=(n_configs, n))

    def loss(theta):
        lp, O = psi.with_theta(theta).evaluate(configs)
        d = lp - lp.mean()
        grad = 2.0 * np.real(d.conj() @ (O - O.mean(axis=0))) / len(d)
        return float(np.mean(np.abs(d) ** 2)), grad

    res = minimize(loss, psi.theta, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12})
    return psi.with_theta(res.x), float(res.fun)
