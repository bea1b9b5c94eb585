"""Periodic 3D lattices, site indexing and spin configurations.

Sites are indexed row-major with z fastest: ``i = (x * Ly + y) * Lz + z``.
Basis states of the full Hilbert space are integers whose most significant
bit belongs to site 0; bit value 0 is spin up (sigma^z = +1).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np


@dataclass(frozen=True)
class Lattice3D:
    dims: tuple[int, int, int]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3:
            raise ValueError(f"dims must have three entries, got {self.dims!r}")
        for axis, d in zip("xyz", dims):
            if d < 2:
                raise ValueError(f"dims: axis {axis} has length {d}, need >= 2")
        object.__setattr__(self, "dims", dims)

    @property
    def n_sites(self) -> int:
        Lx, Ly, Lz = self.dims
        return Lx * Ly * Lz

    def site_index(self, coords) -> int:
        x, y, z = (int(c) for c in coords)
        Lx, Ly, Lz = self.dims
        if not (0 <= x < Lx and 0 <= y < Ly and 0 <= z < Lz):
            raise IndexError(f"coordinate {coords} outside lattice {self.dims}")
        return (x * Ly + y) * Lz + z

    def coords(self, index: int) -> tuple[int, int, int]:
        if not 0 <= index < self.n_sites:
            raise IndexError(f"site {index} outside lattice with {self.n_sites} sites")
        Lx, Ly, Lz = self.dims
        xy, z = divmod(int(index), Lz)
        x, y = divmod(xy, Ly)
        return x, y, z

    def shifted(self, index: int, axis: int, step: int = 1) -> int:
        c = list(self.coords(index))
        c[axis] = (c[axis] + step) % self.dims[axis]
        return self.site_index(c)

    @cached_property
    def bonds(self) -> tuple[tuple[int, int], ...]:
        return tuple(neighbor_bonds(self))

    def translation_permutation(self, shift) -> np.ndarray:
        """perm[i] = index of site i translated by ``shift``."""
        perm = np.empty(self.n_sites, dtype=np.int64)
        for i in range(self.n_sites):
            c = self.coords(i)
            perm[i] = self.site_index([(c[a] + shift[a]) % self.dims[a] for a in range(3)])
        return perm

    def translate(self, spins: np.ndarray, shift) -> np.ndarray:
        """Translate configuration(s) so that the value at site i moves to i + shift."""
        spins = np.asarray(spins)
        grid = spins.reshape(spins.shape[:-1] + self.dims)
        moved = np.roll(grid, tuple(shift), axis=(-3, -2, -1))
        return moved.reshape(spins.shape)


def site_index(coords, lattice: Lattice3D) -> int:
    return lattice.site_index(coords)


def neighbor_bonds(lattice: Lattice3D) -> list[tuple[int, int]]:
    """Nearest-neighbour pairs under periodic boundaries, each unordered pair once.

    For an axis of length 2 the forward and wrap-around neighbours coincide;
    such duplicates are dropped.
    """
    seen = set()
    bonds = []
    for i in range(lattice.n_sites):
        for axis in range(3):
            j = lattice.shifted(i, axis, +1)
            key = (min(i, j), max(i, j))
            if key not in seen:
                seen.add(key)
                bonds.append(key)
    return bonds


@dataclass(frozen=True)
class SpinConfiguration:
    spins: np.ndarray
    lattice: Lattice3D

    def __post_init__(self):
        spins = np.asarray(self.spins, dtype=np.int8).reshape(-1)
        if spins.size != self.lattice.n_sites:
            raise ValueError(f"expected {self.lattice.n_sites} spins, got {spins.size}")
        if not np.all(np.abs(spins) == 1):
            raise ValueError("spin values must be +1 or -1")
        object.__setattr__(self, "spins", spins)

    def flipped(self, *sites: int) -> "SpinConfiguration":
        s = self.spins.copy()
        s[list(sites)] *= -1
        return SpinConfiguration(s, self.lattice)


def basis_configurations(n_sites: int) -> np.ndarray:
    """All 2^n configurations as a (2^n, n) int8 array ordered by basis index."""
    k = np.arange(2**n_sites, dtype=np.int64)[:, None]
    shifts = np.arange(n_sites - 1, -1, -1, dtype=np.int64)[None, :]
    bits = (k >> shifts) & 1
    return (1 - 2 * bits).astype(np.int8)


def configuration_index(spins: np.ndarray) -> np.ndarray:
    """Inverse of :func:`basis_configurations` for a batch of configurations."""
    spins = np.asarray(spins)
    n = spins.shape[-1]
    bits = (spins < 0).astype(np.int64)
    weights = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def all_cells(lattice: Lattice3D):
    return product(*(range(d) for d in lattice.dims))
