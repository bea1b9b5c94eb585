"""Independent dense reference constructions used only by the tests."""
from __future__ import annotations

import math
from functools import reduce

import numpy as np

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def dense_string(n, ops):
    """Kronecker product with site 0 as the leftmost factor (basis |up>=(1,0))."""
    mats = [PAULI["I"]] * n
    for site, o in ops:
        mats = list(mats)
        mats[site] = PAULI[o]
    return reduce(np.kron, mats)


def sparse_string(n, ops):
    """Same Kronecker product as :func:`dense_string`, kept sparse for 12+ sites."""
    from scipy import sparse

    mats = [sparse.identity(2, dtype=complex, format="csr")] * n
    for site, o in ops:
        mats = list(mats)
        mats[site] = sparse.csr_matrix(PAULI[o])
    return reduce(lambda a, b: sparse.kron(a, b, format="csr"), mats)


def dense_matrix(H):
    n = H.n_sites
    M = np.zeros((2**n, 2**n), dtype=complex)
    for term in H.terms:
        M += term.coefficient * dense_string(n, term.ops)
    return M


def brute_force_bonds(dims):
    """Enumerate all site pairs and keep those at periodic distance one along one axis."""
    Lx, Ly, Lz = dims
    cells = [(x, y, z) for x in range(Lx) for y in range(Ly) for z in range(Lz)]
    index = {c: k for k, c in enumerate(cells)}
    bonds = set()
    for a in cells:
        for b in cells:
            if a == b:
                continue
            diffs = [min((a[k] - b[k]) % L, (b[k] - a[k]) % L) for k, L in enumerate(dims)]
            if sorted(diffs) == [0, 0, 1]:
                i, j = index[a], index[b]
                bonds.add((min(i, j), max(i, j)))
    return bonds


def gelu(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))
