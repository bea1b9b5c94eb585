"""Pauli-string Hamiltonians: the TFIM, its ramps, frame changes, local energies."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .lattice import Lattice3D, neighbor_bonds

H_CRITICAL = 5.158136  # in units of J

_OPS = ("X", "Y", "Z")


@dataclass(frozen=True)
class PauliString:
    """coefficient * prod_i op_i; ``ops`` is a sorted tuple of (site, 'X'|'Y'|'Z')."""

    ops: tuple[tuple[int, str], ...]
    coefficient: complex = 1.0
    group: str = ""

    def __post_init__(self):
        ops = tuple(sorted((int(s), str(o).upper()) for s, o in dict(self.ops).items()))
        for _, o in ops:
            if o not in _OPS:
                raise ValueError(f"unknown Pauli operator {o!r}")
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "coefficient", complex(self.coefficient))

    @property
    def key(self) -> tuple[tuple[int, str], ...]:
        return self.ops

    @property
    def flip_sites(self) -> tuple[int, ...]:
        return tuple(s for s, o in self.ops if o in "XY")

    def scaled(self, factor) -> "PauliString":
        return PauliString(self.ops, self.coefficient * factor, self.group)


@dataclass
class PauliStringHamiltonian:
    """Weighted sum of Pauli strings on ``n_sites`` spins.

    Terms carry a ``group`` label; when ``schedule`` maps a group to a
    function of time, the coefficient of each term in that group is multiplied
    by ``schedule[group](t)`` in :meth:`at`.
    """

    n_sites: int
    terms: list[PauliString]
    schedule: Mapping[str, Callable[[float], complex]] = field(default_factory=dict)
    description: str = "constant"

    def __post_init__(self):
        for term in self.terms:
            for site, _ in term.ops:
                if not 0 <= site < self.n_sites:
                    raise ValueError(f"term acts on site {site} outside range {self.n_sites}")

    @property
    def time_dependent(self) -> bool:
        return bool(self.schedule)

    def at(self, t: float) -> "PauliStringHamiltonian":
        if not self.schedule:
            return self
        cache = {g: complex(f(t)) for g, f in self.schedule.items()}
        terms = [term.scaled(cache[term.group]) if term.group in cache else term for term in self.terms]
        return PauliStringHamiltonian(self.n_sites, terms, {}, self.description)

    def __add__(self, other: "PauliStringHamiltonian") -> "PauliStringHamiltonian":
        if other.n_sites != self.n_sites:
            raise ValueError("site counts differ")
        schedule = {**self.schedule, **other.schedule}
        return PauliStringHamiltonian(self.n_sites, self.terms + other.terms, schedule, self.description)

    def combined(self) -> dict:
        """Coefficients summed per distinct operator string."""
        acc = defaultdict(complex)
        for term in self.terms:
            acc[term.key] += term.coefficient
        return dict(acc)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        # Pauli strings on distinct sites are self-adjoint, so H is Hermitian iff
        # every combined coefficient is real.
        return all(abs(c.imag) <= tol for c in self.combined().values())

    def groups(self) -> dict[str, "PauliStringHamiltonian"]:
        out = defaultdict(list)
        for term in self.terms:
            out[term.group].append(term)
        return {g: PauliStringHamiltonian(self.n_sites, ts) for g, ts in out.items()}

    def to_dict(self) -> dict:
        return {
            "n_sites": self.n_sites,
            "description": self.description,
            "scheduled_groups": sorted(self.schedule),
            "terms": [
                {
                    "ops": [[s, o] for s, o in term.ops],
                    "coefficient": [term.coefficient.real, term.coefficient.imag],
                    "group": term.group,
                }
                for term in self.terms
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "PauliStringHamiltonian":
        terms = [
            PauliString(tuple((int(s), o) for s, o in t["ops"]), complex(*t["coefficient"]), t.get("group", ""))
            for t in doc["terms"]
        ]
        return cls(int(doc["n_sites"]), terms, {}, doc.get("description", "constant"))


def build_tfim(lattice: Lattice3D, J: float, h: float) -> PauliStringHamiltonian:
    """H = -J sum_<ij> Z_i Z_j - h sum_i X_i on the deduplicated bond list.

    A coupling that is exactly zero contributes no terms.
    """
    terms = []
    if J != 0:
        terms += [PauliString(((i, "Z"), (j, "Z")), -J, "J") for i, j in neighbor_bonds(lattice)]
    if h != 0:
        terms += [PauliString(((i, "X"),), -h, "h") for i in range(lattice.n_sites)]
    return PauliStringHamiltonian(lattice.n_sites, terms)


def build_tfim_schedule(lattice: Lattice3D, J_of_t, h_of_t, description="ramp") -> PauliStringHamiltonian:
    """Time-dependent TFIM with couplings J(t), h(t)."""
    base = build_tfim(lattice, 1.0, 1.0)
    return PauliStringHamiltonian(base.n_sites, base.terms, {"J": J_of_t, "h": h_of_t}, description)


def rotate_basis_y(H: PauliStringHamiltonian) -> PauliStringHamiltonian:
    """Global pi/2 rotation about y: Z -> X, X -> -Z, Y -> Y."""
    swap = {"Z": "X", "X": "Z", "Y": "Y"}
    terms = []
    for term in H.terms:
        sign = (-1) ** sum(o == "X" for _, o in term.ops)
        terms.append(PauliString(tuple((s, swap[o]) for s, o in term.ops), sign * term.coefficient, term.group))
    return PauliStringHamiltonian(H.n_sites, terms, dict(H.schedule), H.description)


def _check_z_only(V: PauliStringHamiltonian):
    for term in V.terms:
        if any(o != "Z" for _, o in term.ops):
            raise ValueError(f"interaction picture needs Z-only strings, got {term.ops}")


def _expand_rotating(V: PauliStringHamiltonian) -> list[tuple[PauliString, int, int]]:
    """Expand each Z_i -> c Z_i - s Y_i; returns (string, n_cos, n_sin) with unit trig factors."""
    out = []
    for term in V.terms:
        sites = [site for site, _ in term.ops]
        k = len(sites)
        for mask in range(2**k):
            ops = []
            n_sin = 0
            for b, site in enumerate(sites):
                if (mask >> b) & 1:
                    ops.append((site, "Y"))
                    n_sin += 1
                else:
                    ops.append((site, "Z"))
            coeff = term.coefficient * (-1) ** n_sin
            out.append((PauliString(tuple(ops), coeff, f"{term.group}|{k - n_sin},{n_sin}"), k - n_sin, n_sin))
    return out


def interaction_picture(h: float, V: PauliStringHamiltonian, t: float) -> PauliStringHamiltonian:
    """U(t) V U(t)^dag with U(t) = exp(i H0 t), H0 = -h sum X_i.

    Each Z_i becomes cos(2ht) Z_i - sin(2ht) Y_i.
    """
    return interaction_picture_hamiltonian(h, V).at(t)


def interaction_picture_hamiltonian(h: float, V: PauliStringHamiltonian) -> PauliStringHamiltonian:
    """Time-dependent form of :func:`interaction_picture` (terms grouped by trig powers)."""
    _check_z_only(V)
    V = V.at(0.0) if V.schedule else V
    terms, schedule = [], {}
    for term, n_cos, n_sin in _expand_rotating(V):
        terms.append(term)
        schedule.setdefault(
            term.group,
            lambda t, a=n_cos, b=n_sin: math.cos(2 * h * t) ** a * math.sin(2 * h * t) ** b,
        )
    return PauliStringHamiltonian(V.n_sites, terms, schedule, "interaction-picture")


def rotating_frame_observable(h: float, site: int, t: float, rotated: bool = False) -> PauliStringHamiltonian:
    """Lab-frame sigma^z_site expressed in the interaction picture at time t.

    <psi|Z|psi> = <psi_I| U Z U^dag |psi_I>; with ``rotated`` the result is
    further mapped by :func:`rotate_basis_y`.
    """
    c, s = math.cos(2 * h * t), math.sin(2 * h * t)
    # N is irrelevant for single-site strings; site + 1 suffices for validation.
    op = PauliStringHamiltonian(site + 1, [PauliString(((site, "Z"),), c), PauliString(((site, "Y"),), -s)])
    return rotate_basis_y(op) if rotated else op


# ---------------------------------------------------------------------------
# local energies


@dataclass(frozen=True)
class CompiledTerms:
    """Terms grouped by flip pattern for vectorised kernels.

    ``masks[k]`` is a boolean flip pattern; for each pattern the element
    <s|H|s ^ mask> = sum_terms coeff * prod_Z s_i * prod_Y (-i s_i).
    """

    n_sites: int
    masks: np.ndarray  # (M, N) bool
    # per mask: list of (coefficient, z_sites, y_sites)
    entries: tuple[tuple[tuple[complex, tuple[int, ...], tuple[int, ...]], ...], ...]


def compile_terms(H: PauliStringHamiltonian) -> CompiledTerms:
    by_mask: dict[tuple[int, ...], list] = defaultdict(list)
    for term in H.terms:
        if term.coefficient == 0:
            continue
        flips = term.flip_sites
        z_sites = tuple(s for s, o in term.ops if o == "Z")
        y_sites = tuple(s for s, o in term.ops if o == "Y")
        by_mask[flips].append((term.coefficient, z_sites, y_sites))
    keys = sorted(by_mask, key=lambda k: (len(k), k))
    masks = np.zeros((len(keys), H.n_sites), dtype=bool)
    for m, k in enumerate(keys):
        masks[m, list(k)] = True
    return CompiledTerms(H.n_sites, masks, tuple(tuple(by_mask[k]) for k in keys))


def matrix_elements(entries, spins: np.ndarray) -> np.ndarray:
    """<s|P|s'> summed over the entries sharing one flip pattern, for a batch of s."""
    spins = np.asarray(spins)
    out = np.zeros(spins.shape[0], dtype=complex)
    for coeff, z_sites, y_sites in entries:
        val = np.full(spins.shape[0], coeff, dtype=complex)
        if z_sites:
            val *= np.prod(spins[:, list(z_sites)], axis=1)
        if y_sites:
            val *= (-1j) ** len(y_sites) * np.prod(spins[:, list(y_sites)], axis=1)
        out += val
    return out


def _unique_rows(configs: np.ndarray):
    packed = np.packbits(configs < 0, axis=1)
    _, first, inverse = np.unique(packed, axis=0, return_index=True, return_inverse=True)
    return first, inverse.reshape(-1)


def local_energies(H: PauliStringHamiltonian, configs, psi, t: float = 0.0, log_amplitudes=None,
                   return_flags: bool = False):
    """E_loc(s) = sum_s' <s|H(t)|s'> Psi(s')/Psi(s) for a batch of configurations.

    ``psi`` is any object with a batched ``log_psi(configs)`` method.
    Connected configurations are deduplicated before evaluation.
    """
    H = H.at(t)
    configs = np.asarray(configs, dtype=np.int8)
    if configs.ndim == 1:
        configs = configs[None, :]
    compiled = compile_terms(H)
    if log_amplitudes is None:
        log_amplitudes = np.asarray(psi.log_psi(configs))
    B = configs.shape[0]
    eloc = np.zeros(B, dtype=complex)
    off = [m for m in range(len(compiled.masks)) if compiled.masks[m].any()]
    for m in range(len(compiled.masks)):
        if not compiled.masks[m].any():
            eloc += matrix_elements(compiled.entries[m], configs)
    if off:
        flipped = np.concatenate([np.where(compiled.masks[m], -configs, configs) for m in off])
        first, inverse = _unique_rows(flipped)
        log_conn = np.asarray(psi.log_psi(flipped[first]))[inverse].reshape(len(off), B)
        with np.errstate(over="ignore", invalid="ignore"):  # non-finite entries are reported to the caller
            for k, m in enumerate(off):
                ratio = np.exp(log_conn[k] - log_amplitudes)
                eloc += matrix_elements(compiled.entries[m], configs) * ratio
    if return_flags:
        return eloc, ~np.isfinite(eloc)
    return eloc


def local_energy(H: PauliStringHamiltonian, s, psi, t: float = 0.0) -> complex:
    spins = s.spins if hasattr(s, "spins") else np.asarray(s)
    return complex(local_energies(H, spins[None, :], psi, t)[0])
