"""Drive protocols: sudden quenches and smooth-cubic or linear field ramps."""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .hamiltonian import (H_CRITICAL, PauliStringHamiltonian, build_tfim, build_tfim_schedule,
                          interaction_picture_hamiltonian, rotate_basis_y)
from .lattice import Lattice3D

RAMP_KINDS = ("smooth-cubic", "linear")
FRAMES = ("lab", "rotated", "rotating")  # rotating = y-rotated basis + interaction picture


@dataclass(frozen=True)
class RampSpec:
    """Ramp through the critical point.

    smooth-cubic: J/Jc = 1 + x - (4/27) x^3, h/hc = 1 - x + (4/27) x^3 with x = t/tau_q,
    starting at t = -3 tau_q / 2 where J = 0, h = 2 hc and dJ/dt = 0.
    linear: J/Jc = 1 + x, h/hc = 1 - x, starting at t = -tau_q.
    ``t_end`` defaults to 0 (the critical point) and may extend past it.
    """

    kind: str = "smooth-cubic"
    tau_q: float = 1.0
    t_end: float = 0.0
    J_c: float = 1.0
    h_c: float = H_CRITICAL

    def __post_init__(self):
        if self.kind not in RAMP_KINDS:
            raise ValueError(f"kind must be one of {RAMP_KINDS}, got {self.kind!r}")
        if self.tau_q <= 0:
            raise ValueError("tau_q must be positive")
        if self.t_end < self.t_start:
            raise ValueError("t_end precedes the ramp start")

    @property
    def t_start(self) -> float:
        return -1.5 * self.tau_q if self.kind == "smooth-cubic" else -self.tau_q

    def _shape(self, t: float) -> float:
        x = t / self.tau_q
        if self.kind == "smooth-cubic":
            return x - (4.0 / 27.0) * x**3
        return x

    def _check(self, t: float):
        eps = 1e-12 * max(1.0, self.tau_q)
        if t < self.t_start - eps or t > self.t_end + eps:
            raise ValueError(f"t={t} outside the ramp window [{self.t_start}, {self.t_end}]")

    def couplings_at(self, t: float) -> tuple[float, float]:
        self._check(t)
        g = self._shape(t)
        return self.J_c * (1.0 + g), self.h_c * (1.0 - g)

    def J(self, t: float) -> float:
        return self.J_c * (1.0 + self._shape(t))

    def h(self, t: float) -> float:
        return self.h_c * (1.0 - self._shape(t))

    def dJ_dt(self, t: float) -> float:
        x = t / self.tau_q
        d = 1.0 - (12.0 / 27.0) * x**2 if self.kind == "smooth-cubic" else 1.0
        return self.J_c * d / self.tau_q

    def distance(self, t: float) -> float:
        """r(t) = 1 - h(t)/hc."""
        return self._shape(t)

    def hamiltonian(self, lattice: Lattice3D) -> PauliStringHamiltonian:
        H = build_tfim_schedule(lattice, self.J, self.h, description=f"{self.kind} ramp tau_q={self.tau_q}")
        return H

    def to_dict(self) -> dict:
        return {"type": "ramp", **asdict(self)}


def couplings_at(spec: RampSpec, t: float) -> tuple[float, float]:
    return spec.couplings_at(t)


@dataclass(frozen=True)
class QuenchSpec:
    """Sudden quench from the ground state at (J, h_init) to (J, h_final).

    ``initial`` names the exactly representable start: "x" for the field-polarised
    product state, "up" for the fully polarised ferromagnet.
    """

    h_init: float
    h_final: float
    J: float = 1.0
    frame: str = "lab"
    initial: str = "x"

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ValueError(f"frame must be one of {FRAMES}, got {self.frame!r}")
        if self.initial not in ("x", "up"):
            raise ValueError("initial must be 'x' or 'up'")

    def hamiltonian(self, lattice: Lattice3D) -> PauliStringHamiltonian:
        """Generator of the dynamics in the selected frame."""
        if self.frame == "lab":
            return build_tfim(lattice, self.J, self.h_final)
        if self.frame == "rotated":
            return rotate_basis_y(build_tfim(lattice, self.J, self.h_final))
        V = build_tfim(lattice, self.J, 0.0)
        return rotate_basis_y(interaction_picture_hamiltonian(self.h_final, V))

    def initial_is_uniform(self) -> bool:
        """Whether the start state has equal amplitudes in the simulation basis.

        The y rotation maps the ferromagnet onto the field-polarised state and back.
        """
        rotated = self.frame != "lab"
        return (self.initial == "x") != rotated

    def to_dict(self) -> dict:
        return {"type": "quench", **asdict(self)}


def sudden_quench(h_init: float, h_final: float, J: float = 1.0, rotate: str = "lab") -> QuenchSpec:
    initial = "x" if h_init > 0 and (J == 0 or h_init >= H_CRITICAL * abs(J)) else "up"
    return QuenchSpec(h_init, h_final, J, rotate, initial)


def protocol_from_dict(doc: dict):
    doc = dict(doc)
    kind = doc.pop("type")
    if kind == "ramp":
        return RampSpec(**doc)
    if kind == "quench":
        return QuenchSpec(**doc)
    raise ValueError(f"unknown protocol type {kind!r}")
