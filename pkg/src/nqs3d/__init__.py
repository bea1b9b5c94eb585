"""Neural-quantum-state dynamics of the 3D transverse-field Ising model with Kibble-Zurek scaling tools."""
from __future__ import annotations

__version__ = "0.1.0"

from .hamiltonian import H_CRITICAL, PauliString, PauliStringHamiltonian, build_tfim
from .lattice import Lattice3D, SpinConfiguration, neighbor_bonds, site_index
from .network import ArchitectureSpec, NetworkState, init_parameters, parameter_count, fit_uniform

__all__ = [
    "H_CRITICAL", "PauliString", "PauliStringHamiltonian", "build_tfim", "Lattice3D", "SpinConfiguration",
    "neighbor_bonds", "site_index", "ArchitectureSpec", "NetworkState", "init_parameters", "parameter_count",
    "fit_uniform", "__version__",
]
