"""Dispersive heterodyne readout simulator for superconducting qudits."""

__version__ = "0.1.0"

from .linalg import (DensityDiagnostics, HilbertLayout, build_operator,
                     dissipator, measurement_superop, partial_trace,
                     validate_density, von_neumann_entropy)
from .model import (DecoherenceSpec, QuditSpec, RateTable, ResonatorSpec,
                    SystemParams, dispersive_shifts, measurement_rates,
                    steady_state_amplitudes)

__all__ = [
    "__version__",
    "DensityDiagnostics", "HilbertLayout", "build_operator", "dissipator",
    "measurement_superop", "partial_trace", "validate_density",
    "von_neumann_entropy",
    "DecoherenceSpec", "QuditSpec", "RateTable", "ResonatorSpec",
    "SystemParams", "dispersive_shifts", "measurement_rates",
    "steady_state_amplitudes",
]
