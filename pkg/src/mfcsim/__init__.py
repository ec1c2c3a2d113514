"""Simulation of emitter-phonon swapping and cooling through mechanically
modulated optical mode fields in coupled photonic-crystal cavities."""

__version__ = "0.1.0"

from .models import SystemParams  # noqa: E402
from .operators import QOperator, QuantumState, SubsystemLayout  # noqa: E402
from .liouvillian import Schedule, evolve, steady_state  # noqa: E402

__all__ = ["SystemParams", "QOperator", "QuantumState", "SubsystemLayout", "Schedule", "evolve",
           "steady_state", "__version__"]
