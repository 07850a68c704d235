"""Probe-frequency estimation with a two-level probe in a Lorentzian bath.

Reduced dynamics come from the hierarchical equations of motion (``heom``),
the exact rotating-wave solution and a Born-level memory equation
(``reference``), and a discretised-bath brute force (``oracle``). ``fisher``
turns any of them into classical and quantum Fisher information.
"""

__version__ = "0.1.0"

from .model import BathKind, ModelSpec, UnitSystem, initial_density  # noqa: E402
from .fisher import FisherConfig, compare_with_rwa, fisher_series, max_over_time  # noqa: E402

__all__ = ["BathKind", "ModelSpec", "UnitSystem", "initial_density", "FisherConfig", "compare_with_rwa",
           "fisher_series", "max_over_time", "__version__"]
