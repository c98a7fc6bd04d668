"""Central-spin decoherence in nuclear and surface electron spin baths."""

__version__ = "0.1.0"

from .analysis import FitResult, StretchedExponentialRegressor, fit_stretched, instantaneous_exponent
from .cce import CCEOptions, CoherenceCurve, cce_coherence, gcce_coherence, time_grid
from .geometry import BathRealization, SurfaceConfig, place_nv, sample_bulk_c13, sample_surface_electrons
from .hamiltonian import PulseSequence
from .master import HoppingModel, LindbladChannel, MEOptions, mecce_coherence
from .spins import BathSpin, CentralSpin, ExternalField

__all__ = [
    "BathRealization",
    "BathSpin",
    "CCEOptions",
    "CentralSpin",
    "CoherenceCurve",
    "ExternalField",
    "FitResult",
    "HoppingModel",
    "LindbladChannel",
    "MEOptions",
    "PulseSequence",
    "StretchedExponentialRegressor",
    "SurfaceConfig",
    "cce_coherence",
    "fit_stretched",
    "gcce_coherence",
    "instantaneous_exponent",
    "mecce_coherence",
    "place_nv",
    "sample_bulk_c13",
    "sample_surface_electrons",
    "time_grid",
]
