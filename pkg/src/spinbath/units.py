"""Fixed-factor unit conversion within the package unit system."""

import math

# Each unit maps to (dimension, factor to the dimension's base unit).
_UNITS = {
    "nm": ("length", 1.0),
    "A": ("length", 0.1),
    "Å": ("length", 0.1),
    "m": ("length", 1e9),
    "us": ("time", 1.0),
    "µs": ("time", 1.0),
    "ns": ("time", 1e-3),
    "ms": ("time", 1e3),
    "s": ("time", 1e6),
    "rad/us": ("angular_frequency", 1.0),
    "rad/µs": ("angular_frequency", 1.0),
    "MHz": ("angular_frequency", 2 * math.pi),
    "kHz": ("angular_frequency", 2 * math.pi * 1e-3),
    "Hz": ("angular_frequency", 2 * math.pi * 1e-6),
    "G": ("field", 1.0),
    "Gauss": ("field", 1.0),
    "T": ("field", 1e4),
    "Tesla": ("field", 1e4),
    "K": ("temperature", 1.0),
    "Kelvin": ("temperature", 1.0),
    "mK": ("temperature", 1e-3),
}


def unit_convert(value, from_unit: str, to_unit: str):
    """Convert ``value`` between two units of the same dimension.

    >>> round(unit_convert(1.0, "MHz", "rad/us"), 4)
    6.2832
    """
    try:
        dim_from, f_from = _UNITS[from_unit]
        dim_to, f_to = _UNITS[to_unit]
    except KeyError as err:
        raise ValueError(f"unknown unit {err.args[0]!r}") from None
    if dim_from != dim_to:
        raise ValueError(f"cannot convert {from_unit} ({dim_from}) to {to_unit} ({dim_to})")
    return value * (f_from / f_to)
