"""circlebreak: numerics for circle homeomorphisms with derivative breaks.

Dynamical partitions, symbolic coding and transfer-operator spectra,
Lyapunov-type weighted sums, renormalization of commuting fractional-linear
pairs, and central-limit experiments for weakly noise-perturbed orbits.
"""

__version__ = "0.1.0"

from .circle import (
    ArcInterval,
    BreakMap,
    CirclePoint,
    ExpBreakMap,
    FractionalLinearPair,
    PiecewiseMobiusCircleMap,
    RigidRotation,
    build_fractional_linear_pair,
    circle_from_pair,
    map_from_config,
    map_from_json,
)
from .errors import CircleBreakError
from .mobius import Mobius

__all__ = [
    "ArcInterval",
    "BreakMap",
    "CircleBreakError",
    "CirclePoint",
    "ExpBreakMap",
    "FractionalLinearPair",
    "Mobius",
    "PiecewiseMobiusCircleMap",
    "RigidRotation",
    "__version__",
    "build_fractional_linear_pair",
    "circle_from_pair",
    "map_from_config",
    "map_from_json",
]
