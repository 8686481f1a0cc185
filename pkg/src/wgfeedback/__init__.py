"""Simulators for a driven two-level emitter with time-delayed coherent feedback.

Two independent engines compute the emitter excitation under n-photon pulse
drive in a semi-infinite waveguide: a numerically exact time-bin MPS
evolution, and a recursive Heisenberg-picture integration that scales
polynomially in the photon number.
"""

__version__ = "0.1.0"

from .errors import InvariantError, NumericalError, ScenarioError, TensorShapeError
from .tensor import TruncationPolicy, contract_pair, svd_split, unitary_from_generator

__all__ = [
    "InvariantError",
    "NumericalError",
    "ScenarioError",
    "TensorShapeError",
    "TruncationPolicy",
    "contract_pair",
    "svd_split",
    "unitary_from_generator",
    "__version__",
]
