"""Parametrix construction of fundamental solutions for variable-coefficient
heat operators on Carnot groups, with numerical verification tools."""
from .coefficients import CoefficientField, constant, field_from_config, log_dini_field, sine1d
from .engine import ParametrixEngine, SeriesPolicy
from .errors import ParametrixError
from .groups import euclidean, group_from_name, heisenberg1
from .kernels import FrozenKernel
from .modulus import Modulus, modulus_from_config
from .quadrature import QuadratureSpec

__all__ = [
    "CoefficientField", "FrozenKernel", "Modulus", "ParametrixEngine", "ParametrixError",
    "QuadratureSpec", "SeriesPolicy", "constant", "euclidean", "field_from_config",
    "group_from_name", "heisenberg1", "log_dini_field", "modulus_from_config", "sine1d",
]
__version__ = "0.1.0"
