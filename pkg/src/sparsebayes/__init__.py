"""Sparse Bayesian learning: GSM priors, linear models, GP kernels and solvers,
Bayesian CP decomposition and stick-breaking LWTA networks."""

from ._errors import ConditioningWarning, DomainError, NumericalError, ParseError

__version__ = "0.1.0"

__all__ = ["ConditioningWarning", "DomainError", "NumericalError", "ParseError", "__version__"]
