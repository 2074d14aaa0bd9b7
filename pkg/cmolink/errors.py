# -*- coding: utf-8 -*-
"""
Exception hierarchy shared by all :mod:`cmolink` modules.

All exceptions derive from :exc:`CmoError`, which itself is a
:exc:`ValueError`. Each class carries an ``exit_code`` hint that the command
line interface returns when the exception escapes a subcommand.
"""

__all__ = ["CmoError", "ConfigError", "MissingArtifactError", "ShapeError",
           "CodingError", "BudgetError", "EnumerationLimitError",
           "NumericalError", "SingularMatrixError", "ConvergenceError",
           "ZeroVectorError", "DivergenceError", "GraphStateError"]


class CmoError(ValueError):
    """ Base class for all errors raised by this package """

    #: Suitable process exit code for this exception
    exit_code = 1  # Configuration error


class ConfigError(CmoError):
    """ Invalid or inconsistent configuration """
    exit_code = 1


class MissingArtifactError(ConfigError):
    """ A scenario needs trained model files that do not exist """
    exit_code = 1

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("Missing model artifacts: " + ", ".join(self.missing))


class ShapeError(CmoError):
    """ Array or tensor shape does not match what an operation expects """
    exit_code = 1


class CodingError(CmoError):
    """ Payload, codeword or bit sequence has the wrong length """
    exit_code = 1


class BudgetError(CmoError):
    """ A payload does not fit its resource-element or bit budget """
    exit_code = 1


class EnumerationLimitError(CmoError):
    """ Exhaustive enumeration requested over too many points """
    exit_code = 1


class NumericalError(CmoError):
    """ A numerical procedure failed (non-finite values, singular systems) """
    exit_code = 2  # Numerical failure


class SingularMatrixError(NumericalError):
    """ Linear system is singular or too badly conditioned to solve """
    exit_code = 2


class ConvergenceError(NumericalError):
    """ Iterative procedure did not converge """
    exit_code = 2


class ZeroVectorError(NumericalError):
    """ Normalization of an all-zero vector or grid """
    exit_code = 2


class DivergenceError(NumericalError):
    """ Training loss became non-finite """
    exit_code = 2


class GraphStateError(NumericalError):
    """ Graph or optimizer used in an invalid state (e.g. backward before forward) """
    exit_code = 2
