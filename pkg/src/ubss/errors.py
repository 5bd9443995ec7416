"""Shared exception types."""

from __future__ import annotations

import numpy as np


class FormatError(ValueError):
    """A dataset or checkpoint file does not match its binary format.

    `field` names the header field or payload section that failed.
    """

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class NumericError(ArithmeticError):
    """A non-finite or otherwise invalid value appeared during a computation.

    `step` carries the 1-based time step / layer index where it surfaced,
    when known.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix required to be invertible is singular or too ill-conditioned.

    `cond` carries the condition-number estimate that triggered the error.
    """

    def __init__(self, message: str, cond: float | None = None):
        super().__init__(message)
        self.cond = cond
