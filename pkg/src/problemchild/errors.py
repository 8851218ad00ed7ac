"""Exception types shared across the pipeline."""

from __future__ import annotations


class ProblemChildError(Exception):
    """Base class for all errors raised by this package."""


class IngestError(ProblemChildError):
    pass


class VocabularyError(ProblemChildError):
    pass


class FeaturizationError(ProblemChildError):
    pass


class TrainingError(ProblemChildError):
    pass


class ModelFormatError(ProblemChildError):
    pass


class LayoutMismatchError(ProblemChildError):
    pass


class GraphError(ProblemChildError):
    pass


class PrevalenceError(ProblemChildError):
    pass


class DetectorError(ProblemChildError):
    pass


class CalibrationError(ProblemChildError):
    """Raised when no grid threshold satisfies the FPR target.

    Carries the full swept ROC so the caller can inspect why the target
    was unreachable.
    """

    def __init__(self, message, roc_points=None):
        super().__init__(message)
        self.roc_points = roc_points or []


class ConfigError(ProblemChildError):
    pass
