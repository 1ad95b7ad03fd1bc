"""Exception hierarchy. Every error carries a short machine-readable ``code``."""


class SemlabelError(Exception):
    code = "error"

    def __init__(self, message, *, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class DatasetError(SemlabelError, ValueError):
    code = "dataset"


class EncodingError(SemlabelError, ValueError):
    code = "encoding"


class FetchError(SemlabelError):
    code = "fetch"


class ModelError(SemlabelError, ValueError):
    code = "model"


class TrainingDivergedError(SemlabelError):
    code = "diverged"


class EvaluationError(SemlabelError, ValueError):
    code = "evaluation"


class StatsError(SemlabelError, ValueError):
    code = "stats"


class DegenerateDataError(StatsError):
    """Input has zero variance, or every paired difference is zero."""

    code = "degenerate"
