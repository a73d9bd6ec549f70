"""Python bindings for the mdc curriculum library."""

from ._mdcurriculum import (
    DataError,
    Error,
    NumericalError,
    Schedule,
    UsageError,
    embedding_similarity,
    evaluate,
    expected_improvement,
    normalize,
    percentiles,
    report,
    score,
    selected_count,
    tokenize,
    train,
    tune,
    validate_config,
    write_synthetic,
)

# Same numbers the mdc binary exits with.
EXIT_CODES = {UsageError: 1, DataError: 2, NumericalError: 3}

__all__ = [
    "DataError",
    "EXIT_CODES",
    "Error",
    "NumericalError",
    "Schedule",
    "UsageError",
    "embedding_similarity",
    "evaluate",
    "expected_improvement",
    "normalize",
    "percentiles",
    "report",
    "score",
    "selected_count",
    "tokenize",
    "train",
    "tune",
    "validate_config",
    "write_synthetic",
]
