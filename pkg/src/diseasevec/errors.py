"""Exception hierarchy shared across the package."""


class DiseaseVecError(Exception):
    """Base class for all data and runtime errors raised by diseasevec."""


class ConfigError(DiseaseVecError):
    """Invalid configuration value or config file."""


class EmptyCorpus(DiseaseVecError):
    pass


class EmptyVocabulary(DiseaseVecError):
    pass


class InvalidShape(DiseaseVecError):
    pass


class EmptyInput(DiseaseVecError):
    pass


class IdOutOfRange(DiseaseVecError):
    pass


class DimensionMismatch(DiseaseVecError):
    pass


class MalformedFile(DiseaseVecError):
    pass


class NotSquare(DiseaseVecError):
    pass


class NonFinite(DiseaseVecError):
    pass


class DatasetTooSmall(DiseaseVecError):
    pass


class EmptyDataset(DiseaseVecError):
    pass


class DuplicateCode(DiseaseVecError):
    pass


class MalformedLine(DiseaseVecError):
    pass


class BadFractions(DiseaseVecError):
    pass


class SingleLabel(DiseaseVecError):
    pass


class ProviderError(DiseaseVecError):
    """Generation provider failed (transport, timeout or bad payload)."""

    def __init__(self, message: str, code: str | None = None) -> None:
        self.code = code
        if code is not None:
            message = f"[{code}] {message}"
        super().__init__(message)


class ConflictingCell(DiseaseVecError):
    """Two reports disagree on the same (model, dataset) cell."""
