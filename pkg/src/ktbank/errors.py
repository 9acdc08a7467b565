"""Exception hierarchy shared across the pipeline."""


class KtbankError(Exception):
    """Base class for all pipeline errors."""


class UsageError(KtbankError):
    """Bad command-line invocation."""


class DataError(KtbankError):
    """Problems with input data or artifacts on disk."""


class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"required column missing from header: {column!r}")
        self.column = column


class EmptyCorpus(DataError):
    pass


class MalformedRowLimitExceeded(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class TooFewPoints(DataError):
    pass


class ProviderError(KtbankError):
    """Problems talking to a remote model backend."""


class ProviderUnavailable(ProviderError):
    pass


class DimensionMismatch(ProviderError):
    pass


class MalformedAnnotation(ProviderError):
    """The annotation backend kept returning unusable output."""


class BankBuildError(KtbankError):
    """Too few entries annotated successfully to trust the bank."""


class EmptyBank(KtbankError):
    pass


class EmptyCandidatePool(KtbankError):
    pass


class SingleClass(KtbankError):
    """AUC is undefined when only one label value is present."""


class OutOfRange(KtbankError):
    pass
