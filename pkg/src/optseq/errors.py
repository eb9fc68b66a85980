"""Exception hierarchy. The CLI maps these onto exit codes."""


class OptseqError(Exception):
    exit_code = 1


class ContractError(OptseqError, ValueError):
    """An argument violated a documented precondition (bad quaternion, negative distance)."""

    exit_code = 2


class ConfigurationError(OptseqError, ValueError):
    exit_code = 2


class PreconditionError(OptseqError):
    """A start state failed an option's initiation predicate."""

    exit_code = 3

    def __init__(self, message: str, predicate: str | None = None):
        super().__init__(message)
        self.predicate = predicate


class ProvenanceError(OptseqError):
    """A sample set or trained option lacks the provenance an operation needs."""

    exit_code = 3


class EmptyResultError(ProvenanceError):
    pass


class PredecessorQualityError(PreconditionError):
    pass


class StorageError(OptseqError):
    """Reading or writing a file failed."""

    exit_code = 4
