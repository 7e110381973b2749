"""Exception hierarchy shared across the package."""


class DlpoError(Exception):
    """Base class for all package-specific errors."""


class EngineError(DlpoError):
    """Base class for engine failures."""


class EngineUnavailable(EngineError):
    """All retries against a live engine were exhausted."""


class ReplayMiss(EngineError):
    """A replay transcript has no (remaining) response for a request hash."""


class MalformedResponse(EngineError):
    """The engine returned an empty or undecodable body."""


class IoFailure(DlpoError):
    """Reading or writing a transcript/log file failed."""


class PreservedSentenceLost(DlpoError):
    """A sentence frozen by dropout is missing from the candidate prompt."""


class DelimiterMissing(DlpoError):
    """The optimizer response lacks the improved-variable markers."""


class EmptyBatch(DlpoError):
    """Loss was requested for an empty batch."""


class HistoryTooSmall(DlpoError):
    """Contrastive partitioning needs at least two history entries."""


class DatasetError(DlpoError):
    """Base class for dataset ingestion problems."""


class ParseError(DatasetError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateId(DatasetError):
    """Two dataset rows share an id."""


class ConfigError(DlpoError):
    """A run configuration failed validation."""


class ConfigDrift(DlpoError):
    """A resume was attempted with a config differing from the checkpointed one."""


class ChecksumMismatch(DlpoError):
    """A checkpoint file failed its content checksum."""
