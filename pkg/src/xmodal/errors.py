"""Exception hierarchy shared by every stage of the pipeline."""


class XModalError(Exception):
    """Base class for all errors raised by this package."""


class IngestError(XModalError):
    """The input stream could not be read or decoded."""


class CorruptInputError(IngestError):
    """More than half of the input lines failed schema validation."""

    def __init__(self, malformed_count: int, line_count: int):
        self.malformed_count = malformed_count
        self.line_count = line_count
        super().__init__(
            f"{malformed_count} of {line_count} lines are malformed; "
            "the stream does not match the declared modality schema"
        )


class ConfigError(XModalError):
    """Invalid configuration: bad parameters, missing files or modalities."""


class RegistrationError(XModalError):
    """A detector could not be registered."""


class ContractViolation(XModalError):
    """A detector produced output that contradicts its descriptor."""


class ValidationError(XModalError):
    """A simulation config or data file failed validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class StageError(XModalError):
    """A pipeline stage failed; ``cause`` holds the original exception."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")
