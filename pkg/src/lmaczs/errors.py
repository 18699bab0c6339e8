"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates an operation's precondition."""


class NumericError(RuntimeError):
    """A forward/backward pass produced NaN or Inf."""


class CheckpointIntegrityError(RuntimeError):
    """Checkpoint payload does not match its stored checksum."""


class CheckpointVersionError(RuntimeError):
    """Checkpoint was written by an incompatible format version."""


class ContractViolationError(RuntimeError):
    """A frozen-parameter or immutability contract was broken."""


class ConfigError(ValueError):
    """Run configuration is missing or malformed. Names the offending field."""


class MissingArtifactError(FileNotFoundError):
    """A required checkpoint, manifest or other artifact is absent."""
