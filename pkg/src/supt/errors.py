"""Exception types that callers need to tell apart."""


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration key/value."""


class CheckpointError(Exception):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unsupported format version."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint file is truncated or fails its checksum."""
