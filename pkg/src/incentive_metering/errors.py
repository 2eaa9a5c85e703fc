"""Exception hierarchy shared by every entity and the simulator."""


class MeteringError(Exception):
    """Base class for all package errors."""


class ConfigError(MeteringError):
    """Invalid configuration (key sizes, weights, scenario files, link stacks)."""


class InvalidParameterError(MeteringError):
    """A function argument is outside its documented domain."""


class EncodingError(MeteringError):
    """Malformed canonical encoding."""


class DecryptionError(MeteringError):
    """An envelope could not be opened (wrong key or corrupted bytes)."""


class IntegrityError(MeteringError):
    """A signature or MAC check failed while processing a protocol message."""


class ProtocolStateError(MeteringError):
    """An operation was invoked in a phase that does not permit it."""


class ProtocolCompleteError(ProtocolStateError):
    """Every report of the selected program has already been produced."""


class RewardConfigError(ConfigError):
    """Reward weights produced a non-positive token value or validity."""


class ProgramConfigError(ConfigError):
    """A catalog row describes an invalid program."""


class MissingDataError(MeteringError):
    """A reporting window has gaps in its fine-grained readings."""


class DatasetError(MeteringError):
    """A readings file violates the expected schema or cadence."""


class RouteError(MeteringError):
    """A relay path is not valid for the overlay topology."""


class KeyDistributionError(MeteringError):
    """The shared MAC key failed verification during distribution."""


class CounterMismatch(MeteringError):
    """Measured operation counters differ from the analytical prediction."""


class InvariantViolation(MeteringError):
    """A simulation invariant was breached; the message names it."""
