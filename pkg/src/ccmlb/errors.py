"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
SpecFormatError -> 3, InfeasibleError -> 4. Everything else is a bug.
"""


class CcmlbError(Exception):
    """Base class for all package errors."""


class ConfigError(CcmlbError):
    """Invalid run parameters (bad fanout, wrong coefficient mix, ...)."""


class SpecFormatError(CcmlbError):
    """A phase description file violates the input schema."""


class DomainError(CcmlbError):
    """Arguments outside an operation's mathematical domain."""


class PreconditionError(CcmlbError):
    """A stateful operation was called in a state it does not accept."""


class ProtocolError(CcmlbError):
    """Lock protocol misuse (double acquire, unlock without lock, ...)."""


class InfeasibleError(CcmlbError):
    """Refusal: the request cannot be satisfied (e.g. enumeration too large)."""
