"""Shared exception taxonomy.

Everything raised on purpose inherits from ValueError so callers can catch
broadly, but the distinct classes keep test assertions precise.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """A run configuration is internally inconsistent (e.g. n != 3f+1)."""


class CodecError(ValueError):
    """A byte string does not decode as the claimed message family."""


class CryptoError(ValueError):
    """Signing-key or signature material is malformed."""


class AggregationError(CryptoError):
    """An aggregate could not be formed from its constituent parts."""


class QuorumError(ValueError):
    """A certificate constructor was given fewer than quorum inputs."""


class InputError(ValueError):
    """Constructor inputs disagree with each other (mixed views, targets...)."""


class ProtocolViolation(AssertionError):
    """An invariant that must hold under at most f faults was broken.

    Raised, never caught, inside the replica: reaching one of these means
    either the fault bound was exceeded or the implementation is wrong.
    """


class QueryError(ValueError):
    """A trace query asked about something the trace does not contain."""
