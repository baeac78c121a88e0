"""Exception hierarchy shared by all simulator modules."""


class CitsError(Exception):
    """Base class for every error raised by ``cits_sim``."""


# -- topology ---------------------------------------------------------------

class ParseError(CitsError):
    """Malformed JSON or a document that does not match the expected schema."""


class ValidationError(CitsError):
    """A well-formed document that breaks a model invariant."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnknownNode(CitsError, LookupError):
    pass


# -- pdu --------------------------------------------------------------------

class UnknownNodeIndex(CitsError, LookupError):
    pass


class PayloadTooLarge(CitsError, ValueError):
    pass


class NoInterfaceAvailable(CitsError):
    pass


class DecodeError(CitsError):
    """Base for the four frame-format failures ``decode_pdu`` can report."""


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class CrcMismatch(DecodeError):
    pass


class Truncated(DecodeError):
    pass


# -- engine -----------------------------------------------------------------

class PastTime(CitsError, ValueError):
    pass


class NoRoute(CitsError):
    pass


# -- services ---------------------------------------------------------------

class UnknownLot(CitsError, LookupError):
    pass


class OccupancyOutOfRange(CitsError, ValueError):
    pass


class InvalidProof(CitsError):
    pass


class UnknownIntersection(CitsError, LookupError):
    pass


class UnregisteredDevice(CitsError):
    pass


class UnknownVehicle(CitsError, LookupError):
    pass


class UnknownSegment(CitsError, LookupError):
    pass


class NegativePenalty(CitsError, ValueError):
    pass


class NoInstance(CitsError):
    pass


# -- attack -----------------------------------------------------------------

class DuplicateCve(CitsError):
    pass


class UnknownCve(CitsError, LookupError):
    pass
