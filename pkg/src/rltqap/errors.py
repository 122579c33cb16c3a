"""Exception hierarchy shared by all rltqap modules."""

from __future__ import annotations


class RLTQAPError(Exception):
    """Base class for every error raised by this package."""


# instance / permutation handling
class InstanceError(RLTQAPError, ValueError):
    pass


class TokenCountMismatch(InstanceError):
    pass


class NonNumericToken(InstanceError):
    pass


class NegativeEntry(InstanceError):
    pass


class NTooSmall(InstanceError):
    pass


class DimensionMismatch(InstanceError):
    pass


class InvalidPermutation(InstanceError):
    pass


class InstanceTooLarge(InstanceError):
    pass


# assignment solver
class AssignmentError(RLTQAPError, ValueError):
    pass


class NonFiniteEntry(AssignmentError):
    pass


class PotentialMismatch(AssignmentError):
    pass


# cost tensors and engine
class MemoryBudgetExceeded(RLTQAPError, MemoryError):
    def __init__(self, message: str, required: int, budget: int):
        super().__init__(message)
        self.required = required
        self.budget = budget


class InvalidTuple(RLTQAPError, ValueError):
    pass


class LevelUnavailable(RLTQAPError, ValueError):
    pass


class NegativeSourceCoefficient(RLTQAPError, ValueError):
    pass


class MissingComplementary(RLTQAPError, KeyError):
    pass


class PhaseDesync(RLTQAPError):
    pass


class WorkerFailure(RLTQAPError):
    pass


# partitioning, codec, transport
class TooManyWorkers(RLTQAPError, ValueError):
    pass


class CodecError(RLTQAPError, ValueError):
    pass


class BadMagic(CodecError):
    pass


class VersionMismatch(CodecError):
    pass


class TruncatedPayload(CodecError):
    pass


class TrailingData(CodecError):
    pass


class TupleOutOfRange(CodecError):
    pass


class PeerDisconnected(RLTQAPError, ConnectionError):
    pass


class IterationMismatch(PhaseDesync):
    pass
