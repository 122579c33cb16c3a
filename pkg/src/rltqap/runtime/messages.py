"""Phase messages and their binary encoding.

Wire layout (little-endian)::

    header  16 bytes: magic "RLTQ" | version u8 | phase u8 | source u16
                      | iteration u32 | entry count u32
    entries count x (tuple components u8 * arity | coefficient f32 or f64)

Arity is 2 for Mens(B) and 4/6/8 for Comp(C)/Comp(D)/Comp(E). The
coefficient width is fixed per run (the state precision) and must be passed
to :func:`decode`.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import BadMagic, CodecError, TrailingData, TruncatedPayload, TupleOutOfRange, VersionMismatch

MAGIC = b"RLTQ"
VERSION = 1
HEADER = struct.Struct("<4sBBHII")
assert HEADER.size == 16


class Phase(enum.IntEnum):
    COMP_C = 1
    COMP_D = 2
    COMP_E = 3
    MENS_B = 4

    @property
    def arity(self) -> int:
        return {Phase.COMP_C: 4, Phase.COMP_D: 6, Phase.COMP_E: 8, Phase.MENS_B: 2}[self]

    @property
    def tensor(self) -> str:
        return {Phase.COMP_C: "C", Phase.COMP_D: "D", Phase.COMP_E: "E", Phase.MENS_B: "B"}[self]

    @classmethod
    def for_tensor(cls, name: str) -> "Phase":
        return {"C": cls.COMP_C, "D": cls.COMP_D, "E": cls.COMP_E, "B": cls.MENS_B}[name]


def _dtype(precision: int) -> np.dtype:
    if precision == 64:
        return np.dtype("<f8")
    if precision == 32:
        return np.dtype("<f4")
    raise CodecError(f"unsupported precision {precision}")


@dataclass(eq=False)
class PhaseMessage:
    phase: Phase
    source: int
    iteration: int
    tuples: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.phase = Phase(self.phase)
        self.tuples = np.asarray(self.tuples, dtype=np.uint8).reshape(-1, self.phase.arity)
        self.values = np.asarray(self.values)
        if self.values.dtype not in (np.float32, np.float64):
            self.values = self.values.astype(np.float64)
        if self.values.shape != (self.tuples.shape[0],):
            raise ValueError("tuples and values disagree in length")

    @classmethod
    def empty(cls, phase: Phase, source: int, iteration: int, precision: int = 64) -> "PhaseMessage":
        return cls(phase, source, iteration, np.empty((0, Phase(phase).arity), np.uint8),
                   np.empty(0, _dtype(precision)))

    @classmethod
    def from_entries(cls, phase: Phase, source: int, iteration: int, entries, precision: int = 64):
        entries = list(entries)
        tuples = np.array([t for t, _ in entries], dtype=np.int64).reshape(-1, Phase(phase).arity)
        if tuples.size and (tuples.min() < 0 or tuples.max() > 255):
            raise TupleOutOfRange("tuple components must fit in one byte")
        values = np.array([v for _, v in entries], dtype=_dtype(precision))
        return cls(phase, source, iteration, tuples.astype(np.uint8), values)

    @property
    def precision(self) -> int:
        return 32 if self.values.dtype == np.float32 else 64

    @property
    def entries(self) -> list[tuple[tuple[int, ...], float]]:
        return [(tuple(int(x) for x in t), float(v)) for t, v in zip(self.tuples, self.values)]

    def __len__(self):
        return int(self.values.size)

    def __eq__(self, other):
        if not isinstance(other, PhaseMessage):
            return NotImplemented
        return (
            self.phase == other.phase
            and self.source == other.source
            and self.iteration == other.iteration
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.tuples, other.tuples)
            # bitwise comparison, so -0.0 != 0.0 and NaN payloads are checked
            and self.values.tobytes() == other.values.tobytes()
        )

    def __repr__(self):
        return (f"PhaseMessage({self.phase.name}, source={self.source}, "
                f"iteration={self.iteration}, entries={len(self)})")


def _record_dtype(arity: int, precision: int) -> np.dtype:
    return np.dtype([("t", "u1", (arity,)), ("v", _dtype(precision))])


def encoded_size(phase: Phase, count: int, precision: int) -> int:
    return HEADER.size + count * (Phase(phase).arity + precision // 8)


def encode(msg: PhaseMessage) -> bytes:
    if not 0 <= msg.source <= 0xFFFF or not 0 <= msg.iteration <= 0xFFFFFFFF:
        raise CodecError("source or iteration out of range")
    rec = np.empty(len(msg), dtype=_record_dtype(msg.phase.arity, msg.precision))
    rec["t"] = msg.tuples
    rec["v"] = msg.values
    header = HEADER.pack(MAGIC, VERSION, int(msg.phase), msg.source, msg.iteration, len(msg))
    return header + rec.tobytes()


def decode(data: bytes, precision: int = 64, n: int | None = None) -> PhaseMessage:
    """Inverse of :func:`encode`. ``n`` enables the tuple range check."""
    if len(data) < HEADER.size:
        raise TruncatedPayload(f"{len(data)} bytes is shorter than the header")
    magic, version, phase, source, iteration, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"wire version {version}, expected {VERSION}")
    try:
        phase = Phase(phase)
    except ValueError:
        raise CodecError(f"unknown phase id {phase}") from None
    dt = _record_dtype(phase.arity, precision)
    need = HEADER.size + count * dt.itemsize
    if len(data) < need:
        raise TruncatedPayload(f"payload has {len(data)} bytes, header announces {need}")
    if len(data) > need:
        raise TrailingData(f"{len(data) - need} unexpected bytes after the payload")
    rec = np.frombuffer(data, dtype=dt, count=count, offset=HEADER.size)
    tuples = rec["t"].copy()
    if n is not None and tuples.size and int(tuples.max()) >= n:
        raise TupleOutOfRange(f"tuple component {int(tuples.max())} >= n={n}")
    values = rec["v"].astype(_dtype(precision).newbyteorder("="))
    return PhaseMessage(phase, source, iteration, tuples, values)
