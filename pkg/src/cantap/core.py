"""Frame-level CAN 2.0A codec: field layout, CRC-15, bit stuffing, and an
incremental decoder that follows the resolved bus level one bit at a time.

Levels are plain ints (0 = dominant, 1 = recessive) on the hot path;
:class:`BitLevel` names them for public APIs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

DOMINANT = 0
RECESSIVE = 1

CRC15_POLY = 0x4599
CRC15_MASK = 0x7FFF

ID_BITS = 11
MAX_ID = (1 << ID_BITS) - 1
MAX_DLC = 8
STUFF_RUN = 5

# SOF, ID, RTR, IDE, r0, DLC
HEADER_BITS = 1 + ID_BITS + 1 + 1 + 1 + 4
CRC_BITS = 15
EOF_BITS = 7
IFS_BITS = 3
FLAG_BITS = 6
DELIMITER_BITS = 8
# CRC DEL, ACK, EOF, IFS
TRAILER_BITS = 1 + 1 + EOF_BITS + IFS_BITS


class BitLevel(enum.IntEnum):
    DOMINANT = DOMINANT
    RECESSIVE = RECESSIVE

    @staticmethod
    def wired_and(levels: Iterable[int]) -> "BitLevel":
        """Resolve simultaneously driven levels: any dominant wins."""
        for level in levels:
            if level == DOMINANT:
                return BitLevel.DOMINANT
        return BitLevel.RECESSIVE


class StuffViolation(ValueError):
    """Six identical consecutive bits inside the stuffed region."""


@dataclass(frozen=True)
class FrameSpec:
    id: int
    dlc: int
    payload: bytes = b""

    def __post_init__(self):
        if not isinstance(self.id, int) or not 0 <= self.id <= MAX_ID:
            raise ValueError(f"id must be an 11-bit value, got {self.id!r}")
        if not isinstance(self.dlc, int) or not 0 <= self.dlc <= MAX_DLC:
            raise ValueError(f"dlc must be in 0..8, got {self.dlc!r}")
        payload = bytes(self.payload)
        if len(payload) != self.dlc:
            raise ValueError(f"payload length {len(payload)} does not match dlc {self.dlc}")
        object.__setattr__(self, "payload", payload)

    @classmethod
    def of(cls, id: int, payload: bytes | Sequence[int] = b"") -> "FrameSpec":
        payload = bytes(payload)
        return cls(id, len(payload), payload)

    def __str__(self):
        return f"{self.id:03X}#{self.payload.hex().upper()}"


# (name, width) in wire order; data width depends on dlc
FIELD_ORDER = (
    ("SOF", 1), ("ID", ID_BITS), ("RTR", 1), ("IDE", 1), ("r0", 1), ("DLC", 4),
    ("DATA", None), ("CRC", CRC_BITS),
    ("CRC_DEL", 1), ("ACK", 1), ("EOF", EOF_BITS), ("IFS", IFS_BITS),
)


def field_layout(dlc: int) -> list[tuple[str, int, int]]:
    """``(name, start, width)`` for every field of an unstuffed frame."""
    out = []
    start = 0
    for name, width in FIELD_ORDER:
        if width is None:
            width = 8 * dlc
        out.append((name, start, width))
        start += width
    return out


@dataclass(frozen=True)
class RawBitstream:
    """Unstuffed frame: ``bits`` is SOF..CRC, ``trailer`` is CRC DEL..IFS."""

    bits: tuple[int, ...]
    trailer: tuple[int, ...] = (RECESSIVE,) * TRAILER_BITS

    def __len__(self):
        return len(self.bits) + len(self.trailer)


@dataclass(frozen=True)
class StuffedBitstream:
    """Wire image: ``bits`` is the stuffed SOF..CRC region, ``trailer`` is
    appended unstuffed. ``stuff_positions`` index into ``bits``."""

    bits: tuple[int, ...]
    stuff_positions: frozenset[int] = field(default_factory=frozenset)
    trailer: tuple[int, ...] = (RECESSIVE,) * TRAILER_BITS

    @property
    def wire(self) -> tuple[int, ...]:
        return self.bits + self.trailer

    def __len__(self):
        return len(self.bits) + len(self.trailer)


def _int_bits(value: int, width: int) -> list[int]:
    return [(value >> (width - 1 - i)) & 1 for i in range(width)]


def compute_crc15(bits: Iterable[int]) -> int:
    """CRC-15/CAN remainder of ``bits`` (SOF through the last data bit)."""
    crc = 0
    for bit in bits:
        if ((crc >> 14) & 1) ^ bit:
            crc = ((crc << 1) ^ CRC15_POLY) & CRC15_MASK
        else:
            crc = (crc << 1) & CRC15_MASK
    return crc


def serialize(frame: FrameSpec) -> RawBitstream:
    if not isinstance(frame, FrameSpec):
        raise TypeError("serialize expects a FrameSpec")
    bits = [DOMINANT]
    bits += _int_bits(frame.id, ID_BITS)
    # RTR, IDE, r0: standard data frame only
    bits += [DOMINANT, DOMINANT, DOMINANT]
    bits += _int_bits(frame.dlc, 4)
    for byte in frame.payload:
        bits += _int_bits(byte, 8)
    bits += _int_bits(compute_crc15(bits), CRC_BITS)
    return RawBitstream(tuple(bits))


def stuff_bits(bits: Iterable[int]) -> tuple[list[int], list[int]]:
    """Insert a complement bit after every run of five equal bits.

    The inserted bit starts the next run. Returns ``(out, stuff_positions)``.
    """
    out: list[int] = []
    positions: list[int] = []
    run_level = -1
    run_len = 0
    for bit in bits:
        if run_len == STUFF_RUN:
            stuff = 1 - run_level
            positions.append(len(out))
            out.append(stuff)
            run_level, run_len = stuff, 1
        out.append(bit)
        if bit == run_level:
            run_len += 1
        else:
            run_level, run_len = bit, 1
    if run_len == STUFF_RUN:
        positions.append(len(out))
        out.append(1 - run_level)
    return out, positions


def destuff_bits(bits: Iterable[int]) -> list[int]:
    out: list[int] = []
    run_level = -1
    run_len = 0
    for i, bit in enumerate(bits):
        if run_len == STUFF_RUN:
            if bit == run_level:
                raise StuffViolation(f"six consecutive {'dominant' if bit == 0 else 'recessive'} bits ending at index {i}")
            run_level, run_len = bit, 1
            continue
        out.append(bit)
        if bit == run_level:
            run_len += 1
        else:
            run_level, run_len = bit, 1
    return out


def stuff(raw: RawBitstream) -> StuffedBitstream:
    bits, positions = stuff_bits(raw.bits)
    return StuffedBitstream(tuple(bits), frozenset(positions), raw.trailer)


def destuff(stuffed: StuffedBitstream) -> RawBitstream:
    return RawBitstream(tuple(destuff_bits(stuffed.bits)), stuffed.trailer)


def max_stuff_bits(n: int) -> int:
    """Worst-case stuff bits for an ``n``-bit stuffed region.

    The first stuff bit needs five input bits; since each stuff bit opens
    the next run, later ones can follow every four input bits.
    """
    if n < STUFF_RUN:
        return 0
    return 1 + (n - STUFF_RUN) // 4


def wire_bits(frame: FrameSpec, ack: int = DOMINANT) -> list[int]:
    """Bits a transmitter puts on the bus, SOF through EOF (no IFS), with
    the ACK slot set to ``ack``."""
    s = stuff(serialize(frame))
    trailer = [RECESSIVE, ack] + [RECESSIVE] * EOF_BITS
    return list(s.bits) + trailer


# -- incremental decoder -----------------------------------------------------

class Phase(enum.IntEnum):
    IDLE = 0
    FRAME = 1        # SOF..CRC, stuffed
    CRC_DEL = 2
    ACK = 3
    EOF = 4
    IFS = 5
    FLAG = 6         # error or overload flag, values ignored
    FLAG_WAIT = 7    # waiting for the first recessive bit after a flag
    DELIMITER = 8    # remaining recessive delimiter bits


class EventKind(enum.Enum):
    SOF_DETECTED = "SofDetected"
    ARBITRATION_COMPLETE = "ArbitrationComplete"
    ACK_SLOT = "AckSlot"
    FRAME_COMPLETE = "FrameComplete"
    STUFF_ERROR = "StuffError"
    FORM_ERROR = "FormError"
    CRC_MISMATCH = "CrcMismatch"
    OVERLOAD = "Overload"


ERROR_EVENTS = frozenset({EventKind.STUFF_ERROR, EventKind.FORM_ERROR, EventKind.CRC_MISMATCH})


@dataclass(frozen=True)
class DecoderEvent:
    kind: EventKind
    bit_time: int
    frame_id: Optional[int] = None
    frame: Optional[FrameSpec] = None
    # StuffError: True when the offending run was dominant (error-flag shape)
    dominant_run: bool = False


_P_IDLE, _P_FRAME, _P_CRC_DEL, _P_ACK, _P_EOF, _P_IFS, _P_FLAG, _P_FLAG_WAIT, _P_DELIM = range(9)


class Decoder:
    """Bus observer fed one resolved level per bit-time.

    Besides frame fields it tracks error/overload signalling the way an
    error-active node would time it (6-bit flag, wait for recessive,
    7 more recessive bits, 3-bit intermission), so every observer stays
    aligned with the controllers. ``phase``/``pos`` always describe the
    *next* bit to be received.
    """

    __slots__ = (
        "phase", "pos", "sof_tick", "arb_tick", "frame_id", "dlc", "crc_ok",
        "last_id", "last_sof", "overload",
        "_raw", "_run_level", "_run_len", "_acc", "_data", "_crc", "_rx_crc", "_total",
        "_crc_end",
    )

    def __init__(self):
        self.reset()
        self.last_id = None
        self.last_sof = None

    def copy(self) -> "Decoder":
        twin = Decoder.__new__(Decoder)
        for name in Decoder.__slots__:
            if hasattr(self, name):
                val = getattr(self, name)
                setattr(twin, name, bytearray(val) if isinstance(val, bytearray) else val)
        return twin

    def reset(self):
        self.phase = _P_IDLE
        self.pos = 0
        self.sof_tick = None
        self.arb_tick = None
        self.frame_id = None
        self.dlc = None
        self.crc_ok = False
        self.overload = False
        self._raw = 0

    # -- signalling helpers
    def force_error(self):
        """Enter error signalling; the flag begins with the next bit."""
        self.phase = _P_FLAG
        self.pos = 0
        self.overload = False

    def _signal(self, overload: bool):
        self.phase = _P_FLAG
        self.pos = 0
        self.overload = overload

    @property
    def in_frame(self) -> bool:
        return _P_FRAME <= self.phase <= _P_EOF

    def _start_frame(self, t: int):
        self.phase = _P_FRAME
        self.sof_tick = t
        self.last_sof = t
        self.arb_tick = None
        self.frame_id = None
        self.dlc = None
        self.crc_ok = False
        self._raw = 1
        self._run_level = DOMINANT
        self._run_len = 1
        self._acc = 0
        self._data = bytearray()
        self._crc = 0
        self._rx_crc = 0
        self._total = -1
        self._crc_end = -1

    def feed(self, bit: int, t: int) -> Optional[DecoderEvent]:
        phase = self.phase
        if phase == _P_IDLE:
            if bit == DOMINANT:
                self._start_frame(t)
                return DecoderEvent(EventKind.SOF_DETECTED, t)
            return None
        if phase == _P_FRAME:
            return self._feed_frame(bit, t)
        if phase == _P_FLAG:
            self.pos += 1
            if self.pos == FLAG_BITS:
                self.phase = _P_FLAG_WAIT
            return None
        if phase == _P_FLAG_WAIT:
            if bit == RECESSIVE:
                self.phase = _P_DELIM
                self.pos = 1
            return None
        if phase == _P_DELIM:
            if bit == DOMINANT:
                self._signal(False)
                return DecoderEvent(EventKind.FORM_ERROR, t, self.frame_id)
            self.pos += 1
            if self.pos == DELIMITER_BITS:
                self.phase = _P_IFS
                self.pos = 0
            return None
        if phase == _P_IFS:
            if bit == DOMINANT:
                if self.pos == IFS_BITS - 1:
                    self._start_frame(t)
                    return DecoderEvent(EventKind.SOF_DETECTED, t)
                self._signal(True)
                return DecoderEvent(EventKind.OVERLOAD, t, self.frame_id)
            self.pos += 1
            if self.pos == IFS_BITS:
                self.phase = _P_IDLE
                self.pos = 0
            return None
        if phase == _P_CRC_DEL:
            if bit == DOMINANT:
                self._signal(False)
                return DecoderEvent(EventKind.FORM_ERROR, t, self.frame_id)
            self.phase = _P_ACK
            return None
        if phase == _P_ACK:
            self.phase = _P_EOF
            self.pos = 0
            if not self.crc_ok:
                self._signal(False)
                return DecoderEvent(EventKind.CRC_MISMATCH, t, self.frame_id)
            return DecoderEvent(EventKind.ACK_SLOT, t, self.frame_id)
        # EOF
        pos = self.pos
        if bit == DOMINANT:
            if pos == EOF_BITS - 1:
                # receivers already accepted the frame; last EOF bit is an overload condition
                self._signal(True)
                return DecoderEvent(EventKind.OVERLOAD, t, self.frame_id)
            self._signal(False)
            return DecoderEvent(EventKind.FORM_ERROR, t, self.frame_id)
        self.pos = pos + 1
        if pos == EOF_BITS - 2:
            frame = FrameSpec(self.frame_id, self.dlc, bytes(self._data))
            return DecoderEvent(EventKind.FRAME_COMPLETE, t, self.frame_id, frame)
        if pos == EOF_BITS - 1:
            self.phase = _P_IFS
            self.pos = 0
        return None

    def _feed_frame(self, bit: int, t: int) -> Optional[DecoderEvent]:
        if self._run_len == STUFF_RUN:
            if bit == self._run_level:
                self._signal(False)
                return DecoderEvent(EventKind.STUFF_ERROR, t, self.frame_id, dominant_run=bit == DOMINANT)
            self._run_level = bit
            self._run_len = 1
            if self._raw == self._total:
                self.phase = _P_CRC_DEL
            return None
        if bit == self._run_level:
            self._run_len += 1
        else:
            self._run_level = bit
            self._run_len = 1
        idx = self._raw
        self._raw = idx + 1
        event = None
        if idx <= self._crc_end or self._crc_end < 0:
            if (self._crc >> 14) & 1 ^ bit:
                self._crc = ((self._crc << 1) ^ CRC15_POLY) & CRC15_MASK
            else:
                self._crc = (self._crc << 1) & CRC15_MASK
        if idx <= ID_BITS:
            self._acc = (self._acc << 1) | bit
            if idx == ID_BITS:
                self.frame_id = self._acc
                self.last_id = self._acc
                self.arb_tick = t
                self._acc = 0
                event = DecoderEvent(EventKind.ARBITRATION_COMPLETE, t, self.frame_id)
        elif idx <= 14:
            if bit != DOMINANT:
                # only standard data frames are in scope
                self._signal(False)
                return DecoderEvent(EventKind.FORM_ERROR, t, self.frame_id)
        elif idx < HEADER_BITS:
            self._acc = (self._acc << 1) | bit
            if idx == HEADER_BITS - 1:
                self.dlc = min(self._acc, MAX_DLC)
                self._acc = 0
                self._crc_end = HEADER_BITS + 8 * self.dlc - 1
                self._total = HEADER_BITS + 8 * self.dlc + CRC_BITS
                if self.dlc == 0:
                    self._crc_end = HEADER_BITS - 1
        elif idx <= self._crc_end:
            self._acc = (self._acc << 1) | bit
            if (idx - HEADER_BITS) % 8 == 7:
                self._data.append(self._acc)
                self._acc = 0
        else:
            self._rx_crc = (self._rx_crc << 1) | bit
            if self._raw == self._total:
                self.crc_ok = self._rx_crc == self._crc
                if self._run_len != STUFF_RUN:
                    self.phase = _P_CRC_DEL
        return event


def decoder_feed(state: Decoder, bit: int, t: int) -> tuple[Decoder, Optional[DecoderEvent]]:
    """Functional-style wrapper: advance ``state`` by one bit."""
    return state, state.feed(int(bit), t)


def decode_bits(bits: Iterable[int], start: int = 0) -> list[DecoderEvent]:
    """Feed a whole bit sequence through a fresh decoder."""
    dec = Decoder()
    events = []
    for t, bit in enumerate(bits, start):
        ev = dec.feed(int(bit), t)
        if ev is not None:
            events.append(ev)
    return events
