"""Attacker nodes.

Frame-injection attackers (FIA) only ask a conformant controller to send
frames.  Single-bit attackers (SBA) sit directly on the transceiver and
overwrite individual recessive bits of other nodes' traffic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence, Union

from . import core
from .bus import NEVER, Node, NodeKind, TraceRecord
from .controller import Controller, OneShotSource, PeriodicSource, TxItem
from .core import DOMINANT, RECESSIVE, Decoder, EventKind, FrameSpec

_P_IDLE, _P_EOF, _P_IFS = int(core.Phase.IDLE), int(core.Phase.EOF), int(core.Phase.IFS)


class AttackKind(enum.Enum):
    FLOODING = "Flooding"
    SPOOF = "Spoof"
    REPLAY = "Replay"
    SELECTIVE_DOS = "SelectiveDos"
    DOUBLE_RECEIVING = "DoubleReceiving"
    FREEZE_DOOM_LOOP = "FreezeDoomLoop"

    @property
    def is_fia(self) -> bool:
        return self in (AttackKind.FLOODING, AttackKind.SPOOF, AttackKind.REPLAY)


@dataclass(frozen=True)
class AttackEntry:
    bit_time: int
    kind: AttackKind
    frame_id: Optional[int]
    # stuffed bit index from SOF of the injected bit; None for FIA frames
    position: Optional[int]
    frame_start: Optional[int]
    attacker: str
    # FIA: the malicious TxItem uid; SBA: the victim frame's uid if known
    uid: Optional[tuple] = None

    def line(self) -> str:
        fid = "-" if self.frame_id is None else f"{self.frame_id:03X}"
        pos = "-" if self.position is None else str(self.position)
        return f"{self.bit_time} {self.kind.value} {fid} {pos} {self.attacker}"


class AttackLog:
    """Append-only ground truth for scoring."""

    def __init__(self):
        self.entries: list[AttackEntry] = []
        # FIA uid -> SOF ticks of every attempt that won arbitration
        self.attempts: dict[tuple, list[int]] = {}

    def append(self, entry: AttackEntry):
        self.entries.append(entry)

    def note_attempt(self, item: TxItem, kind: AttackKind, t: int, sof: int, attacker: str):
        starts = self.attempts.get(item.uid)
        if starts is None:
            self.attempts[item.uid] = [sof]
            self.append(AttackEntry(t, kind, item.frame.id, None, sof, attacker, item.uid))
        else:
            starts.append(sof)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_kind(self, kind: AttackKind) -> list[AttackEntry]:
        return [e for e in self.entries if e.kind is kind]


# -- FIA ----------------------------------------------------------------------

PayloadGen = Union[bytes, Callable[..., bytes]]


def _payload(gen: PayloadGen, rng, t) -> bytes:
    return bytes(gen) if isinstance(gen, (bytes, bytearray, list, tuple)) else bytes(gen(rng, t))


class SpoofMode(enum.Enum):
    BLIND = "blind"
    AFTER_LEGIT = "after-legit"


@dataclass(frozen=True)
class Flooding:
    id: int
    period: int
    payload: bytes = bytes(8)
    start: int = 0
    stop: Optional[int] = None
    kind = AttackKind.FLOODING


@dataclass(frozen=True)
class Spoof:
    id: int
    payload_gen: PayloadGen
    mode: SpoofMode = SpoofMode.BLIND
    period: int = 5000
    start: int = 0
    stop: Optional[int] = None
    kind = AttackKind.SPOOF


@dataclass(frozen=True)
class Replay:
    # (tick offset, frame) pairs, or TraceRecords whose bit_time is used
    trace_segment: tuple
    repeat: int = 1
    start: int = 0
    kind = AttackKind.REPLAY


FiaStrategy = Union[Flooding, Spoof, Replay]


def _check_id(frame_id: int):
    if not 0 <= frame_id < 1 << core.ID_BITS:
        raise ValueError(f"id {frame_id:#x} is not an 11-bit identifier")


def fia_run(attacker: Controller, strategy: FiaStrategy, log: Optional[AttackLog] = None) -> AttackLog:
    """Arm ``attacker`` (a plain controller) with ``strategy``.

    Everything on the wire stays protocol-conformant; frames are only
    enqueued.  Every malicious frame is logged once, when it first wins
    arbitration.
    """
    log = AttackLog() if log is None else log
    kind = strategy.kind
    tag = kind.value
    attacker.kind = NodeKind.FIA

    def on_won(item: TxItem, t: int, sof: int):
        if item.tag == tag:
            log.note_attempt(item, kind, t, sof, attacker.node_id)

    attacker.won_listeners.append(on_won)

    if isinstance(strategy, Flooding):
        _check_id(strategy.id)
        frame = FrameSpec.of(strategy.id, strategy.payload)
        attacker.add_source(PeriodicSource(frame, strategy.period, strategy.start, strategy.stop, tag))
    elif isinstance(strategy, Spoof):
        _check_id(strategy.id)

        def make(rng, t, s=strategy):
            return FrameSpec.of(s.id, _payload(s.payload_gen, rng, t))

        if strategy.mode is SpoofMode.BLIND:
            attacker.add_source(PeriodicSource(make, strategy.period, strategy.start, strategy.stop, tag))
        else:
            def after_legit(frame: FrameSpec, t: int, s=strategy):
                if frame.id == s.id and t >= s.start and (s.stop is None or t < s.stop):
                    attacker._push(make(attacker.rng, t), tag, t)

            attacker.frame_listeners.append(after_legit)
    elif isinstance(strategy, Replay):
        segment = [(r.bit_time, r.frame) if isinstance(r, TraceRecord) else (int(r[0]), r[1])
                   for r in strategy.trace_segment]
        if segment:
            base = segment[0][0]
            span = segment[-1][0] - base + 1
            for k in range(strategy.repeat):
                for tick, frame in segment:
                    _check_id(frame.id)
                    attacker.add_source(OneShotSource(frame, strategy.start + k * span + tick - base, tag))
    else:
        raise TypeError(f"not an FIA strategy: {strategy!r}")
    return log


# -- SBA ----------------------------------------------------------------------

@lru_cache(maxsize=None)
def first_recessive_after_id(frame_id: int, dlc: int) -> tuple[int, int]:
    """Stuffed indices (from SOF) of the last ID bit and of the first
    recessive bit the transmitter sends after it."""
    header = core.serialize(FrameSpec(frame_id, dlc, bytes(dlc))).bits
    stuffed, positions = core.stuff_bits(header)
    stuffed_set = set(positions)
    raw = -1
    arb_end = None
    for i, bit in enumerate(stuffed):
        if i not in stuffed_set:
            raw += 1
        if arb_end is None:
            if raw == core.ID_BITS and i not in stuffed_set:
                arb_end = i
        elif bit == RECESSIVE:
            return arb_end, i
    raise AssertionError("header always contains a recessive bit after the ID")


@dataclass
class SelectiveDos:
    targets: tuple
    max_hits: Optional[int] = None
    # data length the attacker expects per target (needed to predict the DLC bits)
    dlc: Union[int, dict] = 8
    start: int = 0
    stop: Optional[int] = None
    kind = AttackKind.SELECTIVE_DOS

    def __post_init__(self):
        if isinstance(self.targets, int):
            self.targets = (self.targets,)
        self.targets = tuple(self.targets)
        for fid in self.targets:
            _check_id(fid)

    def dlc_for(self, frame_id: int) -> int:
        return self.dlc.get(frame_id, 8) if isinstance(self.dlc, dict) else self.dlc


@dataclass
class DoubleReceiving:
    target: int
    start: int = 0
    stop: Optional[int] = None
    kind = AttackKind.DOUBLE_RECEIVING


@dataclass
class FreezeDoomLoop:
    duration: int
    start: int = 0
    kind = AttackKind.FREEZE_DOOM_LOOP


SbaStrategy = Union[SelectiveDos, DoubleReceiving, FreezeDoomLoop]


def _active(s, t: int) -> bool:
    return t >= s.start and (s.stop is None or t < s.stop)


class SbaAttacker(Node):
    """Transceiver-level attacker.

    It tracks the bus with its own decoder and drives dominant bits at
    chosen instants.  An optional ``host`` controller models a compromised
    ECU that still runs its normal traffic; the tap then sees both.
    """

    kind = NodeKind.SBA

    def __init__(self, node_id: str, strategy: SbaStrategy, monitored: bool = True,
                 log: Optional[AttackLog] = None, host: Optional[Controller] = None):
        super().__init__(node_id, monitored)
        if host is not None and host.node_id != node_id:
            raise ValueError("host controller must share the attacker's node id")
        self.strategy = strategy
        self.log = AttackLog() if log is None else log
        self.host = host
        self.hits = 0
        self._pending: Optional[int] = None
        self._pending_pos = 0
        self._pending_id: Optional[int] = None
        self._skip_next = False

    def attached(self, bus):
        super().attached(bus)
        if self.host is not None:
            self.host.attached(bus)

    @property
    def decoder(self) -> Decoder:
        return self.bus.ref

    @property
    def active(self) -> bool:
        s = self.strategy
        return s.max_hits is None or self.hits < s.max_hits if isinstance(s, SelectiveDos) else True

    def next_event(self, t: int) -> int:
        own = t if self.decoder.phase != _P_IDLE else NEVER
        if self.host is not None:
            return min(own, self.host.next_event(t))
        return own

    def drive(self, t: int) -> int:
        level = self.host.drive(t) if self.host is not None else RECESSIVE
        if self._wants(t):
            level = DOMINANT
        self.cantx = level
        return level

    def _wants(self, t: int) -> bool:
        s = self.strategy
        dec = self.decoder
        if isinstance(s, FreezeDoomLoop):
            if dec.phase == _P_IFS and dec.pos == 0 and s.start <= t < s.start + s.duration:
                self._log(t, dec.last_id, dec.last_sof)
                return True
            return False
        if self._pending is not None and t == self._pending:
            self._pending = None
            if self.host is not None and self.host.tx is not None:
                return False
            self._log(t, self._pending_id, dec.sof_tick)
            return True
        return False

    def _log(self, t: int, frame_id, sof):
        cur = self.bus.current_tx if self.bus is not None else None
        uid = cur[1].uid if cur is not None and cur[1].frame.id == frame_id else None
        pos = None if sof is None else t - sof
        self.hits += 1
        self.log.append(AttackEntry(t, self.strategy.kind, frame_id, pos, sof, self.node_id, uid))

    def sense(self, t: int, level: int) -> None:
        if self.host is not None:
            self.host.sense(t, level)
        ev = self.bus.ref_event
        if ev is None:
            return
        s = self.strategy
        if isinstance(s, SelectiveDos):
            if (ev.kind is EventKind.ARBITRATION_COMPLETE and ev.frame_id in s.targets
                    and _active(s, t) and self.active):
                arb_end, inject = first_recessive_after_id(ev.frame_id, s.dlc_for(ev.frame_id))
                self._pending = self.decoder.sof_tick + inject
                self._pending_id = ev.frame_id
            elif ev.kind is not EventKind.ARBITRATION_COMPLETE and ev.kind is not EventKind.SOF_DETECTED:
                self._pending = None
        elif isinstance(s, DoubleReceiving):
            if ev.kind is EventKind.FRAME_COMPLETE and ev.frame_id == s.target and _active(s, t):
                if self._skip_next:
                    self._skip_next = False
                else:
                    self._skip_next = True
                    self._pending = t + 1
                    self._pending_id = ev.frame_id


def sba_run(node_id: str, strategy: SbaStrategy, monitored: bool = True, log: Optional[AttackLog] = None,
            host: Optional[Controller] = None) -> SbaAttacker:
    """Build a bit-level attacker ready to attach to a bus."""
    return SbaAttacker(node_id, strategy, monitored, log, host)
