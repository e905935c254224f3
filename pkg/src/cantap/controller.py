"""CAN controller model: transmit queue, arbitration, ACK, fault
confinement (TEC/REC, error states, error and overload flags,
retransmission, error-passive suspend, bus-off)."""

from __future__ import annotations

import enum
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from . import core
from .bus import NEVER, Node, NodeKind, Outcome, TraceRecord
from .core import DOMINANT, RECESSIVE, Decoder, EventKind, FrameSpec

_P_IDLE, _P_FRAME, _P_ACK, _P_FLAG = (int(core.Phase.IDLE), int(core.Phase.FRAME), int(core.Phase.ACK),
                                      int(core.Phase.FLAG))

PASSIVE_LIMIT = 127
BUS_OFF_LIMIT = 255
TX_ERROR_STEP = 8
SUSPEND_BITS = 8


class ErrorState(enum.Enum):
    ACTIVE = "ErrorActive"
    PASSIVE = "ErrorPassive"
    BUS_OFF = "BusOff"


def error_state_for(tec: int, rec: int) -> ErrorState:
    if tec > BUS_OFF_LIMIT:
        return ErrorState.BUS_OFF
    if tec > PASSIVE_LIMIT or rec > PASSIVE_LIMIT:
        return ErrorState.PASSIVE
    return ErrorState.ACTIVE


@dataclass
class ErrorCounters:
    tec: int = 0
    rec: int = 0

    @property
    def state(self) -> ErrorState:
        return error_state_for(self.tec, self.rec)


# -- schedules ---------------------------------------------------------------

FrameSource = Union[FrameSpec, Callable[[random.Random, int], FrameSpec]]


def _make(frame: FrameSource, rng: random.Random, t: int) -> FrameSpec:
    return frame if isinstance(frame, FrameSpec) else frame(rng, t)


@dataclass(frozen=True)
class Now:
    pass


@dataclass(frozen=True)
class AtTick:
    tick: int


@dataclass(frozen=True)
class Periodic:
    period: int
    start: Optional[int] = None
    stop: Optional[int] = None


class Source:
    """Something that enqueues frames at known ticks.

    ``next_tick`` is the next firing tick (``None`` when exhausted);
    ``fire(t, rng)`` returns ``(frame, tag)`` pairs and advances it.
    """

    next_tick: Optional[int] = None

    def fire(self, t: int, rng: random.Random) -> list:
        raise NotImplementedError


class PeriodicSource(Source):
    def __init__(self, frame: FrameSource, period: int, start: int, stop: Optional[int] = None,
                 tag: Optional[str] = None):
        if period <= 0:
            raise ValueError("period must be positive")
        self.frame = frame
        self.period = period
        self.stop = stop
        self.tag = tag
        self.next_tick = start if stop is None or start < stop else None

    def fire(self, t, rng):
        out = [(_make(self.frame, rng, t), self.tag)]
        nxt = self.next_tick + self.period
        self.next_tick = nxt if self.stop is None or nxt < self.stop else None
        return out


class OneShotSource(Source):
    def __init__(self, frame: FrameSource, tick: int, tag: Optional[str] = None):
        self.frame = frame
        self.tag = tag
        self.next_tick = tick

    def fire(self, t, rng):
        self.next_tick = None
        return [(_make(self.frame, rng, t), self.tag)]


@dataclass(eq=False)
class TxItem:
    frame: FrameSpec
    uid: tuple
    tag: Optional[str]
    enqueued: int
    retrans: int = 0
    prevented: bool = False
    # None while queued; then "delivered", "prevented" or "aborted"
    status: Optional[str] = None
    bits: list = field(default_factory=list, repr=False)
    arb_end: int = 0
    ack_i: int = 0

    def __post_init__(self):
        stuffed, positions = core.stuff_bits(core.serialize(self.frame).bits)
        # stuffed index of the 11th ID bit
        raw = 0
        pos = set(positions)
        for i in range(len(stuffed)):
            if i in pos:
                continue
            if raw == core.ID_BITS:
                self.arb_end = i
                break
            raw += 1
        self.bits = stuffed + [RECESSIVE, RECESSIVE] + [RECESSIVE] * core.EOF_BITS
        self.ack_i = len(stuffed) + 1

    @property
    def legitimate(self) -> bool:
        return self.tag is None


class Controller(Node):
    """Standard CAN controller plus transceiver.

    ``cantx`` is the controller's transmit pin: recessive when idle or
    receiving, dominant for dominant frame bits, active flags and ACKs.
    """

    def __init__(self, node_id: str, kind: NodeKind = NodeKind.ECU, monitored: bool = False,
                 seed: int = 0):
        super().__init__(node_id, monitored)
        self.kind = kind
        self.rng = random.Random(seed)
        self.tec = 0
        self.rec = 0
        self.bus_off = False
        self.bus_off_tick: Optional[int] = None
        self.queue: deque[TxItem] = deque()
        self.items: list[TxItem] = []
        self.sources: list[Source] = []
        self._next_due = NEVER
        # private decoder only while this node's view diverges from the bus reference
        self._own: Optional[Decoder] = Decoder()
        self.tx: Optional[TxItem] = None
        self._i = 0
        self.role_tx = False
        self.flag_level = DOMINANT
        self.suspend_until = 0
        self.counter_log: list[tuple[int, str, int, int]] = []
        self.frame_listeners: list[Callable[[FrameSpec, int], None]] = []
        self.won_listeners: list[Callable[[TxItem, int, int], None]] = []
        self._seq = 0

    def attached(self, bus):
        super().attached(bus)
        self._own = None

    @property
    def decoder(self) -> Decoder:
        return self._own if self._own is not None else self.bus.ref

    def _diverge(self) -> Decoder:
        if self._own is None:
            self._own = self.bus.ref.copy()
        return self._own

    # -- state
    @property
    def counters(self) -> ErrorCounters:
        return ErrorCounters(self.tec, self.rec)

    @property
    def error_state(self) -> ErrorState:
        return error_state_for(self.tec, self.rec)

    def cantx_level(self) -> int:
        return self.cantx

    # -- queueing
    def add_source(self, source: Source):
        if source.next_tick is not None:
            self.sources.append(source)
            self._next_due = min(self._next_due, source.next_tick)

    def enqueue(self, frame: FrameSource, schedule=Now(), tag: Optional[str] = None) -> bool:
        if self.bus_off:
            return False
        now = self.bus.time if self.bus is not None else 0
        if isinstance(schedule, Now):
            self._push(_make(frame, self.rng, now), tag, now)
        elif isinstance(schedule, AtTick):
            self.add_source(OneShotSource(frame, schedule.tick, tag))
        elif isinstance(schedule, Periodic):
            start = now if schedule.start is None else schedule.start
            self.add_source(PeriodicSource(frame, schedule.period, start, schedule.stop, tag))
        else:
            raise TypeError(f"unknown schedule {schedule!r}")
        return True

    def _push(self, frame: FrameSpec, tag, t) -> Optional[TxItem]:
        if self.bus_off:
            return None
        item = TxItem(frame, (self.node_id, self._seq), tag, t)
        self._seq += 1
        self.queue.append(item)
        self.items.append(item)
        return item

    def _poll(self, t: int):
        nxt = NEVER
        for src in self.sources:
            while src.next_tick is not None and src.next_tick <= t:
                for frame, tag in src.fire(t, self.rng):
                    self._push(frame, tag, t)
            if src.next_tick is not None and src.next_tick < nxt:
                nxt = src.next_tick
        self.sources = [s for s in self.sources if s.next_tick is not None]
        self._next_due = nxt

    def next_event(self, t: int) -> int:
        if self.bus_off:
            return NEVER
        if self.decoder.phase != _P_IDLE or self.role_tx:
            return t
        if self.queue:
            return max(t, self.suspend_until)
        return max(t, self._next_due)

    # -- counters
    def _log(self, t, cause):
        self.counter_log.append((t, cause, self.tec, self.rec))

    def _go_bus_off(self, t):
        self.bus_off = True
        self.bus_off_tick = t
        self.cantx = RECESSIVE
        if self.tx is not None:
            self.tx.status = "prevented" if self.tx.prevented else "aborted"
            self.tx = None

    # -- bit-time interface
    def drive(self, t: int) -> int:
        if self.bus_off:
            return RECESSIVE
        if t >= self._next_due:
            self._poll(t)
        tx = self.tx
        if tx is not None:
            level = tx.bits[self._i]
        else:
            ph = (self._own or self.bus.ref).phase
            level = RECESSIVE
            if ph == _P_FRAME:
                pass
            elif ph == _P_FLAG:
                level = self.flag_level
            elif ph == _P_ACK:
                if self.decoder.crc_ok and self.error_state is ErrorState.ACTIVE:
                    level = DOMINANT
            elif ph == _P_IDLE:
                if self.role_tx:
                    self.role_tx = False
                    if self.error_state is ErrorState.PASSIVE:
                        self.suspend_until = t + SUSPEND_BITS
                if self.queue and t >= self.suspend_until:
                    self.tx = self.queue[0]
                    self._i = 0
                    self.role_tx = True
                    level = DOMINANT
        self.cantx = level
        return level

    def sense(self, t: int, level: int) -> None:
        own = self._own
        if own is None and self.tx is None:
            ev = self.bus.ref_event
            if ev is None or self.bus_off:
                return
        if self.bus_off:
            return
        if own is None:
            ev = self.bus.ref_event
            dec = self.bus.ref
        else:
            dec = own
            ev = None
        tx = self.tx
        if tx is not None:
            i = self._i
            if i == tx.ack_i:
                if level == RECESSIVE:
                    self._tx_error(t)
                    return
            elif tx.bits[i] != level:
                if level == DOMINANT and 1 <= i <= tx.arb_end:
                    self.bus.record(TraceRecord(t, self.node_id, tx.frame, Outcome.ARBITRATION_LOST,
                                                tx.retrans, tx.uid, tx.tag, dec.sof_tick))
                    self.tx = None
                    self.role_tx = False
                else:
                    self._tx_error(t)
                    return
            if self.tx is not None:
                if own is not None:
                    own.feed(level, t)
                self._i = i + 1
                if i == tx.arb_end:
                    self.bus.current_tx = (self, tx)
                    for cb in self.won_listeners:
                        cb(tx, t, dec.sof_tick)
                if self._i == len(tx.bits):
                    self._tx_done(t)
                return
            ev = self.bus.ref_event if own is None else None
        if own is not None:
            ev = own.feed(level, t)
            if own.phase == _P_IDLE and self.bus.ref.phase == _P_IDLE:
                self._own = None
        if ev is None:
            return
        kind = ev.kind
        if kind is EventKind.SOF_DETECTED:
            self.role_tx = False
        elif kind is EventKind.FRAME_COMPLETE:
            if self.rec > 0:
                self.rec -= 1
            self._log(t, "rx_ok")
            if self is self.bus.logger:
                self.bus.log_delivery(t, ev.frame, dec.sof_tick)
            for cb in self.frame_listeners:
                cb(ev.frame, t)
        elif kind is EventKind.OVERLOAD:
            self.flag_level = DOMINANT
        elif kind in core.ERROR_EVENTS:
            if self.role_tx:
                self.tec += TX_ERROR_STEP
                self._log(t, "tx_error")
                if self.tec > BUS_OFF_LIMIT:
                    self._go_bus_off(t)
                    return
            else:
                self.rec += 1
                self._log(t, "rx_error")
            self.flag_level = DOMINANT if self.error_state is ErrorState.ACTIVE else RECESSIVE

    def _tx_error(self, t: int):
        tx = self.tx
        sof = self.decoder.sof_tick
        if sof in self.bus.prevented:
            tx.prevented = True
            outcome = Outcome.PREVENTED
        else:
            outcome = Outcome.ERROR_ABORTED
        self.bus.record(TraceRecord(t, self.node_id, tx.frame, outcome, tx.retrans, tx.uid, tx.tag, sof))
        tx.retrans += 1
        self.tec += TX_ERROR_STEP
        self._log(t, "tx_error")
        if self.tec > BUS_OFF_LIMIT:
            self._go_bus_off(t)
            return
        self.tx = None
        self._diverge().force_error()
        self.flag_level = DOMINANT if self.error_state is ErrorState.ACTIVE else RECESSIVE

    def _tx_done(self, t: int):
        tx = self.tx
        self.tx = None
        if self.tec > 0:
            self.tec -= 1
        self._log(t, "tx_ok")
        self.queue.popleft()
        tx.status = "delivered"
        if self.bus.logger is None:
            self.bus.record(TraceRecord(t, self.node_id, tx.frame, Outcome.DELIVERED, tx.retrans,
                                        tx.uid, tx.tag, self.decoder.last_sof))


class Dashboard(Controller):
    """Receiver that logs every frame it accepts."""

    def __init__(self, node_id: str = "dashboard", monitored: bool = False, seed: int = 0):
        super().__init__(node_id, NodeKind.DASHBOARD, monitored, seed)
