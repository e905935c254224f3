"""Lockstep wired-AND bus: every bit-time, each node drives a level, the bus
resolves them, then every node senses the result."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import DOMINANT, RECESSIVE, BitLevel, Decoder, FrameSpec

NEVER = 1 << 62


class NodeKind(enum.Enum):
    ECU = "ecu"
    SENSOR = "sensor"
    DASHBOARD = "dashboard"
    SIMULATOR = "simulator"
    FIA = "fia"
    SBA = "sba"
    OFFICER = "officer"


class Outcome(enum.Enum):
    DELIVERED = "Delivered"
    ARBITRATION_LOST = "ArbitrationLost"
    ERROR_ABORTED = "ErrorAborted"
    PREVENTED = "PreventedByOfficer"


@dataclass(frozen=True)
class NodeHandle:
    node_id: str
    kind: NodeKind
    tap: Optional[str] = None


@dataclass(frozen=True)
class BusTick:
    time: int
    resolved: BitLevel
    drivers: dict


@dataclass(frozen=True)
class TraceRecord:
    bit_time: int
    node_id: str
    frame: FrameSpec
    outcome: Outcome
    retransmission_count: int = 0
    # ground-truth bookkeeping, not part of the exported line
    uid: Optional[tuple] = field(default=None, compare=False)
    tag: Optional[str] = field(default=None, compare=False)
    frame_start: Optional[int] = field(default=None, compare=False)

    def line(self) -> str:
        return (f"{self.bit_time} {self.node_id} {self.frame.id:03X} {self.frame.dlc} "
                f"{self.frame.payload.hex().upper() or '-'} {self.outcome.value} {self.retransmission_count}")


def format_trace(records) -> str:
    return "".join(r.line() + "\n" for r in records)


class Node:
    """Base for anything attached to the bus.

    ``cantx`` holds the level the node drove in the current bit-time, which
    is exactly what a tap on its transmit line reads.
    """

    kind = NodeKind.ECU

    def __init__(self, node_id: str, monitored: bool = False):
        self.node_id = node_id
        self.monitored = monitored
        self.cantx = RECESSIVE
        self.bus: Optional[Bus] = None

    def attached(self, bus: "Bus"):
        self.bus = bus

    def drive(self, t: int) -> int:
        self.cantx = RECESSIVE
        return RECESSIVE

    def sense(self, t: int, level: int) -> None:
        pass

    def next_event(self, t: int) -> int:
        """Earliest tick >= t at which this node must be simulated.

        Only called while the bus is idle; returning ``t`` means "busy".
        """
        return NEVER


class Bus:
    # a frame or error frame always ends with at least this many recessive bits
    _IDLE_PROBE = 12

    def __init__(self, bitrate: int = 500_000):
        self.bitrate = bitrate
        self.time = 0
        self.nodes: list[Node] = []
        self._ids: set[str] = set()
        self.trace: list[TraceRecord] = []
        self.logger = None
        self.officer = None
        # SOF ticks of frames the officer decided to kill
        self.prevented: set[int] = set()
        # (node, TxItem) whose frame is past arbitration
        self.current_tx = None
        self._rec_run = 0
        # one decoder shared by every node whose view of the bus agrees with it;
        # ref_phase/ref_pos describe the current bit, ref_event what it produced
        self.ref = Decoder()
        self.ref_phase = self.ref.phase
        self.ref_pos = 0
        self.ref_event = None

    @property
    def us_per_bit(self) -> float:
        return 1e6 / self.bitrate

    def attach(self, node: Node) -> NodeHandle:
        if node.node_id in self._ids:
            raise ValueError(f"duplicate node id {node.node_id!r}")
        if node.kind is NodeKind.OFFICER and self.officer is not None:
            raise ValueError("a bus hosts at most one officer")
        self._ids.add(node.node_id)
        self.nodes.append(node)
        self.nodes.sort(key=lambda n: n.node_id)
        node.attached(self)
        if node.kind is NodeKind.OFFICER:
            self.officer = node
        if node.kind is NodeKind.DASHBOARD and self.logger is None:
            self.logger = node
        if self.officer is not None:
            self.officer.refresh_taps(self.nodes)
        tap = node.node_id if node.monitored and node.kind is not NodeKind.OFFICER else None
        return NodeHandle(node.node_id, node.kind, tap)

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def record(self, rec: TraceRecord):
        self.trace.append(rec)

    def log_delivery(self, t: int, frame: FrameSpec, frame_start: int):
        """Called by the logging receiver when it accepts a frame."""
        cur = self.current_tx
        if cur is not None and cur[1].frame == frame:
            node, item = cur
            self.record(TraceRecord(t, node.node_id, frame, Outcome.DELIVERED, item.retrans,
                                    item.uid, item.tag, frame_start))
        else:
            self.record(TraceRecord(t, "?", frame, Outcome.DELIVERED, 0, None, None, frame_start))

    def step(self) -> BusTick:
        if not self.nodes:
            raise RuntimeError("no nodes attached")
        t = self.time
        drivers = {n.node_id: BitLevel(n.drive(t)) for n in self.nodes}
        resolved = BitLevel.wired_and(drivers.values())
        ref = self.ref
        self.ref_phase, self.ref_pos = ref.phase, ref.pos
        self.ref_event = ref.feed(int(resolved), t)
        for n in self.nodes:
            n.sense(t, int(resolved))
        self.time = t + 1
        self._rec_run = self._rec_run + 1 if resolved else 0
        return BusTick(t, resolved, drivers)

    def run(self, ticks: int, on_tick: Optional[Callable[[BusTick], None]] = None) -> list[TraceRecord]:
        """Advance exactly ``ticks`` bit-times and return the new trace records.

        Idle stretches are skipped when every node reports nothing to do;
        with ``on_tick`` set every tick is simulated and reported.
        """
        if ticks < 0:
            raise ValueError("ticks must be >= 0")
        first = len(self.trace)
        end = self.time + ticks
        if on_tick is not None:
            while self.time < end:
                on_tick(self.step())
            return self.trace[first:]
        if not self.nodes:
            self.time = end
            return []
        nodes = self.nodes
        drives = [n.drive for n in nodes]
        senses = [n.sense for n in nodes]
        probes = [n.next_event for n in nodes]
        probe_at = self._IDLE_PROBE
        t = self.time
        rec_run = self._rec_run
        ref = self.ref
        feed = ref.feed
        while t < end:
            if rec_run >= probe_at and ref.phase == 0:
                wake = end
                for p in probes:
                    w = p(t)
                    if w < wake:
                        wake = w
                        if w <= t:
                            break
                if wake > t:
                    t = wake
                    continue
                # busy despite an idle-looking bus; probe again a little later
                probe_at = rec_run + 8
            self.time = t
            level = RECESSIVE
            for d in drives:
                if d(t) == DOMINANT:
                    level = DOMINANT
            self.ref_phase = ref.phase
            self.ref_pos = ref.pos
            self.ref_event = feed(level, t)
            for s in senses:
                s(t, level)
            if level:
                rec_run += 1
            else:
                rec_run = 0
                probe_at = self._IDLE_PROBE
            t += 1
        self.time = end
        self._rec_run = rec_run
        return self.trace[first:]
