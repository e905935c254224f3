"""The officer node: a transceiver-only observer that also reads the CANTX
line of every monitored ECU.

It learns which tap owns which identifier, then checks every frame bit by
bit.  An owner tap that stays recessive for six bits after the ID means
someone else is sending that ID (Error1).  A non-owner tap going dominant
inside another node's frame, outside the ACK slot, means a single-bit
injection (Error2).  In prevent mode spoofed frames are killed and the
sender is pushed to bus-off.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from . import core
from .bus import NEVER, Node, NodeKind
from .core import DOMINANT, RECESSIVE, Decoder, EventKind

_P_IDLE, _P_FRAME, _P_ACK, _P_IFS, _P_DELIM = (int(core.Phase.IDLE), int(core.Phase.FRAME), int(core.Phase.ACK),
                                               int(core.Phase.IFS), int(core.Phase.DELIMITER))

ERROR1_WINDOW = 6
KILL_BITS = 6
ESCALATION_CYCLES = 32


class OfficerMode(enum.Enum):
    LEARNING = "learning"
    DETECT = "detect"
    PREVENT = "prevent"


class AlertKind(enum.Enum):
    ERROR1 = "Error1"
    ERROR2 = "Error2"
    UNKNOWN_ID = "UnknownId"


class AmbiguousOwner(Exception):
    """Two taps were seen transmitting the same identifier while learning."""

    def __init__(self, frame_id: int, taps: Iterable[str]):
        self.frame_id = frame_id
        self.taps = tuple(sorted(taps))
        super().__init__(f"id {frame_id:03X} transmitted by several taps: {', '.join(self.taps)}")


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    bit_time: int
    frame_id: Optional[int]
    tap: Optional[str]
    bit_offset: int
    frame_start: Optional[int] = field(default=None, compare=False)

    def line(self) -> str:
        fid = "-" if self.frame_id is None else f"{self.frame_id:03X}"
        return f"{self.bit_time} {self.kind.value} {fid} {self.tap or '-'} {self.bit_offset}"


def format_alerts(alerts) -> str:
    return "".join(a.line() + "\n" for a in alerts)


_ID_RE = re.compile(r"^(?:0x)?([0-9A-Fa-f]{1,3})$")


@dataclass(frozen=True)
class AllowlistTable:
    entries: dict
    # ids seen while learning that no monitored tap transmitted
    unattributed: frozenset = frozenset()

    def __post_init__(self):
        owner = {}
        for tap, ids in self.entries.items():
            for fid in ids:
                if not 0 <= fid < 1 << core.ID_BITS:
                    raise ValueError(f"id {fid:#x} is not 11-bit")
                if fid in owner:
                    raise AmbiguousOwner(fid, (owner[fid], tap))
                owner[fid] = tap
        clash = set(owner) & set(self.unattributed)
        if clash:
            raise ValueError(f"ids listed both owned and unattributed: {sorted(clash)}")
        object.__setattr__(self, "_owner", owner)

    def owner_of(self, frame_id: int) -> Optional[str]:
        return self._owner.get(frame_id)

    def knows(self, frame_id: int) -> bool:
        return frame_id in self._owner or frame_id in self.unattributed

    def dumps(self) -> str:
        lines = []
        for tap in sorted(self.entries):
            lines.append(f"{tap}: " + " ".join(f"0x{i:03X}" for i in sorted(self.entries[tap])))
        if self.unattributed:
            lines.append("-: " + " ".join(f"0x{i:03X}" for i in sorted(self.unattributed)))
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "AllowlistTable":
        entries: dict[str, set] = {}
        loose: set = set()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tap, sep, rest = line.partition(":")
            if not sep:
                raise ValueError(f"allowlist line {n}: expected 'tap: id id ...'")
            ids = set()
            for tok in rest.split():
                m = _ID_RE.match(tok)
                if not m:
                    raise ValueError(f"allowlist line {n}: bad id {tok!r}")
                ids.add(int(m.group(1), 16))
            tap = tap.strip()
            if tap == "-":
                loose |= ids
            else:
                entries.setdefault(tap, set()).update(ids)
        return cls({k: frozenset(v) for k, v in entries.items()}, frozenset(loose))

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "AllowlistTable":
        return cls.loads(Path(path).read_text())


@dataclass
class Escalation:
    start: int
    frame_id: int
    injections: int = 0
    end: Optional[int] = None

    @property
    def cycles(self) -> int:
        return 1 + self.injections


class Officer(Node):
    kind = NodeKind.OFFICER

    def __init__(self, node_id: str = "officer", mode: OfficerMode = OfficerMode.DETECT,
                 allowlist: Optional[AllowlistTable] = None, allow_legacy_overflow: bool = False,
                 schedule: Iterable[tuple[int, OfficerMode]] = (), escalate: bool = True):
        super().__init__(node_id, monitored=False)
        self.mode = mode
        self.allowlist = allowlist if allowlist is not None else AllowlistTable({})
        self.allow_legacy_overflow = allow_legacy_overflow
        self.schedule = sorted(schedule, key=lambda s: s[0])
        self.escalate = escalate
        self.taps: list[Node] = []
        self.alerts: list[Alert] = []
        self.prevented: list[int] = []
        self.escalations: list[Escalation] = []
        self.transition_offsets: list[int] = []
        # learning state
        self._owners: dict[int, set] = {}
        self._seen: set = set()
        self._body_taps: set = set()
        # per-frame check state
        self._checking = False
        self._owner: Optional[Node] = None
        self._e1_pending = False
        self._e2_seen: set = set()
        self._arb = 0
        self._prev_owner_level = RECESSIVE
        self._transition: Optional[int] = None
        # prevention state
        self._kill_left = 0
        self._esc: Optional[Escalation] = None
        self._esc_left = 0

    @property
    def decoder(self) -> Decoder:
        return self.bus.ref

    def refresh_taps(self, nodes):
        self.taps = [n for n in nodes if n.monitored and n is not self]

    def _tap(self, node_id: str) -> Optional[Node]:
        for n in self.taps:
            if n.node_id == node_id:
                return n
        return None

    def set_mode(self, mode: OfficerMode):
        self.mode = mode

    # -- learning
    def allowlist_from_learning(self) -> AllowlistTable:
        entries: dict[str, set] = {}
        for fid in sorted(self._owners):
            taps = self._owners[fid]
            if len(taps) > 1:
                raise AmbiguousOwner(fid, taps)
            if taps:
                entries.setdefault(next(iter(taps)), set()).add(fid)
        loose = frozenset(f for f in self._seen if not self._owners.get(f))
        return AllowlistTable({k: frozenset(v) for k, v in entries.items()}, loose)

    # -- node interface
    def next_event(self, t: int) -> int:
        if self._kill_left or self._esc_left or self._esc is not None or self.decoder.phase != _P_IDLE:
            return t
        if self.schedule:
            return max(t, self.schedule[0][0])
        return NEVER

    def drive(self, t: int) -> int:
        level = RECESSIVE
        if self._kill_left:
            self._kill_left -= 1
            level = DOMINANT
        elif self._esc_left and self.decoder.phase == _P_DELIM and self.decoder.pos == 1:
            self._esc_left -= 1
            self._esc.injections += 1
            level = DOMINANT
        self.cantx = level
        return level

    def _alert(self, kind: AlertKind, t: int, tap: Optional[str], frame_start=None) -> Alert:
        dec = self.decoder
        a = Alert(kind, t, dec.frame_id if dec.frame_id is not None else dec.last_id, tap,
                  t - self._arb, dec.sof_tick if frame_start is None else frame_start)
        self.alerts.append(a)
        return a

    def prevent(self, alert: Alert) -> bool:
        """Kill the frame behind ``alert`` and start bus-off escalation.

        Only frame-spoofing alerts qualify; returns False otherwise.
        """
        if self.mode is not OfficerMode.PREVENT or alert.kind is AlertKind.ERROR2:
            return False
        if self._kill_left or self._esc_left:
            return False
        self._kill_left = KILL_BITS
        self.prevented.append(alert.frame_start)
        if self.bus is not None:
            self.bus.prevented.add(alert.frame_start)
        if self.escalate:
            self._esc = Escalation(alert.bit_time + 1, alert.frame_id)
            self._esc_left = ESCALATION_CYCLES - 1
            self.escalations.append(self._esc)
        self._checking = False
        return True

    def sense(self, t: int, level: int) -> None:
        bus = self.bus
        dec = bus.ref
        phase, pos, ev = bus.ref_phase, bus.ref_pos, bus.ref_event
        mode = self.mode

        if self._esc is not None and self._esc_left == 0 and dec.phase == _P_IFS:
            self._esc.end = t
            self._esc = None

        if mode is OfficerMode.LEARNING:
            if phase == _P_FRAME and dec.arb_tick is not None and t > dec.arb_tick:
                for n in self.taps:
                    if n.cantx == DOMINANT:
                        self._body_taps.add(n.node_id)
        else:
            framed = self._checking
            if framed and t > self._arb:
                if phase == _P_IFS:
                    self._checking = False
                else:
                    self._check_bit(t, phase)
            if phase == _P_IFS and pos == 0 and not self.allow_legacy_overflow:
                self._check_ifs(t, self._owner if framed else None)

        if ev is None:
            return
        kind = ev.kind
        if kind is EventKind.SOF_DETECTED:
            while self.schedule and self.schedule[0][0] <= t:
                self.mode = self.schedule.pop(0)[1]
            self._body_taps = set()
            self._checking = False
        elif kind is EventKind.ARBITRATION_COMPLETE:
            if self.mode is not OfficerMode.LEARNING:
                self._start_checks(t, ev.frame_id)
        elif kind is EventKind.FRAME_COMPLETE:
            if mode is OfficerMode.LEARNING:
                self._seen.add(ev.frame_id)
                self._owners.setdefault(ev.frame_id, set()).update(self._body_taps)
            elif self._transition is not None:
                self.transition_offsets.append(self._transition)
        elif kind is EventKind.ACK_SLOT:
            pass
        else:
            # error or overload signalling follows; other nodes' flags are not attacks
            self._checking = False

    def _start_checks(self, t: int, frame_id: int):
        self._arb = t
        self._e2_seen = set()
        self._transition = None
        table = self.allowlist
        if not table.knows(frame_id):
            self._checking = False
            a = self._alert(AlertKind.UNKNOWN_ID, t, None)
            self.prevent(a)
            return
        self._checking = True
        owner = table.owner_of(frame_id)
        self._owner = self._tap(owner) if owner is not None else None
        self._e1_pending = self._owner is not None
        if self._owner is not None:
            self._prev_owner_level = self._owner.cantx

    def _check_bit(self, t: int, phase: int):
        owner = self._owner
        if owner is not None:
            lvl = owner.cantx
            if self._transition is None and lvl != self._prev_owner_level:
                self._transition = t - self._arb
            self._prev_owner_level = lvl
        if phase != _P_ACK:
            for n in self.taps:
                if n is not owner and n.cantx == DOMINANT and n.node_id not in self._e2_seen:
                    self._e2_seen.add(n.node_id)
                    self._alert(AlertKind.ERROR2, t, n.node_id)
        if self._e1_pending:
            if owner.cantx == DOMINANT:
                self._e1_pending = False
            elif t - self._arb >= ERROR1_WINDOW:
                self._e1_pending = False
                a = self._alert(AlertKind.ERROR1, t, owner.node_id)
                self.prevent(a)

    def _check_ifs(self, t: int, owner: Optional[Node]):
        # first intermission bit: the legacy overload slot
        for n in self.taps:
            if n is not owner and n.cantx == DOMINANT:
                self._alert(AlertKind.ERROR2, t, n.node_id, self.decoder.last_sof)

    # -- reporting
    def report(self) -> dict:
        us = self.bus.us_per_bit if self.bus is not None else 2.0
        counts = {k.value: 0 for k in AlertKind}
        for a in self.alerts:
            counts[a.kind.value] += 1
        esc = []
        for e in self.escalations:
            dur = None if e.end is None else e.end - e.start + 1
            esc.append({
                "start": e.start, "end": e.end, "frame_id": e.frame_id, "cycles": e.cycles,
                "duration_bits": dur, "duration_us": None if dur is None else round(dur * us, 3),
            })
        return {
            "alerts": counts,
            "alert_total": len(self.alerts),
            "prevented": len(self.prevented),
            "escalations": esc,
            "bit_offsets": sorted(a.bit_offset for a in self.alerts),
        }

    def report_json(self) -> str:
        return json.dumps(self.report(), sort_keys=True, indent=2)
