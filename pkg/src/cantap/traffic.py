"""Background traffic: periodic/bursty specs, payload generators, a seeded
synthetic ID mix, and candump log replay."""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .controller import Controller, PeriodicSource, Source
from .core import ID_BITS, MAX_DLC, FrameSpec

FrameFactory = Callable[[random.Random, int], FrameSpec]


def parse_int(text: str) -> int:
    return int(text.strip(), 0)


@dataclass(frozen=True)
class TrafficSpec:
    id: int
    dlc: int
    period: int
    offset: int = 0

    def __post_init__(self):
        if not 0 <= self.id < 1 << ID_BITS:
            raise ValueError(f"id {self.id:#x} is not 11-bit")
        if not 0 <= self.dlc <= MAX_DLC:
            raise ValueError(f"dlc {self.dlc} out of range")
        if self.period <= 0:
            raise ValueError("period must be positive")

    @classmethod
    def parse(cls, text: str) -> "TrafficSpec":
        parts = text.strip().split(":")
        if len(parts) not in (3, 4):
            raise ValueError(f"traffic entry {text!r}: expected id:dlc:period[:offset]")
        return cls(*(parse_int(p) for p in parts))


@dataclass(frozen=True)
class BurstSpec:
    id: int
    dlc: int
    count: int
    every: int
    offset: int = 0

    def __post_init__(self):
        if not 0 <= self.id < 1 << ID_BITS:
            raise ValueError(f"id {self.id:#x} is not 11-bit")
        if self.count <= 0 or self.every <= 0:
            raise ValueError("burst count and interval must be positive")

    @classmethod
    def parse(cls, text: str) -> "BurstSpec":
        parts = text.strip().split(":")
        if len(parts) not in (4, 5):
            raise ValueError(f"burst entry {text!r}: expected id:dlc:count:every[:offset]")
        return cls(*(parse_int(p) for p in parts))


def split_list(text: str) -> list[str]:
    return [p.strip() for p in re.split(r"[,\s]+", text or "") if p.strip()]


def payload_factory(desc: str, frame_id: int, dlc: int) -> FrameFactory:
    """Build a frame factory from a payload description.

    ``random`` (fresh bytes each frame), ``zeros``, ``hex:<bytes>``, or
    ``sensor:<value>:<jitter>`` (16-bit big-endian reading in the first
    two bytes).
    """
    desc = (desc or "random").strip()
    kind, _, arg = desc.partition(":")
    if kind == "random":
        return lambda rng, t: FrameSpec(frame_id, dlc, bytes(rng.getrandbits(8) for _ in range(dlc)))
    if kind == "zeros":
        frame = FrameSpec(frame_id, dlc, bytes(dlc))
        return lambda rng, t: frame
    if kind == "hex":
        data = bytes.fromhex(arg)
        frame = FrameSpec(frame_id, len(data), data)
        return lambda rng, t: frame
    if kind == "sensor":
        value, _, jitter = arg.partition(":")
        return sensor_payload(frame_id, parse_int(value), parse_int(jitter or "0"), max(dlc, 2))
    raise ValueError(f"unknown payload kind {desc!r}")


def sensor_payload(frame_id: int, value: int, jitter: int = 0, dlc: int = 2) -> FrameFactory:
    def make(rng, t):
        v = value + (rng.randint(-jitter, jitter) if jitter else 0)
        return FrameSpec(frame_id, dlc, encode_reading(v) + bytes(dlc - 2))
    return make


def encode_reading(value: int) -> bytes:
    return max(0, min(value, 0xFFFF)).to_bytes(2, "big")


def decode_reading(payload: bytes) -> int:
    return int.from_bytes(payload[:2], "big")


class BurstSource(Source):
    def __init__(self, factory: FrameFactory, count: int, every: int, start: int, tag=None):
        self.factory = factory
        self.count = count
        self.every = every
        self.tag = tag
        self.next_tick = start

    def fire(self, t, rng):
        self.next_tick += self.every
        return [(self.factory(rng, t), self.tag) for _ in range(self.count)]


def install_periodic(ctrl: Controller, spec: TrafficSpec, payload: str = "random"):
    ctrl.add_source(PeriodicSource(payload_factory(payload, spec.id, spec.dlc), spec.period, spec.offset))


def install_burst(ctrl: Controller, spec: BurstSpec, payload: str = "random"):
    ctrl.add_source(BurstSource(payload_factory(payload, spec.id, spec.dlc), spec.count, spec.every, spec.offset))


# -- synthetic mix --------------------------------------------------------------

# periods in bit-times at 500 kbit/s: 10 ms .. 200 ms
SYNTHETIC_PERIODS = (5_000, 10_000, 20_000, 50_000, 100_000)
SYNTHETIC_DLC_WEIGHTS = {8: 90, 7: 2, 6: 2, 5: 1, 4: 2, 3: 1, 2: 1, 1: 1}


def synthetic_mix(n_ids: int, seed: int, id_range: tuple[int, int] = (0x010, 0x6FF),
                  periods: Iterable[int] = SYNTHETIC_PERIODS, exclude: Iterable[int] = ()) -> list[TrafficSpec]:
    """A seeded instrument-cluster-like ID mix: mostly 8-byte frames on
    10..200 ms periods, each with a random phase offset."""
    rng = random.Random(seed)
    periods = tuple(periods)
    banned = set(exclude)
    pool = [i for i in range(id_range[0], id_range[1] + 1) if i not in banned]
    ids = sorted(rng.sample(pool, n_ids))
    dlcs = list(SYNTHETIC_DLC_WEIGHTS)
    weights = [SYNTHETIC_DLC_WEIGHTS[d] for d in dlcs]
    out = []
    for fid in ids:
        period = rng.choice(periods)
        out.append(TrafficSpec(fid, rng.choices(dlcs, weights)[0], period, rng.randrange(period)))
    return out


# -- candump logs --------------------------------------------------------------

CANDUMP_RE = re.compile(r"\((\d+\.\d+)\)\s+(\w+)\s+([0-9A-Fa-f]+)#([0-9A-Fa-f]*)")


@dataclass(frozen=True)
class CandumpEntry:
    timestamp: float
    interface: str
    frame: FrameSpec


def parse_candump(text: str) -> list[CandumpEntry]:
    """Parse ``(ts) iface ID#DATA`` lines; extended or malformed lines are skipped."""
    out = []
    for line in text.splitlines():
        m = CANDUMP_RE.search(line)
        if not m:
            continue
        fid = int(m.group(3), 16)
        data = m.group(4)
        if len(m.group(3)) > 3 or fid >= 1 << ID_BITS or len(data) % 2 or len(data) > 16:
            continue
        out.append(CandumpEntry(float(m.group(1)), m.group(2), FrameSpec.of(fid, bytes.fromhex(data))))
    return out


def load_candump(path) -> list[CandumpEntry]:
    return parse_candump(Path(path).read_text())


def candump_schedule(entries: list[CandumpEntry], bitrate: int, start: int = 0) -> list[tuple[int, FrameSpec]]:
    """Map log timestamps onto bit-times, keeping the original gaps."""
    if not entries:
        return []
    t0 = entries[0].timestamp
    return [(start + round((e.timestamp - t0) * bitrate), e.frame) for e in entries]


class ScheduleSource(Source):
    """Fires a fixed, time-ordered list of frames."""

    def __init__(self, schedule: list[tuple[int, FrameSpec]], tag: Optional[str] = None):
        self.items = sorted(schedule, key=lambda x: x[0])
        self.tag = tag
        self._k = 0
        self.next_tick = self.items[0][0] if self.items else None

    def fire(self, t, rng):
        out = []
        items = self.items
        while self._k < len(items) and items[self._k][0] <= t:
            out.append((items[self._k][1], self.tag))
            self._k += 1
        self.next_tick = items[self._k][0] if self._k < len(items) else None
        return out


def install_schedule(ctrl: Controller, schedule: list[tuple[int, FrameSpec]], tag: Optional[str] = None):
    ctrl.add_source(ScheduleSource(schedule, tag))
