import random

import pytest

from cantap.bus import Bus, Outcome
from cantap.controller import Controller, Dashboard
from cantap.core import FrameSpec
from cantap.traffic import (SYNTHETIC_PERIODS, BurstSpec, TrafficSpec, candump_schedule, decode_reading,
                            encode_reading, install_burst, install_periodic, install_schedule, parse_candump,
                            payload_factory, split_list, synthetic_mix)

CANDUMP = """\
(1600000000.000000) can0 0C8#0019
(1600000000.010000) can0 1F0#DEADBEEF
(1600000000.020000) can0 12345678#00
garbage line
(1600000000.030000) can0 0A0#
"""


def test_traffic_spec_parse():
    assert TrafficSpec.parse("0x0C8:8:50000") == TrafficSpec(0xC8, 8, 50000, 0)
    assert TrafficSpec.parse("200:2:1000:7") == TrafficSpec(200, 2, 1000, 7)
    for bad in ("0x800:1:10", "1:9:10", "1:1:0", "1:1"):
        with pytest.raises(ValueError):
            TrafficSpec.parse(bad)


def test_burst_spec_parse():
    assert BurstSpec.parse("0x7A0:8:3:40000:1000") == BurstSpec(0x7A0, 8, 3, 40000, 1000)
    with pytest.raises(ValueError):
        BurstSpec.parse("0x7A0:8:0:40000")


def test_split_list():
    assert split_list("a, b  c,,d") == ["a", "b", "c", "d"]
    assert split_list("") == []


def test_payload_factories():
    rng = random.Random(1)
    assert payload_factory("zeros", 0x10, 3)(rng, 0) == FrameSpec(0x10, 3, bytes(3))
    assert payload_factory("hex:0102", 0x10, 8)(rng, 0) == FrameSpec.of(0x10, b"\x01\x02")
    assert len(payload_factory("random", 0x10, 5)(rng, 0).payload) == 5
    values = {decode_reading(payload_factory("sensor:25:1", 0xC8, 2)(rng, 0).payload) for _ in range(200)}
    assert values == {24, 25, 26}
    with pytest.raises(ValueError):
        payload_factory("noise", 1, 1)


def test_reading_codec():
    assert encode_reading(250) == b"\x00\xfa"
    assert decode_reading(b"\x00\xfa\x00") == 250
    assert encode_reading(-4) == b"\x00\x00"


def test_synthetic_mix_is_seeded():
    a = synthetic_mix(20, 7)
    assert a == synthetic_mix(20, 7)
    assert a != synthetic_mix(20, 8)
    assert len({s.id for s in a}) == 20
    assert all(s.period in SYNTHETIC_PERIODS and 0 <= s.offset < s.period for s in a)
    taken = {s.id for s in a}
    assert not taken & {s.id for s in synthetic_mix(20, 9, exclude=taken)}


def test_synthetic_mix_mostly_full_frames():
    dlcs = [s.dlc for s in synthetic_mix(400, 3)]
    assert dlcs.count(8) / len(dlcs) > 0.8


def test_parse_candump_skips_extended_and_junk():
    entries = parse_candump(CANDUMP)
    assert [str(e.frame) for e in entries] == ["0C8#0019", "1F0#DEADBEEF", "0A0#"]
    assert entries[0].interface == "can0"


def test_candump_schedule_keeps_gaps():
    sched = candump_schedule(parse_candump(CANDUMP), 500_000, start=100)
    assert [t for t, _ in sched] == [100, 5100, 15100]
    assert candump_schedule([], 500_000) == []


def test_sources_on_bus():
    bus = Bus()
    c = Controller("c", seed=4)
    bus.attach(c)
    bus.attach(Dashboard())
    install_periodic(c, TrafficSpec(0x100, 2, 10_000, 500))
    install_burst(c, BurstSpec(0x200, 1, 3, 25_000, 1000))
    install_schedule(c, candump_schedule(parse_candump(CANDUMP), 500_000, start=2000))
    trace = bus.run(30_000)
    assert all(r.outcome is Outcome.DELIVERED for r in trace)
    ids = [r.frame.id for r in trace]
    assert ids.count(0x100) == 3
    assert ids.count(0x200) == 6
    assert ids.count(0x0C8) == ids.count(0x1F0) == ids.count(0x0A0) == 1
