import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cantap import core
from cantap.core import (DOMINANT, RECESSIVE, BitLevel, EventKind, FrameSpec, StuffedBitstream, StuffViolation,
                         compute_crc15, decode_bits, destuff, destuff_bits, max_stuff_bits, serialize, stuff,
                         stuff_bits, wire_bits)


def poly_remainder(bits, generator, width):
    """Textbook GF(2) long division of ``bits`` * x^width by ``generator``."""
    reg = list(bits) + [0] * width
    gen = [(generator >> (width - i)) & 1 for i in range(width + 1)]
    for i in range(len(bits)):
        if reg[i]:
            for j in range(width + 1):
                reg[i + j] ^= gen[j]
    out = 0
    for b in reg[-width:]:
        out = (out << 1) | b
    return out


def ascii_bits(text: bytes):
    return [int(b) for ch in text for b in format(ch, "08b")]


CAN_GENERATOR = (1 << 15) | core.CRC15_POLY

frames = st.integers(0, core.MAX_ID).flatmap(
    lambda fid: st.binary(min_size=0, max_size=8).map(lambda p: FrameSpec.of(fid, p)))


class TestOracle:
    def test_toy_three_bit_division(self):
        # x^3 + x + 1 over 11010011101100, worked by hand: remainder 100
        assert poly_remainder([int(c) for c in "11010011101100"], 0b1011, 3) == 0b100

    def test_toy_crc8_check_value(self):
        assert poly_remainder(ascii_bits(b"123456789"), 0x107, 8) == 0xF4

    def test_crc15_check_value(self):
        assert poly_remainder(ascii_bits(b"123456789"), CAN_GENERATOR, 15) == 0x059E


class TestCrc:
    def test_check_value(self):
        assert compute_crc15(ascii_bits(b"123456789")) == 0x059E

    def test_all_zero_header(self):
        bits = serialize(FrameSpec(0, 0)).bits[:core.HEADER_BITS]
        assert poly_remainder(bits, CAN_GENERATOR, 15) == 0
        assert compute_crc15(bits) == 0

    def test_matches_oracle_on_random_frames(self):
        rng = random.Random(5)
        for _ in range(300):
            f = FrameSpec.of(rng.randrange(2048), rng.randbytes(rng.randrange(9)))
            prefix = serialize(f).bits[:-core.CRC_BITS]
            assert compute_crc15(prefix) == poly_remainder(prefix, CAN_GENERATOR, 15)

    def test_deterministic(self):
        bits = serialize(FrameSpec.of(0x321, b"\x01\x02")).bits
        assert compute_crc15(bits) == compute_crc15(bits)

    def test_single_bit_flips_change_crc(self):
        rng = random.Random(9)
        changed = 0
        for _ in range(1000):
            f = FrameSpec.of(rng.randrange(2048), rng.randbytes(rng.randrange(9)))
            prefix = list(serialize(f).bits[:-core.CRC_BITS])
            flipped = prefix[:]
            flipped[rng.randrange(len(flipped))] ^= 1
            changed += compute_crc15(prefix) != compute_crc15(flipped)
        assert changed >= 990

    def test_linearity(self):
        rng = random.Random(2)
        for _ in range(100):
            n = rng.randrange(1, 90)
            x = [rng.getrandbits(1) for _ in range(n)]
            y = [rng.getrandbits(1) for _ in range(n)]
            xy = [a ^ b for a, b in zip(x, y)]
            assert compute_crc15(x) ^ compute_crc15(y) == compute_crc15(xy)


class TestSerialize:
    def test_zero_header_is_dominant(self):
        assert serialize(FrameSpec(0, 0)).bits[:12] == (DOMINANT,) * 12

    def test_all_ones_id(self):
        assert serialize(FrameSpec(0x7FF, 0)).bits[1:12] == (RECESSIVE,) * 11

    def test_length_full_frame(self):
        raw = serialize(FrameSpec(0x123, 8, bytes(range(8))))
        assert len(raw.bits) == 98
        assert raw.trailer == (RECESSIVE,) * 12
        assert len(raw) == 110

    def test_fixed_control_bits(self):
        bits = serialize(FrameSpec.of(0x7FF, b"\xff")).bits
        assert bits[12:15] == (DOMINANT,) * 3
        assert bits[15:19] == (0, 0, 0, 1)

    def test_field_layout_widths(self):
        layout = {name: (start, width) for name, start, width in core.field_layout(2)}
        assert layout["SOF"] == (0, 1)
        assert layout["DATA"] == (19, 16)
        assert layout["CRC"] == (35, 15)
        assert sum(w for _, _, w in core.field_layout(2)) == 1 + 11 + 3 + 4 + 16 + 15 + 1 + 1 + 7 + 3

    @pytest.mark.parametrize("kwargs", [dict(id=0x800, dlc=0), dict(id=1, dlc=9, payload=bytes(9)),
                                        dict(id=1, dlc=2, payload=b"\x00")])
    def test_rejects_bad_frames(self, kwargs):
        with pytest.raises(ValueError):
            FrameSpec(**kwargs)

    def test_rejects_non_frame(self):
        with pytest.raises(TypeError):
            serialize((1, 2))

    def test_wired_and(self):
        assert BitLevel.wired_and([1, 0, 1]) is BitLevel.DOMINANT
        assert BitLevel.wired_and([1, 1]) is BitLevel.RECESSIVE
        assert BitLevel.wired_and([]) is BitLevel.RECESSIVE


class TestStuffing:
    def test_six_zero_run(self):
        out, pos = stuff_bits([0] * 6)
        assert out == [0, 0, 0, 0, 0, 1, 0]
        assert pos == [5]

    def test_alternating_untouched(self):
        bits = [i % 2 for i in range(40)]
        out, pos = stuff_bits(bits)
        assert out == bits and pos == []

    def test_stuff_bit_opens_next_run(self):
        out, pos = stuff_bits([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
        assert out == [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 1]
        assert pos == [5, 10]
        assert destuff_bits(out) == [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]

    def test_trailer_untouched(self):
        s = stuff(serialize(FrameSpec(0, 0)))
        assert s.trailer == (RECESSIVE,) * 12

    def test_round_trip_example(self):
        raw = serialize(FrameSpec(0x100, 1, b"\xaa"))
        assert destuff(stuff(raw)) == raw

    def test_six_run_rejected(self):
        with pytest.raises(StuffViolation):
            destuff(StuffedBitstream((1, 0, 0, 0, 0, 0, 0, 1)))

    def test_max_stuff_bits_is_tight(self):
        # 00000 1111 0000 1111 ...: every stuff bit joins the run after it
        for n in range(0, 120):
            worst = [0] * 5 + [((k // 4) + 1) % 2 for k in range(max(0, n - 5))]
            assert len(stuff_bits(worst[:n])[1]) == max_stuff_bits(n)

    def test_max_stuff_bits_never_exceeded(self):
        rng = random.Random(4)
        for _ in range(2000):
            n = rng.randrange(1, 100)
            bits = [rng.getrandbits(1) if rng.random() < 0.2 else 0 for _ in range(n)]
            assert len(stuff_bits(bits)[1]) <= max_stuff_bits(n)

    @settings(max_examples=300, deadline=None)
    @given(frames)
    def test_round_trip_and_bounds(self, f):
        raw = serialize(f)
        s = stuff(raw)
        assert destuff(s) == raw
        assert len(s.bits) - len(raw.bits) == len(s.stuff_positions) <= max_stuff_bits(len(raw.bits))
        run = 1
        for a, b in zip(s.bits, s.bits[1:]):
            run = run + 1 if a == b else 1
            assert run <= 5

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.integers(0, 1), max_size=200))
    def test_round_trip_arbitrary_bits(self, bits):
        out, pos = stuff_bits(bits)
        assert destuff_bits(out) == bits
        assert all(out[p] != out[p - 1] for p in pos)


class TestDecoder:
    def test_nominal_decode(self):
        f = FrameSpec.of(0x2A5, b"\x10\x20\x30")
        events = decode_bits(wire_bits(f) + [RECESSIVE] * 3)
        kinds = [e.kind for e in events]
        assert kinds == [EventKind.SOF_DETECTED, EventKind.ARBITRATION_COMPLETE, EventKind.ACK_SLOT,
                         EventKind.FRAME_COMPLETE]
        assert events[1].frame_id == 0x2A5
        assert events[-1].frame == f

    def test_arbitration_at_eleventh_id_bit(self):
        f = FrameSpec(0, 0)
        wire = wire_bits(f)
        events = decode_bits(wire)
        arb = next(e for e in events if e.kind is EventKind.ARBITRATION_COMPLETE)
        # SOF + five zeros, stuff, five zeros, stuff, last zero
        assert arb.bit_time == 13

    def test_idle_is_silent(self):
        assert decode_bits([RECESSIVE] * 100) == []

    def test_payload_flip_is_crc_mismatch(self):
        f = FrameSpec.of(0x155, b"\xff\x55")
        raw = list(serialize(f).bits)
        # recessive payload bit overwritten, CRC left as transmitted
        idx = core.HEADER_BITS + 3
        assert raw[idx] == RECESSIVE
        raw[idx] = DOMINANT
        prefix = raw[:-core.CRC_BITS]
        assert poly_remainder(prefix, CAN_GENERATOR, 15) != compute_crc15(serialize(f).bits[:-core.CRC_BITS])
        wire = stuff_bits(raw)[0] + [RECESSIVE, DOMINANT] + [RECESSIVE] * 7
        kinds = [e.kind for e in decode_bits(wire)]
        assert EventKind.CRC_MISMATCH in kinds
        assert EventKind.FRAME_COMPLETE not in kinds

    def test_dominant_crc_delimiter_is_form_error(self):
        f = FrameSpec.of(0x10, b"\x01")
        wire = wire_bits(f)
        wire[len(stuff(serialize(f)).bits)] = DOMINANT
        assert EventKind.FORM_ERROR in [e.kind for e in decode_bits(wire)]

    def test_six_dominant_is_stuff_error(self):
        events = decode_bits([RECESSIVE, DOMINANT, 1, 0, 1] + [DOMINANT] * 6)
        err = events[-1]
        assert err.kind is EventKind.STUFF_ERROR and err.dominant_run

    def test_dominant_last_eof_is_overload(self):
        f = FrameSpec.of(0x10, b"\x01")
        wire = wire_bits(f)
        wire[-1] = DOMINANT
        kinds = [e.kind for e in decode_bits(wire)]
        assert kinds[-2:] == [EventKind.FRAME_COMPLETE, EventKind.OVERLOAD]

    def test_functional_wrapper(self):
        dec = core.Decoder()
        dec, ev = core.decoder_feed(dec, BitLevel.DOMINANT, 7)
        assert ev.kind is EventKind.SOF_DETECTED and ev.bit_time == 7

    def test_copy_is_independent(self):
        dec = core.Decoder()
        for t, b in enumerate(wire_bits(FrameSpec.of(0x11, b"\x22"))[:30]):
            dec.feed(b, t)
        twin = dec.copy()
        twin.feed(DOMINANT, 30)
        assert (twin.phase, twin.pos) != (dec.phase, dec.pos) or twin._raw != dec._raw

    @settings(max_examples=200, deadline=None)
    @given(frames)
    def test_round_trip_through_decoder(self, f):
        events = decode_bits(wire_bits(f))
        done = [e for e in events if e.kind is EventKind.FRAME_COMPLETE]
        assert len(done) == 1 and done[0].frame == f
