import pytest
from hypothesis import HealthCheck, given, settings

from jmacsim.frames import (
    MAX_FRAME_BYTES,
    SEQ_MOD,
    Ack,
    Beacon,
    ChildRecord,
    FrameError,
    ScheduleInfo,
    TruncatedFrame,
    UnknownFrameType,
    UpData,
    c_max,
    content_bits,
    decode,
    describe,
    encode,
    frame_length_bytes,
    next_sequence,
    updata_length_bytes,
    validate,
)

from oracles import brute_c_max
from strategies import frames

SCHED = ScheduleInfo(hops=2, period=44_032_000_000, offset=1_234_567)


def test_c_max_reference_values():
    assert c_max(10) == 18
    assert c_max(100) == 1
    assert c_max(30) == 6


@pytest.mark.parametrize("m", range(1, 101))
def test_c_max_matches_enumeration(m):
    assert c_max(m) == brute_c_max(m)


def test_c_max_rejects_nonsense():
    with pytest.raises(FrameError):
        c_max(0)
    with pytest.raises(FrameError):
        c_max(240)


def test_wire_sizes():
    gw_beacon = Beacon(0)
    assert content_bits(gw_beacon) == 11
    assert encode(gw_beacon) == bytes(2)
    assert frame_length_bytes(gw_beacon) == 2
    assert content_bits(Ack(0, 5)) == 21
    assert frame_length_bytes(Ack(0, 5)) == 3
    assert content_bits(Ack(4, 5, SCHED)) == 151
    assert frame_length_bytes(Ack(4, 5, SCHED)) == 19
    full = UpData(3, SCHED, 9, 30, bytes(30), tuple(ChildRecord(i, i, bytes(30)) for i in range(1, 7)))
    # one presence bit on top of the 151 + 240 + 6 * 258 bits of the field inventory
    assert content_bits(full) == 1940
    assert frame_length_bytes(full) == 243
    assert len(encode(full)) == 243
    assert updata_length_bytes(30, 6) == 243


@pytest.mark.parametrize("m", range(1, 101))
def test_full_updata_fits_lora_payload(m):
    cap = c_max(m)
    frame = UpData(1, SCHED, 0, m, bytes(m), tuple(ChildRecord(2, 3, bytes([m % 256]) * m) for _ in range(cap)))
    assert validate(frame) == []
    assert len(encode(frame)) <= MAX_FRAME_BYTES


def test_sequence_ring():
    assert next_sequence(1023) == 0
    assert next_sequence(5) == 6
    assert SEQ_MOD == 1024


def test_layout_is_msb_first():
    # type ACK=2 (010), source 0 (00000000), seq 1023 (1111111111), 3 pad bits
    assert encode(Ack(0, 1023)) == bytes([0b01000000, 0b00011111, 0b11111000])


def test_unknown_type_rejected():
    data = bytearray(encode(Beacon(0)))
    data[0] |= 0b11100000
    with pytest.raises(UnknownFrameType):
        decode(bytes(data), m=30)


def test_truncated_updata_rejected():
    frame = UpData(3, SCHED, 9, 30, bytes(30), (ChildRecord(1, 1, bytes(30)), ChildRecord(2, 2, bytes(30))))
    wire = encode(frame)
    with pytest.raises(TruncatedFrame):
        decode(wire[:-10], m=30)
    with pytest.raises(TruncatedFrame):
        decode(wire[:1], m=30)


def test_nonzero_padding_rejected():
    wire = bytearray(encode(Beacon(0)))
    wire[-1] |= 1
    with pytest.raises(FrameError):
        decode(bytes(wire), m=30)


def test_validation_catches_inconsistent_frames():
    assert validate(Beacon(0, SCHED))
    assert validate(Ack(3, 1))
    assert validate(Ack(0, 1, SCHED))
    assert validate(UpData(0, SCHED, 1, 30, bytes(30)))
    assert validate(UpData(1, SCHED, SEQ_MOD, 30, bytes(30)))
    assert validate(UpData(1, SCHED, 1, 30, bytes(29)))
    too_many = tuple(ChildRecord(2, 0, bytes(30)) for _ in range(7))
    assert validate(UpData(1, SCHED, 1, 30, bytes(30), too_many))
    assert validate(Beacon(2, ScheduleInfo(5, 10, 0)))
    assert validate(Beacon(2, ScheduleInfo(1, 10, 10)))
    with pytest.raises(FrameError):
        encode(Ack(3, 1))


def test_describe_gateway_beacon():
    assert describe(decode(encode(Beacon(0)), m=30)).startswith("BEACON src=0")


# -- property: roundtrip over generated frames ---------------------------------------

@settings(max_examples=1_000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(frames)
def test_roundtrip_identity(frame):
    assert validate(frame) == []
    wire = encode(frame)
    assert len(wire) == frame_length_bytes(frame) <= MAX_FRAME_BYTES
    m = frame.m if isinstance(frame, UpData) else 30
    assert decode(wire, m=m) == frame
