"""Bit-exact JMAC frame codec.

Fields are packed most-significant bit first and the frame is padded with
zero bits to a whole byte. Layouts (bits):

    common    type:3 source:8
    schedule  hops-1:2 period:64 offset:64          (sensors only)
    BEACON    common [schedule child_addr:8 ...]
    UP_DATA   common schedule has_data:1 sequence:10 my_data:8M
              (child_addr:8 child_seq:10 child_data:8M) ...
    ACK       common sequence_to_ack:10 [schedule]

The gateway is address 0 and never carries the schedule block.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

MAX_FRAME_BYTES = 255
TYPE_BITS = 3
ADDR_BITS = 8
HOPS_BITS = 2
TIME_BITS = 64
SEQ_BITS = 10
FLAG_BITS = 1
SEQ_MOD = 1 << SEQ_BITS
MAX_HOPS = 1 << HOPS_BITS
GATEWAY = 0

COMMON_BITS = TYPE_BITS + ADDR_BITS
SCHEDULE_BITS = HOPS_BITS + 2 * TIME_BITS


class FrameError(ValueError):
    pass


class TruncatedFrame(FrameError):
    pass


class UnknownFrameType(FrameError):
    pass


class FrameType(enum.IntEnum):
    BEACON = 0b000
    UP_DATA = 0b001
    ACK = 0b010


def next_sequence(seq: int) -> int:
    return (seq + 1) % SEQ_MOD


def c_max(m: int) -> int:
    """Most child payloads of ``m`` bytes that fit one UP_DATA frame."""
    if m < 1:
        raise FrameError(f"M must be at least 1 byte, got {m}")
    numerator = MAX_FRAME_BYTES * 8 - TYPE_BITS - ADDR_BITS - HOPS_BITS - 2 * TIME_BITS - SEQ_BITS - 8 * m
    if numerator < 0:
        raise FrameError(f"M={m} leaves no room in a {MAX_FRAME_BYTES}-byte frame")
    return numerator // (ADDR_BITS + SEQ_BITS + 8 * m)


@dataclass(frozen=True, slots=True)
class ScheduleInfo:
    hops: int  # hopsToGateway, 1..4
    period: int  # ns
    offset: int  # ns until the sender's next receive window

    def problems(self) -> list[str]:
        out = []
        if not 1 <= self.hops <= MAX_HOPS:
            out.append(f"hops must be in [1, {MAX_HOPS}], got {self.hops}")
        if not 0 < self.period < (1 << TIME_BITS):
            out.append(f"period out of range: {self.period}")
        if not 0 <= self.offset < self.period:
            out.append(f"offset must be in [0, period), got {self.offset}")
        return out


@dataclass(frozen=True, slots=True)
class ChildRecord:
    address: int
    sequence: int
    data: bytes


@dataclass(frozen=True, slots=True)
class Beacon:
    source: int
    schedule: ScheduleInfo | None = None
    children: tuple[int, ...] = ()

    type = FrameType.BEACON


@dataclass(frozen=True, slots=True)
class UpData:
    source: int
    schedule: ScheduleInfo
    sequence: int
    m: int
    my_data: bytes | None = None
    children: tuple[ChildRecord, ...] = ()

    type = FrameType.UP_DATA


@dataclass(frozen=True, slots=True)
class Ack:
    source: int
    sequence_to_ack: int
    schedule: ScheduleInfo | None = None

    type = FrameType.ACK


Frame = Beacon | UpData | Ack


def content_bits(frame: Frame) -> int:
    if isinstance(frame, UpData):
        per_child = ADDR_BITS + SEQ_BITS + 8 * frame.m
        return (COMMON_BITS + SCHEDULE_BITS + FLAG_BITS + SEQ_BITS + 8 * frame.m
                + len(frame.children) * per_child)
    if isinstance(frame, Ack):
        return COMMON_BITS + SEQ_BITS + (SCHEDULE_BITS if frame.schedule is not None else 0)
    if isinstance(frame, Beacon):
        if frame.schedule is None:
            return COMMON_BITS
        return COMMON_BITS + SCHEDULE_BITS + ADDR_BITS * len(frame.children)
    raise FrameError(f"not a frame: {frame!r}")


def frame_length_bytes(frame: Frame) -> int:
    return (content_bits(frame) + 7) // 8


def updata_length_bytes(m: int, children: int) -> int:
    bits = COMMON_BITS + SCHEDULE_BITS + FLAG_BITS + SEQ_BITS + 8 * m + children * (ADDR_BITS + SEQ_BITS + 8 * m)
    return (bits + 7) // 8


def validate(frame: Frame) -> list[str]:
    """Return every invariant the frame violates (empty when valid)."""
    out = []
    if not 0 <= frame.source <= 255:
        out.append(f"source must fit 8 bits, got {frame.source}")
    sched = frame.schedule
    is_gateway = frame.source == GATEWAY
    if isinstance(frame, UpData):
        if is_gateway:
            out.append("the gateway does not send UP_DATA")
        if sched is None:
            out.append("UP_DATA needs schedule info")
        if not 0 <= frame.sequence < SEQ_MOD:
            out.append(f"sequence must fit {SEQ_BITS} bits, got {frame.sequence}")
        if frame.m < 1:
            out.append(f"M must be >= 1, got {frame.m}")
        else:
            try:
                cap = c_max(frame.m)
            except FrameError as exc:
                out.append(str(exc))
                cap = 0
            if len(frame.children) > cap:
                out.append(f"{len(frame.children)} children exceed c_max({frame.m})={cap}")
        if frame.my_data is not None and len(frame.my_data) != frame.m:
            out.append(f"my_data is {len(frame.my_data)} bytes, expected M={frame.m}")
        for child in frame.children:
            if not 0 <= child.address <= 255:
                out.append(f"child address out of range: {child.address}")
            if not 0 <= child.sequence < SEQ_MOD:
                out.append(f"child sequence out of range: {child.sequence}")
            if len(child.data) != frame.m:
                out.append(f"child {child.address} data is {len(child.data)} bytes, expected {frame.m}")
    elif isinstance(frame, Ack):
        if not 0 <= frame.sequence_to_ack < SEQ_MOD:
            out.append(f"sequence_to_ack must fit {SEQ_BITS} bits, got {frame.sequence_to_ack}")
        if is_gateway and sched is not None:
            out.append("gateway ACK carries no schedule")
        if not is_gateway and sched is None:
            out.append("sensor ACK needs schedule info")
    elif isinstance(frame, Beacon):
        if is_gateway and (sched is not None or frame.children):
            out.append("gateway BEACON carries only the common part")
        if not is_gateway and sched is None:
            out.append("sensor BEACON needs schedule info")
        for addr in frame.children:
            if not 0 < addr <= 255:
                out.append(f"child address out of range: {addr}")
    else:
        return [f"not a frame: {frame!r}"]
    if sched is not None:
        out.extend(sched.problems())
    if not out and frame_length_bytes(frame) > MAX_FRAME_BYTES:
        out.append(f"frame is {frame_length_bytes(frame)} bytes, limit {MAX_FRAME_BYTES}")
    return out


class _Writer:
    __slots__ = ("value", "bits")

    def __init__(self):
        self.value = 0
        self.bits = 0

    def put(self, x: int, width: int) -> None:
        self.value = (self.value << width) | x
        self.bits += width

    def put_bytes(self, data: bytes) -> None:
        self.put(int.from_bytes(data, "big"), 8 * len(data))

    def getvalue(self) -> bytes:
        pad = -self.bits % 8
        return (self.value << pad).to_bytes((self.bits + pad) // 8, "big")


class _Reader:
    __slots__ = ("value", "total", "pos")

    def __init__(self, data: bytes):
        self.value = int.from_bytes(data, "big")
        self.total = 8 * len(data)
        self.pos = 0

    @property
    def remaining(self) -> int:
        return self.total - self.pos

    def take(self, width: int, what: str) -> int:
        if width > self.remaining:
            raise TruncatedFrame(f"frame ends inside {what}")
        self.pos += width
        return (self.value >> (self.total - self.pos)) & ((1 << width) - 1)

    def take_bytes(self, n: int, what: str) -> bytes:
        return self.take(8 * n, what).to_bytes(n, "big")

    def expect_padding(self) -> None:
        if self.remaining >= 8:
            raise FrameError(f"{self.remaining} unexpected trailing bits")
        if self.take(self.remaining, "padding") != 0:
            raise FrameError("non-zero padding bits")


def _put_schedule(w: _Writer, s: ScheduleInfo) -> None:
    w.put(s.hops - 1, HOPS_BITS)
    w.put(s.period, TIME_BITS)
    w.put(s.offset, TIME_BITS)


def _take_schedule(r: _Reader) -> ScheduleInfo:
    hops = r.take(HOPS_BITS, "hops") + 1
    period = r.take(TIME_BITS, "period")
    offset = r.take(TIME_BITS, "offset")
    return ScheduleInfo(hops, period, offset)


def encode(frame: Frame) -> bytes:
    problems = validate(frame)
    if problems:
        raise FrameError("; ".join(problems))
    w = _Writer()
    w.put(int(frame.type), TYPE_BITS)
    w.put(frame.source, ADDR_BITS)
    if isinstance(frame, Beacon):
        if frame.schedule is not None:
            _put_schedule(w, frame.schedule)
            for addr in frame.children:
                w.put(addr, ADDR_BITS)
    elif isinstance(frame, UpData):
        _put_schedule(w, frame.schedule)
        w.put(0 if frame.my_data is None else 1, FLAG_BITS)
        w.put(frame.sequence, SEQ_BITS)
        w.put_bytes(frame.my_data if frame.my_data is not None else bytes(frame.m))
        for child in frame.children:
            w.put(child.address, ADDR_BITS)
            w.put(child.sequence, SEQ_BITS)
            w.put_bytes(child.data)
    else:
        w.put(frame.sequence_to_ack, SEQ_BITS)
        if frame.schedule is not None:
            _put_schedule(w, frame.schedule)
    return w.getvalue()


def decode(data: bytes, *, m: int) -> Frame:
    """Inverse of :func:`encode`. ``m`` is the network-wide payload size."""
    if len(data) < 2:
        raise TruncatedFrame(f"frame of {len(data)} bytes is shorter than the common header")
    if len(data) > MAX_FRAME_BYTES:
        raise FrameError(f"frame of {len(data)} bytes exceeds {MAX_FRAME_BYTES}")
    r = _Reader(data)
    code = r.take(TYPE_BITS, "type")
    try:
        ftype = FrameType(code)
    except ValueError:
        raise UnknownFrameType(f"unknown frame type 0b{code:03b}") from None
    source = r.take(ADDR_BITS, "source")
    cap = c_max(m)

    if ftype is FrameType.BEACON:
        if source == GATEWAY:
            r.expect_padding()
            return Beacon(source)
        schedule = _take_schedule(r)
        count = r.remaining // ADDR_BITS
        if count > cap:
            raise FrameError(f"beacon lists {count} children, c_max({m})={cap}")
        children = tuple(r.take(ADDR_BITS, "child address") for _ in range(count))
        r.expect_padding()
        return Beacon(source, schedule, children)

    if ftype is FrameType.ACK:
        seq = r.take(SEQ_BITS, "sequence_to_ack")
        schedule = None if source == GATEWAY else _take_schedule(r)
        r.expect_padding()
        return Ack(source, seq, schedule)

    schedule = _take_schedule(r)
    has_data = r.take(FLAG_BITS, "data flag")
    seq = r.take(SEQ_BITS, "sequence")
    my_data = r.take_bytes(m, "my_data")
    if not has_data:
        if any(my_data):
            raise FrameError("my_data flagged empty but not zero-filled")
        my_data = None
    per_child = ADDR_BITS + SEQ_BITS + 8 * m
    count, leftover = divmod(r.remaining, per_child)
    if leftover >= 8:
        raise TruncatedFrame(f"frame ends inside child record {count + 1}")
    if count > cap:
        raise FrameError(f"{count} children exceed c_max({m})={cap}")
    children = []
    for _ in range(count):
        addr = r.take(ADDR_BITS, "child address")
        cseq = r.take(SEQ_BITS, "child sequence")
        children.append(ChildRecord(addr, cseq, r.take_bytes(m, "child data")))
    r.expect_padding()
    return UpData(source, schedule, seq, m, my_data, tuple(children))


def describe(frame: Frame) -> str:
    """One-line human summary, e.g. ``BEACON src=0``."""
    parts = [frame.type.name, f"src={frame.source}"]
    if isinstance(frame, Ack):
        parts.append(f"ack_seq={frame.sequence_to_ack}")
    if isinstance(frame, UpData):
        parts.append(f"seq={frame.sequence}")
        parts.append(f"m={frame.m}")
        parts.append("my_data=" + (frame.my_data.hex() if frame.my_data is not None else "-"))
    if frame.schedule is not None:
        s = frame.schedule
        parts.append(f"hops={s.hops} period_ns={s.period} offset_ns={s.offset}")
    if isinstance(frame, Beacon) and frame.children:
        parts.append("children=" + ",".join(map(str, frame.children)))
    if isinstance(frame, UpData):
        for c in frame.children:
            parts.append(f"child[{c.address}:{c.sequence}]={c.data.hex()}")
    return " ".join(parts)
