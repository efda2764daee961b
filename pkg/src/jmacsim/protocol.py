"""JMAC cross-layer protocol: scheduling math and the gateway/sensor state machines.

Both machines are driven by ``step(now, event)`` and answer with a list of
actions; they never touch the radio, the clock or the event queue directly.
The simulator in :mod:`jmacsim.network` interprets the actions.
"""

from __future__ import annotations

import copy
import enum
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .des import MIN, S, RngStream
from .frames import (
    GATEWAY,
    MAX_HOPS,
    SEQ_MOD,
    Ack,
    Beacon,
    ChildRecord,
    ScheduleInfo,
    UpData,
    c_max,
    frame_length_bytes,
    next_sequence,
    updata_length_bytes,
)
from .phy import RadioParams, RadioState, propagation_delay, time_on_air

COVERAGE_LIMIT = 15_000.0  # m, worst-case link used to size reception timeouts


class ProtocolError(ValueError):
    pass


# -- scheduling math ---------------------------------------------------------


def waking_time(last_seen: int, offset: int, toa: int, period: int, now: int) -> int:
    """Predicted start of a neighbour's next receive window at or after ``now``."""
    if period <= 0:
        raise ProtocolError(f"period must be positive, got {period}")
    base = last_seen + offset - toa
    if base >= now:
        return base
    n = -(-(now - base) // period)
    return base + n * period


def _fraction(x: float | Fraction) -> Fraction:
    return Fraction(x).limit_denominator(10**9) if not isinstance(x, Fraction) else x


def compute_period(parents: int, c: int, toa_updata_max: int, toa_ack_max: int,
                   duty_cycle: float | Fraction = 0.01) -> int:
    """Time period T in ns: one ACK plus p/C UP_DATA frames stretched by the duty cycle."""
    if parents < 1:
        raise ProtocolError(f"parent count must be >= 1, got {parents}")
    if c < 1:
        raise ProtocolError(f"C must be >= 1, got {c}")
    dc = _fraction(duty_cycle)
    if not 0 < dc <= 1:
        raise ProtocolError(f"duty cycle must be in (0, 1], got {duty_cycle}")
    busy = Fraction(toa_ack_max) + Fraction(parents * toa_updata_max, c)
    return round(busy / dc)


def timeout_updata(toa_updata_max: int, prop_delay: int) -> int:
    if toa_updata_max <= 0 or prop_delay < 0:
        raise ProtocolError("timeout needs a positive airtime and a non-negative delay")
    return toa_updata_max + prop_delay


def timeout_ack(toa_ack_max: int, prop_delay: int) -> int:
    if toa_ack_max <= 0 or prop_delay < 0:
        raise ProtocolError("timeout needs a positive airtime and a non-negative delay")
    return toa_ack_max + prop_delay


def gate_transmission(rng: RngStream, c: int) -> bool:
    """Bernoulli(1/C) permission to use a candidate window."""
    if c < 1:
        raise ProtocolError(f"C must be >= 1, got {c}")
    if c == 1:
        return True
    return rng.random() * c < 1.0


class _Lookahead:
    """Gate draws taken from ``rng`` through a buffer, so a speculative run can be undone."""

    __slots__ = ("rng", "buf", "pos", "mark")

    def __init__(self, rng: RngStream):
        self.rng = rng
        self.buf: list[float] = []
        self.pos = 0
        self.mark: int | None = None

    def random(self) -> float:
        pos = self.pos
        if pos == len(self.buf):
            if pos and self.mark is None:
                self.buf.clear()
                pos = 0
            self.buf.append(self.rng.random())
        self.pos = pos + 1
        return self.buf[pos]

    def begin(self) -> None:
        self.mark = self.pos

    def commit(self) -> None:
        self.mark = None

    def rollback(self) -> None:
        self.pos = self.mark
        self.mark = None


@dataclass
class ProtocolConfig:
    m: int = 30
    c: int = 1
    duty_cycle: float = 0.01
    app_period: int = 15 * MIN
    init_window: int = 5 * MIN
    beacon_gap: tuple[int, int] = (15 * S, 25 * S)
    retry_limit: int | None = None
    radio: RadioParams = field(default_factory=RadioParams)
    # airtime overrides (ns); None means "derive from the radio profile"
    toa_updata_override: int | None = None
    toa_ack_override: int | None = None

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ProtocolError("; ".join(problems))
        self.c_max = c_max(self.m)
        self._periods: dict[int, int] = {}
        self._airtimes: dict[int, int] = {}
        self.dc = _fraction(self.duty_cycle)
        self.updata_max_bytes = updata_length_bytes(self.m, self.c_max)
        self.ack_max_bytes = frame_length_bytes(Ack(1, 0, ScheduleInfo(1, 1, 0)))
        self.toa_updata_max = self.toa_updata_override or time_on_air(self.radio, self.updata_max_bytes)
        self.toa_ack_max = self.toa_ack_override or time_on_air(self.radio, self.ack_max_bytes)
        prop = propagation_delay(COVERAGE_LIMIT)
        self.timeout_updata = timeout_updata(self.toa_updata_max, prop)
        self.timeout_ack = timeout_ack(self.toa_ack_max, prop)
        # an ACK answering our frame starts one round trip after our TX ends
        self.ack_slack = 2 * prop

    def problems(self) -> list[str]:
        out = []
        if self.m < 1:
            out.append(f"M must be >= 1, got {self.m}")
        else:
            try:
                c_max(self.m)
            except ValueError as exc:
                out.append(str(exc))
        if self.c < 1:
            out.append(f"C must be >= 1, got {self.c}")
        if not 0 < self.duty_cycle <= 1:
            out.append(f"duty_cycle must be in (0, 1], got {self.duty_cycle}")
        if not 0 < self.app_period <= 15 * MIN:
            out.append("app_period must be in (0, 15 min]")
        if self.init_window <= 0:
            out.append("init_window must be positive")
        lo, hi = self.beacon_gap
        if not 0 < lo < hi:
            out.append(f"beacon_gap must satisfy 0 < lo < hi, got {self.beacon_gap}")
        if self.retry_limit is not None and self.retry_limit < 0:
            out.append("retry_limit must be >= 0")
        return out

    def period(self, parents: int) -> int:
        parents = max(parents, 1)
        cached = self._periods.get(parents)
        if cached is None:
            cached = self._periods[parents] = compute_period(
                parents, self.c, self.toa_updata_max, self.toa_ack_max, self.dc)
        return cached

    def airtime(self, frame) -> int:
        size = frame_length_bytes(frame)
        cached = self._airtimes.get(size)
        if cached is None:
            cached = self._airtimes[size] = time_on_air(self.radio, size)
        return cached


# -- neighbour knowledge ------------------------------------------------------


@dataclass(slots=True)
class NeighbourEntry:
    address: int
    hops: int
    period: int = 0
    offset: int = 0
    last_seen: int = 0
    toa: int = 0  # airtime of the frame that carried the schedule
    children: set = field(default_factory=set)
    is_gateway: bool = False

    def wake_at(self, now: int) -> int:
        if self.is_gateway:
            return now
        return waking_time(self.last_seen, self.offset, self.toa, self.period, now)


def parent_windows(neighbours: dict[int, NeighbourEntry], own_hops: int, now: int) -> list[tuple[int, int]]:
    """``(wake, address)`` of every known parent, earliest first (ties: lower address)."""
    out = []
    for e in neighbours.values():
        if e.hops < own_hops and (e.is_gateway or e.period > 0):
            out.append((e.wake_at(now), e.address))
    out.sort()
    return out


def select_next_hop(neighbours: dict[int, NeighbourEntry], own_hops: int, now: int) -> tuple[int, int] | None:
    """Parent that wakes earliest, as ``(address, wake)``; None when isolated."""
    windows = parent_windows(neighbours, own_hops, now)
    if not windows:
        return None
    wake, addr = windows[0]
    return addr, wake


# -- packets and queues -------------------------------------------------------


@dataclass(slots=True)
class PendingPacket:
    origin: int
    sequence: int
    payload: bytes
    created_at: int  # when it entered this node's queue
    attempts: int = 0

    @property
    def key(self) -> tuple[int, int]:
        return (self.origin, self.sequence)


def build_updata(local_queue: Iterable[PendingPacket], child_queue: Iterable[PendingPacket], m: int,
                 cap: int, schedule: ScheduleInfo, source: int,
                 fallback_sequence: int = 0) -> tuple[UpData, list[PendingPacket]]:
    """Aggregate the local head and up to ``cap`` oldest child packets into one frame."""
    local = next(iter(local_queue), None)
    children = []
    for pkt in child_queue:
        if len(children) >= cap:
            break
        children.append(pkt)
    if local is None and not children:
        raise ProtocolError("nothing to send: both queues are empty")
    frame = UpData(
        source=source,
        schedule=schedule,
        sequence=local.sequence if local is not None else fallback_sequence,
        m=m,
        my_data=local.payload if local is not None else None,
        children=tuple(ChildRecord(p.origin, p.sequence, p.payload) for p in children),
    )
    included = ([local] if local is not None else []) + children
    return frame, included


def fake_payload(address: int, sequence: int, m: int) -> bytes:
    pattern = bytes([address & 0xFF, sequence >> 8, sequence & 0xFF])
    return (pattern * (m // 3 + 1))[:m]


# -- events and actions -------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Timer:
    label: str


@dataclass(slots=True)
class Received:
    frame: object
    airtime: int


@dataclass(frozen=True, slots=True)
class RxClosed:
    pass


@dataclass(frozen=True, slots=True)
class TxDone:
    pass


@dataclass(slots=True)
class StartTx:
    frame: object
    at: int
    airtime: int


@dataclass(slots=True)
class StartRx:
    until: int | None  # None: listen until another radio action


@dataclass(slots=True)
class SetRadio:
    state: RadioState


@dataclass(slots=True)
class SetTimer:
    label: str
    at: int | None  # None cancels


@dataclass(slots=True)
class AppRecord:
    origin: int
    sequence: int
    payload: bytes
    at: int
    via: int


@dataclass(slots=True)
class DeliverToApp:
    record: AppRecord


@dataclass(slots=True)
class Drop:
    reason: str
    packets: tuple = ()


BOOT = Timer("boot")
RX_CLOSED = RxClosed()
TX_DONE = TxDone()


class SensorState(enum.Enum):
    RECEIVE_INIT = "RECEIVE_INIT"
    SEND_BEACON = "SEND_BEACON"
    RECEIVE_ANNOUNCE = "RECEIVE_ANNOUNCE"
    RECEIVE_DATA = "RECEIVE_DATA"
    SEND_ACK = "SEND_ACK"
    WAIT_OR_SLEEP = "WAIT_OR_SLEEP"
    WAIT_NEXT_HOP = "WAIT_NEXT_HOP"
    SEND_UP_DATA = "SEND_UP_DATA"
    RECEIVE_ACK = "RECEIVE_ACK"
    SLEEP = "SLEEP"


class GatewayState(enum.Enum):
    INIT = "INIT"
    RECEIVE_UP_DATA = "RECEIVE_UP_DATA"
    SEND_ACK = "SEND_ACK"
    SEND_BEACON = "SEND_BEACON"


# Edges of the sensor machine; WAIT_OR_SLEEP is a decision point passed through in one step.
SENSOR_EDGES = {
    SensorState.RECEIVE_INIT: {SensorState.RECEIVE_ANNOUNCE},
    SensorState.RECEIVE_ANNOUNCE: {SensorState.SEND_BEACON, SensorState.SLEEP},
    SensorState.SEND_BEACON: {SensorState.RECEIVE_ANNOUNCE, SensorState.SLEEP},
    SensorState.SLEEP: {SensorState.RECEIVE_DATA},
    SensorState.RECEIVE_DATA: {SensorState.SEND_ACK, SensorState.WAIT_OR_SLEEP},
    SensorState.SEND_ACK: {SensorState.WAIT_OR_SLEEP},
    SensorState.WAIT_OR_SLEEP: {SensorState.WAIT_NEXT_HOP, SensorState.SLEEP},
    SensorState.WAIT_NEXT_HOP: {SensorState.SEND_UP_DATA, SensorState.SLEEP, SensorState.WAIT_OR_SLEEP},
    SensorState.SEND_UP_DATA: {SensorState.RECEIVE_ACK},
    SensorState.RECEIVE_ACK: {SensorState.WAIT_OR_SLEEP},
}

_S = SensorState


class SensorFsm:
    """Sensor side of the protocol.

    ``trail`` lists every state entered during the last ``step`` so that
    transient decision states stay visible in traces.
    """

    def __init__(self, address: int, config: ProtocolConfig, rng: RngStream):
        if not 1 <= address <= 255:
            raise ProtocolError(f"sensor address must be in [1, 255], got {address}")
        self.address = address
        self.cfg = config
        self.rng = rng
        self.state: SensorState | None = None
        self.trail: list[SensorState] = []
        self.neighbours: dict[int, NeighbourEntry] = {}
        self.children: set[int] = set()
        self.hops: int | None = None
        self._parent_list: list[NeighbourEntry] | None = None
        self._period: int | None = None
        self._plan: tuple | None = None
        self._gates = _Lookahead(rng)
        self.phase = 0.0
        self.announce_end = 0
        self.operational = False
        self._op_pending = False
        self.period = 0
        self.next_wake = 0
        self.window_start = 0
        self.tried: set[int] = set()
        self.target: tuple[int, int] | None = None
        self.inflight: tuple[int, int, list[PendingPacket]] | None = None
        self.local_queue: deque[PendingPacket] = deque()
        self.child_queue: deque[PendingPacket] = deque()
        self._child_keys: set[tuple[int, int]] = set()
        # random starting points keep sibling counters apart; ACKs carry no destination
        self.local_seq = int(rng.random() * SEQ_MOD)
        self.frame_seq = int(rng.random() * SEQ_MOD)
        self._tx_end = 0
        self.ack_target: int | None = None
        self.tx_airtime = 0
        self.generated = 0
        self.last_generated: PendingPacket | None = None
        self.sent = 0
        self.acked = 0
        self.dropped = 0

    # -- helpers -------------------------------------------------------------

    def _enter(self, state: SensorState) -> None:
        self.state = state
        self.trail.append(state)

    def parents(self) -> list[NeighbourEntry]:
        if self._parent_list is None:
            hops = self.hops
            self._parent_list = [] if hops is None else [e for e in self.neighbours.values() if e.hops < hops]
            self._period = None
        return self._parent_list

    def parent_count(self) -> int:
        return len(self.parents())

    def current_period(self) -> int:
        parents = self.parents()
        if self._period is None:
            self._period = self.cfg.period(len(parents))
        return self._period

    def is_dormant(self) -> bool:
        return self.state is _S.SLEEP and self.operational and self.inflight is None

    def _schedule(self, now: int) -> ScheduleInfo:
        if self.operational:
            period, wake = self.period, self.next_wake
        else:
            period = self.current_period()
            wake = self.announce_end + int(self.phase * period)
        return ScheduleInfo(self.hops, period, (wake - now) % period)

    def _dc_allows(self, now: int, airtime: int) -> bool:
        dc = self.cfg.dc
        return (self.tx_airtime + airtime) * dc.denominator <= dc.numerator * (now + airtime)

    def _learn(self, now: int, frame, airtime: int) -> None:
        src = frame.source
        if src == self.address:
            return
        if src == GATEWAY:
            entry = self.neighbours.get(src)
            if entry is None:
                self.neighbours[src] = NeighbourEntry(src, 0, last_seen=now, is_gateway=True)
                self._parent_list = None
            else:
                entry.last_seen = now
            return
        sched = frame.schedule
        if sched is None:
            return
        entry = self.neighbours.get(src)
        if entry is None:
            entry = self.neighbours[src] = NeighbourEntry(src, sched.hops)
            self._parent_list = None
        elif entry.hops != sched.hops:
            entry.hops = sched.hops
            self._parent_list = None
        entry.period = sched.period
        entry.offset = sched.offset
        entry.last_seen = now
        entry.toa = airtime
        if isinstance(frame, Beacon):
            entry.children = set(frame.children)
        if self.hops is not None and sched.hops > self.hops:
            self.children.add(src)

    def _best_hops(self) -> int | None:
        best = None
        for e in self.neighbours.values():
            h = e.hops + 1
            if h <= MAX_HOPS and (best is None or h < best):
                best = h
        return best

    def _beacon_gap(self) -> int:
        lo, hi = self.cfg.beacon_gap
        return self.rng.uniform_ns(lo, hi)

    # -- transitions -------------------------------------------------------------

    def step(self, now: int, event) -> list:
        self.trail = []
        if self._plan is not None:
            self._drop_plan()
        st = self.state
        kind = type(event)
        if kind is Received:
            return self._on_frame(now, event.frame, event.airtime)
        if kind is Timer:
            label = event.label
            if label == "next_hop":
                return self._on_next_hop(now) if st is _S.WAIT_NEXT_HOP else []
            if label == "app":
                return self._generate(now)
            if label == "wake":
                return self._on_wake(now)
            if label == "boot":
                self._enter(_S.RECEIVE_INIT)
                return [StartRx(None)]
            if label == "beacon":
                return self._send_beacon(now) if st is _S.RECEIVE_ANNOUNCE else []
            if label == "announce_end":
                if st is _S.SEND_BEACON:
                    self._op_pending = True
                    return []
                return self._enter_operational(now)
            return []
        if kind is TxDone:
            return self._on_tx_done(now)
        if kind is RxClosed:
            if st is _S.RECEIVE_DATA:
                return self._wait_or_sleep(now)
            if st is _S.RECEIVE_ACK:
                return self._ack_missed(now)
            return []
        raise ProtocolError(f"unknown event {event!r}")

    def _generate(self, now: int) -> list:
        seq = self.local_seq
        self.local_seq = next_sequence(seq)
        pkt = PendingPacket(self.address, seq, fake_payload(self.address, seq, self.cfg.m), now)
        self.local_queue.append(pkt)
        self.generated += 1
        self.last_generated = pkt
        return [SetTimer("app", now + self.cfg.app_period)]

    def _join(self, now: int) -> list:
        self.hops = self._best_hops()
        self._parent_list = None
        self.phase = self.rng.random()
        init = self.cfg.init_window
        self.announce_end = init if now < init else now + init
        self._enter(_S.RECEIVE_ANNOUNCE)
        out = [StartRx(None), SetTimer("announce_end", self.announce_end)]
        nxt = now + self._beacon_gap()
        if nxt < self.announce_end:
            out.append(SetTimer("beacon", nxt))
        return out

    def _send_beacon(self, now: int) -> list:
        kids = tuple(sorted(self.children))[: self.cfg.c_max]
        frame = Beacon(self.address, self._schedule(now), kids)
        airtime = self.cfg.airtime(frame)
        if not self._dc_allows(now, airtime):
            nxt = now + self._beacon_gap()
            return [SetTimer("beacon", nxt)] if nxt < self.announce_end else []
        self.tx_airtime += airtime
        self._enter(_S.SEND_BEACON)
        return [StartTx(frame, now, airtime)]

    def _enter_operational(self, now: int) -> list:
        self._op_pending = False
        self.operational = True
        self.period = self.current_period()
        first = self.announce_end + int(self.phase * self.period)
        if first < now:
            first += -(-(now - first) // self.period) * self.period
        self.next_wake = first
        self._enter(_S.SLEEP)
        return [SetRadio(RadioState.SLEEP), SetTimer("beacon", None), SetTimer("wake", first),
                SetTimer("app", first)]

    def _on_wake(self, now: int) -> list:
        if self.state is not _S.SLEEP:
            # still busy with the previous exchange: this window is lost
            self.next_wake = now + self.period
            return [SetTimer("wake", self.next_wake)]
        self.period = self.current_period()
        self.window_start = now
        self.next_wake = now + self.period
        self.tried.clear()
        self._enter(_S.RECEIVE_DATA)
        return [StartRx(now + self.cfg.timeout_updata), SetTimer("wake", self.next_wake)]

    def fast_forward(self, now: int) -> tuple[int, int | None, list]:
        """Replay the windows of a dormant sensor up to ``now`` in closed form.

        Equivalent to stepping through wake/RxClosed pairs that saw no frame,
        including the transmission gate drawn at each close. Returns
        ``(windows_closed, live_window_start, actions)``: the second item is set
        when ``now`` falls inside a window, which is then left open. A gate that
        opened leaves the sensor in WAIT_NEXT_HOP, with the next-hop timer among
        the actions unless that moment is ``now`` itself.
        """
        if not self.is_dormant():
            raise ProtocolError("fast_forward needs a dormant sensor")
        if self.next_wake > now:
            return 0, None, []
        period = self.period = self.current_period()
        timeout = self.cfg.timeout_updata
        if not (self.local_queue or self.child_queue) or not self._has_parent_window():
            # no gate is drawn, so the windows can be skipped wholesale
            k = (now - self.next_wake) // period
            start = self.next_wake + k * period
            self.tried.clear()
            self.window_start = start
            self.next_wake = start + period
            if now < start + timeout:
                self._enter(_S.RECEIVE_DATA)
                return k, start, []
            return k + 1, None, []
        plan, self._plan = self._plan, None
        if plan is not None:
            close, windows, start, tried, hop = plan
            if now >= close:
                self._gates.commit()
                self.window_start = start
                self.next_wake = start + period
                self.tried = tried
                if hop is None:
                    return windows, None, []
                self.target = hop
                self._enter(_S.WAIT_NEXT_HOP)
                while self.next_wake <= now:
                    # own windows due while waiting for the parent are lost
                    self.next_wake += period
                return windows, None, [SetTimer("next_hop", hop[1])] if now < hop[1] else []
            self._gates.rollback()
        closed = 0
        start = self.next_wake
        while start <= now:
            self.window_start = start
            self.next_wake = start + period
            self.tried.clear()
            close = start + timeout
            if now < close:
                self._enter(_S.RECEIVE_DATA)
                return closed, start, []
            closed += 1
            hop = self._gate(close)
            if hop is not None:
                self._enter(_S.WAIT_NEXT_HOP)
                return closed, None, [SetTimer("next_hop", hop[1])]
            start = self.next_wake
        return closed, None, []

    def resume_at(self, limit: int = 64) -> tuple[int, str] | None:
        """When and why a dormant sensor next needs to run, as ``(time, timer label)``.

        Windows are walked ahead and their gates drawn; when one opens the
        answer is the chosen parent's wake with label ``next_hop``. The draws are
        kept as a plan that ``fast_forward`` commits from the window close
        onwards; any earlier step rolls the stream back first. None when no
        window can ever open. After ``limit`` fruitless windows the close of the
        last one is returned under ``resume`` so the caller can plan again.
        """
        self._drop_plan()
        if not (self.local_queue or self.child_queue) or not self._has_parent_window():
            return None
        self._gates.begin()
        saved = (self.next_wake, self.tried)
        period = self.current_period()
        timeout = self.cfg.timeout_updata
        start = self.next_wake
        hop = None
        for windows in range(1, limit + 1):
            self.next_wake = start + period
            self.tried = set()
            hop = self._gate(start + timeout)
            if hop is not None:
                break
            start += period
        self._plan = (start + timeout, windows, start, self.tried, hop)
        self.next_wake, self.tried = saved
        if hop is None:
            return start + timeout, "resume"
        return hop[1], "next_hop"

    def _drop_plan(self) -> None:
        if self._plan is not None:
            self._gates.rollback()
            self._plan = None

    def _has_parent_window(self) -> bool:
        return any(e.is_gateway or e.period > 0 for e in self.parents())

    def _on_frame(self, now: int, frame, airtime: int) -> list:
        st = self.state
        if st is _S.RECEIVE_INIT:
            self._learn(now, frame, airtime)
            if self._best_hops() is not None:
                return self._join(now)
            return []
        if st is _S.RECEIVE_ANNOUNCE:
            self._learn(now, frame, airtime)
            best = self._best_hops()
            if best is not None and best < self.hops:
                self.hops = best
                self._parent_list = None
            return []
        if st is _S.RECEIVE_DATA:
            self._learn(now, frame, airtime)
            if isinstance(frame, UpData) and frame.schedule.hops > self.hops:
                return self._accept_updata(now, frame)
            return self._wait_or_sleep(now)
        if st is _S.RECEIVE_ACK:
            self._learn(now, frame, airtime)
            target, seq, included = self.inflight
            if (isinstance(frame, Ack) and frame.source == target and frame.sequence_to_ack == seq
                    and now - airtime - self._tx_end <= self.cfg.ack_slack):
                self._remove(included)
                self.acked += 1
                self.inflight = None
                return self._wait_or_sleep(now)
            return []
        # radio is not supposed to be on in other states; still keep what we heard
        self._learn(now, frame, airtime)
        return []

    def _accept_updata(self, now: int, frame: UpData) -> list:
        incoming = []
        if frame.my_data is not None:
            incoming.append(PendingPacket(frame.source, frame.sequence, frame.my_data, now))
        incoming.extend(PendingPacket(c.address, c.sequence, c.data, now) for c in frame.children)
        for pkt in incoming:
            if pkt.key not in self._child_keys:
                self._child_keys.add(pkt.key)
                self.child_queue.append(pkt)
        ack = Ack(self.address, frame.sequence, self._schedule(now))
        self.ack_target = frame.source
        airtime = self.cfg.airtime(ack)
        if not self._dc_allows(now, airtime):
            return self._wait_or_sleep(now)
        self.tx_airtime += airtime
        self._enter(_S.SEND_ACK)
        return [StartTx(ack, now, airtime)]

    def _remove(self, packets: list[PendingPacket]) -> None:
        ids = {id(p) for p in packets}
        if self.local_queue and id(self.local_queue[0]) in ids:
            self.local_queue.popleft()
        kept = deque()
        for p in self.child_queue:
            if id(p) in ids:
                self._child_keys.discard(p.key)
            else:
                kept.append(p)
        self.child_queue = kept

    def _wait_or_sleep(self, now: int) -> list:
        self._enter(_S.WAIT_OR_SLEEP)
        if not (self.local_queue or self.child_queue):
            return self._sleep()
        hop = self._gate(now)
        if hop is None:
            return self._sleep()
        self._enter(_S.WAIT_NEXT_HOP)
        return [SetRadio(RadioState.SLEEP), SetTimer("next_hop", hop[1])]

    def _gate(self, now: int) -> tuple[int, int] | None:
        """Walk parent windows up to the close of our next one; each untried one passes the gate with 1/C."""
        # a parent window may run into our next one, which is then given up;
        # otherwise equal periods with aligned phases would never meet
        horizon = self.next_wake + self.cfg.timeout_updata
        tried = self.tried
        windows = []
        for e in self.parents():
            if e.is_gateway:
                wake = now
            else:
                period = e.period
                if period <= 0:
                    continue
                wake = e.last_seen + e.offset - e.toa
                if wake < now:
                    wake -= (wake - now) // period * period
            if wake <= horizon and e.address not in tried:
                windows.append((wake, e.address))
        if len(windows) > 1:
            windows.sort()
        c = self.cfg.c
        for wake, addr in windows:
            tried.add(addr)
            if gate_transmission(self._gates, c):
                self.target = (addr, wake)
                return self.target
        return None

    def _sleep(self) -> list:
        self._enter(_S.SLEEP)
        return [SetRadio(RadioState.SLEEP)]

    def _on_next_hop(self, now: int) -> list:
        if not (self.local_queue or self.child_queue):
            return self._sleep()
        addr, _ = self.target
        fallback = self.frame_seq
        frame, included = build_updata(self.local_queue, self.child_queue, self.cfg.m, self.cfg.c_max,
                                       self._schedule(now), self.address, fallback)
        airtime = self.cfg.airtime(frame)
        if not self._dc_allows(now, airtime):
            return self._wait_or_sleep(now)
        if frame.my_data is None:
            self.frame_seq = next_sequence(fallback)
        self.tx_airtime += airtime
        self.sent += 1
        self.inflight = (addr, frame.sequence, included)
        self._enter(_S.SEND_UP_DATA)
        return [StartTx(frame, now, airtime)]

    def _on_tx_done(self, now: int) -> list:
        st = self.state
        if st is _S.SEND_UP_DATA:
            self._tx_end = now
            self._enter(_S.RECEIVE_ACK)
            return [StartRx(now + self.cfg.timeout_ack)]
        if st is _S.SEND_ACK:
            return self._wait_or_sleep(now)
        if st is _S.SEND_BEACON:
            if self._op_pending:
                return self._enter_operational(now)
            self._enter(_S.RECEIVE_ANNOUNCE)
            out = [StartRx(None)]
            nxt = now + self._beacon_gap()
            if nxt < self.announce_end:
                out.append(SetTimer("beacon", nxt))
            return out
        return []

    def _ack_missed(self, now: int) -> list:
        _, _, included = self.inflight
        self.inflight = None
        out = []
        limit = self.cfg.retry_limit
        for pkt in included:
            pkt.attempts += 1
        if limit is not None:
            dead = [p for p in included if p.attempts > limit]
            if dead:
                self._remove(dead)
                self.dropped += len(dead)
                out.append(Drop("retry limit", tuple(dead)))
        return out + self._wait_or_sleep(now)


_G = GatewayState


class GatewayFsm:
    """Always-listening sink at address 0."""

    DEDUP_WINDOW = 64

    def __init__(self, config: ProtocolConfig, rng: RngStream):
        self.address = GATEWAY
        self.cfg = config
        self.rng = rng
        self.state = _G.INIT
        self.trail: list[GatewayState] = []
        self.neighbours: dict[int, NeighbourEntry] = {}
        self._seen: dict[int, tuple[deque, set]] = {}
        self._beacon_pending = False
        self.beacon_times: list[int] = []
        self.ack_target: int | None = None
        self.tx_airtime = 0
        self.delivered = 0
        self.duplicates = 0

    def _enter(self, state: GatewayState) -> None:
        self.state = state
        self.trail.append(state)

    def is_dormant(self) -> bool:
        return False

    @property
    def beacon_waiting(self) -> bool:
        """A beacon is queued behind the current transmission."""
        return self._beacon_pending

    def is_new(self, origin: int, seq: int) -> bool:
        """Record ``(origin, seq)``; False when it is inside the dedup window."""
        window = self._seen.get(origin)
        if window is None:
            window = self._seen[origin] = (deque(), set())
        order, members = window
        if seq in members:
            return False
        order.append(seq)
        members.add(seq)
        if len(order) > self.DEDUP_WINDOW:
            members.discard(order.popleft())
        return True

    def step(self, now: int, event) -> list:
        self.trail = []
        if isinstance(event, Timer):
            if event.label == "boot":
                return self._send_beacon(now)
            if event.label == "beacon":
                if self.state in (_G.SEND_ACK, _G.SEND_BEACON):
                    self._beacon_pending = True
                    return []
                return self._send_beacon(now)
            return []
        if isinstance(event, TxDone):
            if self._beacon_pending:
                self._beacon_pending = False
                return self._send_beacon(now)
            self._enter(_G.RECEIVE_UP_DATA)
            return [StartRx(None)]
        if isinstance(event, Received):
            return self._on_frame(now, event.frame, event.airtime)
        return []

    _BEACON = Beacon(GATEWAY)

    def _send_beacon(self, now: int) -> list:
        self._enter(_G.SEND_BEACON)
        frame = self._BEACON
        airtime = self.cfg.airtime(frame)
        self.tx_airtime += airtime
        self.beacon_times.append(now)
        lo, hi = self.cfg.beacon_gap
        return [StartTx(frame, now, airtime), SetTimer("beacon", now + self.rng.uniform_ns(lo, hi))]

    def _on_frame(self, now: int, frame, airtime: int) -> list:
        if self.state is not _G.RECEIVE_UP_DATA:
            return []
        src = frame.source
        sched = frame.schedule
        if sched is not None:
            entry = self.neighbours.get(src)
            if entry is None:
                entry = self.neighbours[src] = NeighbourEntry(src, sched.hops)
            entry.hops, entry.period, entry.offset = sched.hops, sched.period, sched.offset
            entry.last_seen, entry.toa = now, airtime
        if not isinstance(frame, UpData):
            return []
        out = []
        items = []
        if frame.my_data is not None:
            items.append((frame.source, frame.sequence, frame.my_data))
        items.extend((c.address, c.sequence, c.data) for c in frame.children)
        for origin, seq, data in items:
            if self.is_new(origin, seq):
                self.delivered += 1
                out.append(DeliverToApp(AppRecord(origin, seq, data, now, src)))
            else:
                self.duplicates += 1
        ack = Ack(GATEWAY, frame.sequence)
        self.ack_target = frame.source
        airtime = self.cfg.airtime(ack)
        self.tx_airtime += airtime
        self._enter(_G.SEND_ACK)
        out.append(StartTx(ack, now, airtime))
        return out


def sensor_step(fsm: SensorFsm, now: int, event) -> tuple[SensorFsm, list]:
    """Pure form of :meth:`SensorFsm.step`: the input machine is left untouched."""
    nxt = copy.deepcopy(fsm)
    return nxt, nxt.step(now, event)


def gateway_step(fsm: GatewayFsm, now: int, event) -> tuple[GatewayFsm, list]:
    nxt = copy.deepcopy(fsm)
    return nxt, nxt.step(now, event)


__all__ = [
    "SEQ_MOD", "ProtocolConfig", "ProtocolError", "NeighbourEntry", "PendingPacket",
    "SensorFsm", "GatewayFsm", "SensorState", "GatewayState", "waking_time", "compute_period",
    "timeout_updata", "timeout_ack", "select_next_hop", "parent_windows", "gate_transmission",
    "build_updata", "sensor_step", "gateway_step",
]
