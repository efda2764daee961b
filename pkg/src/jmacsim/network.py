"""One simulation run: nodes, shared channel and the protocol machines wired to the event queue."""

from __future__ import annotations

import gc
import itertools
from dataclasses import dataclass, field
from typing import Callable

from .des import DAY, RngStream, Simulator
from .frames import GATEWAY, Ack, decode, encode
from .phy import Arrival, EnergyLedger, RadioState, receive_decision
from .protocol import (
    RX_CLOSED,
    TX_DONE,
    DeliverToApp,
    Drop,
    GatewayFsm,
    Received,
    SensorFsm,
    SensorState,
    SetRadio,
    SetTimer,
    StartRx,
    StartTx,
    Timer,
)

_TIMERS: dict[str, Timer] = {}


def _timer(label: str) -> Timer:
    ev = _TIMERS.get(label)
    if ev is None:
        ev = _TIMERS[label] = Timer(label)
    return ev


class _Node:
    __slots__ = ("address", "fsm", "ledger", "links", "listen_since", "close_ev", "tx_until",
                 "arrivals", "spans", "timers", "dormant", "tx_log", "done_at")

    def __init__(self, address: int, fsm, ledger: EnergyLedger):
        self.address = address
        self.fsm = fsm
        self.ledger = ledger
        self.links: list[tuple[_Node, float, int]] = []
        self.listen_since: int | None = None
        self.close_ev = None
        self.tx_until: int | None = None
        self.arrivals: list[Arrival] = []
        self.spans: list[tuple[int, int]] = []  # arrivals heard during the current listen
        self.timers: dict = {}
        self.dormant: tuple[int, int] | bool = False
        self.tx_log: list[tuple[int, int]] | None = None  # (start, airtime)
        self.done_at: int | None = None  # end of a transmission whose completion is still unprocessed


@dataclass
class SensorResult:
    sensor_id: int
    hops: int | None
    parents: int
    generated: int
    sent: int
    acked: int
    delivered: int
    backlog: int
    dropped: int
    delays: list[float]  # seconds, first delivery of each packet
    energy_j: float
    power_w: float
    tx_airtime_s: float
    rx_s: float
    rx_idle_s: float

    @property
    def pdr(self) -> float:
        return self.acked / self.sent if self.sent else 1.0


@dataclass
class RunResult:
    run: int
    seed: int
    duration_s: float
    events: int
    sensors: dict[int, SensorResult] = field(default_factory=dict)
    gateway_deliveries: int = 0
    gateway_duplicates: int = 0
    false_acks: int = 0
    beacon_times: list[int] = field(default_factory=list)


class Network:
    """Assembles one run of a scenario.

    ``lazy`` skips the wake/close events of sensors that have nothing to send
    and are not being addressed; their windows are replayed in closed form the
    next time they matter. Results are identical to the eager mode.
    """

    def __init__(self, scenario, run: int = 0, *, lazy: bool = True, trace: bool = False,
                 log: Callable[[str], None] | None = None, verify_frames: bool = False,
                 record_tx: bool = False):
        self.scenario = scenario
        self.run_index = run
        self.cfg = scenario.protocol
        self.lazy = lazy
        self.log = log
        self.verify_frames = verify_frames
        self.sensitivity = self.cfg.radio.rx_sensitivity
        self.sim = Simulator(self._handle, trace=trace)
        self.nodes: dict[int, _Node] = {}
        self._uid = itertools.count()
        self.registry: dict[tuple[int, int], tuple[int, int]] = {}
        self.generated: dict[int, list[int]] = {}
        self.delivered: set[int] = set()
        self.delays: dict[int, list[int]] = {}
        self.drops: list[Drop] = []
        self.window_skips = 0
        self.false_acks = 0
        self.false_ack_packets = 0

        seed = scenario.seed
        for addr in sorted(scenario.nodes):
            rng = RngStream(seed, run, addr)
            if addr == GATEWAY:
                fsm = GatewayFsm(self.cfg, rng)
            else:
                fsm = SensorFsm(addr, self.cfg, rng)
            node = _Node(addr, fsm, EnergyLedger(supply_voltage=scenario.supply_voltage))
            if record_tx:
                node.tx_log = []
            self.nodes[addr] = node
            if addr != GATEWAY:
                self.generated[addr] = []
                self.delays[addr] = []
        for addr, neigh in scenario.neighbour_table().items():
            self.nodes[addr].links = [(self.nodes[b], power, prop) for b, power, prop in neigh]
        self._max_air = self.cfg.toa_updata_max
        self._window = self.cfg.timeout_updata
        self._kinds = {"timer": self._on_timer, "tx_end": self._on_tx_end,
                       "rx_end": self._on_rx_end, "rx_close": self._on_rx_close}
        for addr in sorted(self.nodes):
            self.sim.at(0, addr, "timer", "boot")

    # -- event handling -------------------------------------------------------

    def _handle(self, ev) -> None:
        node = self.nodes[ev.target]
        now = self.sim.now
        if node.done_at is not None and now >= node.done_at:
            self._complete_tx(node)
        out = self._kinds[ev.kind](node, now, ev)
        if out is not None:
            self._apply(node, now, out)

    def _on_timer(self, node: _Node, now: int, ev):
        label = ev.payload
        timers = node.timers
        if timers.get(label) is ev:
            del timers[label]
        early = self._materialize(node, now) if node.dormant else None
        event = _timer(label)
        out = node.fsm.step(now, event) if self.log is None else self._step(node, now, event)
        if early:
            out = early + out
        if node.done_at is not None and node.address == GATEWAY and node.fsm.beacon_waiting:
            # the completion now has work attached, so it needs its own event
            self.sim.at(node.done_at, node.address, "tx_end")
            node.done_at = None
        if label == "app":
            pkt = node.fsm.last_generated
            uid = next(self._uid)
            self.registry[pkt.key] = (uid, now)
            self.generated[node.address].append(uid)
        return out

    def _complete_tx(self, node: _Node) -> None:
        # the gateway always falls back to listening, so its TX_DONE can wait
        # until something that depends on it happens
        at, node.done_at = node.done_at, None
        out = self._on_tx_end(node, at, None)
        if out:
            self._apply(node, at, out)

    def _on_tx_end(self, node: _Node, now: int, ev):
        node.tx_until = None
        node.ledger.set_state(RadioState.SLEEP, now)
        return node.fsm.step(now, TX_DONE) if self.log is None else self._step(node, now, TX_DONE)

    def _on_rx_end(self, node: _Node, now: int, ev):
        arr = ev.payload
        if node.listen_since is None or node.listen_since > arr.start:
            return None
        start, end = arr.start, arr.end
        overlapping = [a for a in node.arrivals if a.start < end and a.end > start]
        if len(overlapping) == 1:
            if arr.power < self.sensitivity:
                return None
        elif receive_decision(overlapping, self.sensitivity) is not arr:
            return None
        frame = arr.frame
        if self.verify_frames:
            frame = decode(encode(frame), m=self.cfg.m)
            assert frame == arr.frame
        fsm = node.fsm
        pending = fsm.inflight if type(frame) is Ack and type(fsm) is SensorFsm else None
        out = self._step(node, now, Received(frame, arr.airtime))
        if pending is not None and fsm.inflight is None and arr.tag != node.address:
            # the ACK answered a sibling that happened to use the same sequence number
            self.false_acks += 1
            self.false_ack_packets += len(pending[2])
        return out

    def _on_rx_close(self, node: _Node, now: int, ev):
        node.close_ev = None
        since = node.listen_since
        sens = self.sensitivity
        busy_until = None
        for a in node.arrivals:
            if since <= a.start <= now < a.end and a.power >= sens and (busy_until is None or a.end > busy_until):
                busy_until = a.end
        if busy_until is not None:
            # a frame is being demodulated: hold the window open until it ends
            node.close_ev = self.sim.at(busy_until, node.address, "rx_close")
            return None
        self._stop_listening(node, now)
        node.ledger.set_state(RadioState.SLEEP, now)
        return node.fsm.step(now, RX_CLOSED) if self.log is None else self._step(node, now, RX_CLOSED)

    def _step(self, node: _Node, now: int, event) -> list:
        fsm = node.fsm
        if self.log is None:
            return fsm.step(now, event)
        before = fsm.state
        out = fsm.step(now, event)
        path = "->".join(s.value for s in [before, *fsm.trail] if s is not None) if fsm.trail else (
            before.value if before is not None else "-")
        self.log(f"{now / 1e9:.6f} node={node.address} {path} event={event!r} actions={out!r}")
        return out

    def _apply(self, node: _Node, now: int, actions: list) -> None:
        sim = self.sim
        for act in actions:
            t = type(act)
            if t is SetTimer:
                old = node.timers.pop(act.label, None)
                if old is not None:
                    sim.cancel(old)
                if act.at is not None:
                    node.timers[act.label] = sim.at(act.at, node.address, "timer", act.label)
            elif t is StartRx:
                if node.listen_since is None:
                    node.listen_since = now
                    node.spans = []
                    node.ledger.set_state(RadioState.RX_IDLE, now)
                close = node.close_ev
                if close is not None:
                    if close.fire_at == act.until:
                        continue
                    sim.cancel(close)
                    node.close_ev = None
                if act.until is not None:
                    node.close_ev = sim.at(act.until, node.address, "rx_close")
            elif t is SetRadio:
                if node.listen_since is not None:
                    self._stop_listening(node, now)
                node.ledger.set_state(act.state, now)
            elif t is StartTx:
                self._start_tx(node, now, act)
            elif t is DeliverToApp:
                self._deliver(act.record)
            elif t is Drop:
                self.drops.append(act)
            else:
                raise ValueError(f"unknown action {act!r}")
        if self.lazy and not node.dormant and node.fsm.is_dormant():
            timers = node.timers
            wake = timers.pop("wake", None)
            if wake is not None:
                sim.cancel(wake)
            fsm = node.fsm
            # (first wake, period): fixed until the sensor is materialised again
            node.dormant = (fsm.next_wake, fsm.current_period())
            resume = fsm.resume_at()
            if resume is not None:
                at, label = resume
                timers["resume"] = sim.at(at, node.address, "timer", label)

    # -- channel -----------------------------------------------------------------

    def _start_tx(self, node: _Node, now: int, act: StartTx) -> None:
        if node.listen_since is not None:
            self._stop_listening(node, now)
        node.ledger.set_state(RadioState.TX, now)
        airtime = act.airtime
        end = node.tx_until = now + airtime
        if not self.lazy:
            self.sim.at(end, node.address, "tx_end")
        elif node.address == GATEWAY:
            node.done_at = end
        elif node.fsm.state is SensorState.SEND_UP_DATA:
            # TX_DONE here always opens the ACK window, so its close can be
            # booked now and the completion run by whatever touches the node next
            node.done_at = end
            node.close_ev = self.sim.at(end + self.cfg.timeout_ack, node.address, "rx_close")
        else:
            self.sim.at(end, node.address, "tx_end")
        if node.tx_log is not None:
            node.tx_log.append((now, airtime))
        frame = act.frame
        src = node.address
        tag = node.fsm.ack_target if type(frame) is Ack else None
        offer = self._offer
        for other, power, prop in node.links:
            start = now + prop
            offer(other, now, Arrival(src, start, start + airtime, power, frame, airtime, tag))

    def _offer(self, node: _Node, now: int, arr: Arrival) -> None:
        if node.done_at is not None and now >= node.done_at:
            self._complete_tx(node)
        arrivals = node.arrivals
        if len(arrivals) > 16:
            horizon = now - 2 * self._max_air
            node.arrivals = arrivals = [a for a in arrivals if a.end > horizon]
        arrivals.append(arr)
        start = arr.start
        dormant = node.dormant
        if dormant:
            first, period = dormant
            if start < first or (start - first) % period >= self._window:
                return
            early = self._materialize(node, now)
            if early:
                self._apply(node, now, early)
        if node.listen_since is not None:
            if arr.power >= self.sensitivity:
                node.spans.append((start, arr.end))
            register = True
        elif node.tx_until is not None:
            register = node.tx_until <= start
        else:
            wake = node.timers.get("wake")
            register = wake is not None and wake.fire_at <= start
        if register:
            self.sim.at(arr.end, node.address, "rx_end", arr)

    def _stop_listening(self, node: _Node, at: int) -> None:
        since = node.listen_since
        busy = 0
        edge = since
        spans = node.spans
        if len(spans) > 1:
            spans.sort()
        for s, e in spans:
            s = max(s, edge)
            e = min(e, at)
            if e > s:
                busy += e - s
                edge = e
        node.ledger.advance(at, {RadioState.RX: busy} if busy else None)
        node.listen_since = None
        node.spans = []
        if node.close_ev is not None:
            self.sim.cancel(node.close_ev)
            node.close_ev = None

    # -- dormant sensors -------------------------------------------------------

    def _materialize(self, node: _Node, now: int) -> list:
        """Bring a dormant sensor up to ``now``; returns actions due at ``now``."""
        fsm = node.fsm
        resume = node.timers.pop("resume", None)
        if resume is not None:
            self.sim.cancel(resume)
        skipped, live, actions = fsm.fast_forward(now)
        self.window_skips += skipped
        idle = skipped * self.cfg.timeout_updata
        ledger = node.ledger
        if live is not None:
            ledger.advance(live, {RadioState.RX_IDLE: idle} if idle else None)
            ledger.set_state(RadioState.RX_IDLE, live)
            node.listen_since = live
            node.spans = []
            node.close_ev = self.sim.at(live + self.cfg.timeout_updata, node.address, "rx_close")
        else:
            ledger.advance(now, {RadioState.RX_IDLE: idle} if idle else None)
        node.timers["wake"] = self.sim.at(fsm.next_wake, node.address, "timer", "wake")
        node.dormant = False
        return actions

    # -- bookkeeping -------------------------------------------------------------

    def _deliver(self, record) -> None:
        entry = self.registry.get((record.origin, record.sequence))
        if entry is None:
            return
        uid, created = entry
        if uid in self.delivered:
            return
        self.delivered.add(uid)
        self.delays[record.origin].append(record.at - created)

    def run(self, duration: int | None = None) -> RunResult:
        if duration is None:
            duration = int(round(self.scenario.days * DAY))
        if duration < 0:
            raise ValueError("duration must be non-negative")
        # the run allocates many short-lived objects and no reference cycles
        collecting = gc.isenabled()
        gc.disable()
        try:
            events = self.sim.run_until(duration)
        finally:
            if collecting:
                gc.enable()
        self._finish(duration)
        return self._collect(duration, events)

    def _finish(self, end: int) -> None:
        for node in self.nodes.values():
            if node.done_at is not None and end >= node.done_at:
                self._complete_tx(node)
            if node.dormant:
                skipped, live, _ = node.fsm.fast_forward(end)
                idle = skipped * self.cfg.timeout_updata + (end - live if live is not None else 0)
                node.ledger.advance(end, {RadioState.RX_IDLE: idle} if idle else None)
                node.dormant = False
            elif node.listen_since is not None:
                self._stop_listening(node, end)
            node.ledger.close(end)

    def backlog_keys(self) -> set[tuple[int, int]]:
        keys = set()
        for node in self.nodes.values():
            fsm = node.fsm
            if isinstance(fsm, SensorFsm):
                keys.update(p.key for p in fsm.local_queue)
                keys.update(p.key for p in fsm.child_queue)
        return keys

    def _collect(self, duration: int, events: int) -> RunResult:
        gw = self.nodes[GATEWAY].fsm
        result = RunResult(self.run_index, self.scenario.seed, duration / 1e9, events,
                           gateway_deliveries=gw.delivered, gateway_duplicates=gw.duplicates,
                           beacon_times=list(gw.beacon_times), false_acks=self.false_acks)
        backlog: dict[int, int] = {}
        for key in self.backlog_keys():
            entry = self.registry.get(key)
            if entry is not None and entry[0] not in self.delivered:
                backlog[key[0]] = backlog.get(key[0], 0) + 1
        dropped: dict[int, int] = {}
        for drop in self.drops:
            for pkt in drop.packets:
                dropped[pkt.origin] = dropped.get(pkt.origin, 0) + 1
        for addr, node in self.nodes.items():
            if addr == GATEWAY:
                continue
            fsm = node.fsm
            ledger = node.ledger
            energy = ledger.energy()
            delays = [d / 1e9 for d in self.delays[addr]]
            result.sensors[addr] = SensorResult(
                sensor_id=addr,
                hops=fsm.hops,
                parents=fsm.parent_count(),
                generated=fsm.generated,
                sent=fsm.sent,
                acked=fsm.acked,
                delivered=len(delays),
                backlog=backlog.get(addr, 0),
                dropped=dropped.get(addr, 0),
                delays=delays,
                energy_j=energy,
                power_w=energy / (duration / 1e9) if duration > 0 else 0.0,
                tx_airtime_s=ledger.durations[RadioState.TX] / 1e9,
                rx_s=ledger.durations[RadioState.RX] / 1e9,
                rx_idle_s=ledger.durations[RadioState.RX_IDLE] / 1e9,
            )
        return result


def simulate(scenario, run: int = 0, **kwargs) -> RunResult:
    return Network(scenario, run, **kwargs).run()
