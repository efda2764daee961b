"""LoRa physical layer: airtime, path loss, propagation, capture and energy."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

SPEED_OF_LIGHT = 299_792_458.0  # m/s
BANDWIDTHS = (125_000, 250_000, 500_000)
MAX_PAYLOAD = 255


class RadioError(ValueError):
    pass


@dataclass(frozen=True)
class RadioParams:
    spreading_factor: int = 7
    bandwidth: int = 125_000
    coding_rate: int = 1  # denominator is 4 + coding_rate
    preamble_symbols: int = 8
    explicit_header: bool = True
    crc_on: bool = True
    low_data_rate_optimize: bool = False
    tx_power: float = 14.0  # dBm
    carrier_frequency: float = 868.1e6  # Hz
    rx_sensitivity: float = -124.0  # dBm

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise RadioError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not 7 <= self.spreading_factor <= 12:
            out.append(f"spreading_factor must be in [7, 12], got {self.spreading_factor}")
        if self.bandwidth not in BANDWIDTHS:
            out.append(f"bandwidth must be one of {BANDWIDTHS} Hz, got {self.bandwidth}")
        if not 1 <= self.coding_rate <= 4:
            out.append(f"coding_rate must be in [1, 4], got {self.coding_rate}")
        if self.preamble_symbols < 6:
            out.append(f"preamble_symbols must be >= 6, got {self.preamble_symbols}")
        limit = max_tx_power(self.carrier_frequency)
        if limit is not None and self.tx_power > limit:
            out.append(f"tx_power {self.tx_power} dBm exceeds {limit} dBm allowed at "
                       f"{self.carrier_frequency / 1e6:.3f} MHz")
        return out


def max_tx_power(carrier_frequency: float) -> float | None:
    """EU868 radiated power ceiling in dBm, or None outside the band."""
    if 869.4e6 <= carrier_frequency <= 869.65e6:
        return 27.0
    if 863e6 <= carrier_frequency <= 870e6:
        return 14.0
    return None


def symbol_time(params: RadioParams) -> float:
    return (2 ** params.spreading_factor) / params.bandwidth


def payload_symbols(params: RadioParams, payload_bytes: int) -> int:
    sf = params.spreading_factor
    de = 1 if params.low_data_rate_optimize else 0
    ih = 0 if params.explicit_header else 1
    crc = 1 if params.crc_on else 0
    num = 8 * payload_bytes - 4 * sf + 28 + 16 * crc - 20 * ih
    den = 4 * (sf - 2 * de)
    blocks = -(-num // den)  # ceil for ints of either sign
    return 8 + max(blocks * (params.coding_rate + 4), 0)


def time_on_air(params: RadioParams, payload_bytes: int) -> int:
    """Airtime in integer nanoseconds (SX1276 symbol-count relation)."""
    if not 1 <= payload_bytes <= MAX_PAYLOAD:
        raise RadioError(f"payload must be 1..{MAX_PAYLOAD} bytes, got {payload_bytes}")
    # total symbols = preamble + 4.25 + payload; scale by 4 to stay integral
    quarter_symbols = 4 * params.preamble_symbols + 17 + 4 * payload_symbols(params, payload_bytes)
    num = quarter_symbols * (2 ** params.spreading_factor) * 1_000_000_000
    den = 4 * params.bandwidth
    return (2 * num + den) // (2 * den)


@dataclass(frozen=True)
class PathLossModel:
    """Deterministic log-distance loss, no shadowing.

    The defaults keep the exponent of the Oulu LoRa measurements (2.32) and
    pull the 1 km intercept down so that a 15 km link at 14 dBm lands just
    above a -124 dBm sensitivity. They are fitted, not measured.
    """

    ref_loss: float = 110.7  # dB at ref_distance
    exponent: float = 2.32
    ref_distance: float = 1000.0  # m


DEFAULT_PATH_LOSS = PathLossModel()


def path_loss(distance: float, model: PathLossModel = DEFAULT_PATH_LOSS) -> float:
    if distance <= 0:
        raise RadioError(f"distance must be positive, got {distance}")
    return model.ref_loss + 10.0 * model.exponent * math.log10(distance / model.ref_distance)


def rx_power(tx_power: float, distance: float, model: PathLossModel = DEFAULT_PATH_LOSS) -> float:
    return tx_power - path_loss(distance, model)


def propagation_delay(distance: float) -> int:
    """Constant-speed propagation delay in nanoseconds."""
    if distance < 0:
        raise RadioError(f"distance must be non-negative, got {distance}")
    return int(round(distance / SPEED_OF_LIGHT * 1e9))


@dataclass(slots=True)
class Transmission:
    source: int
    start: int
    airtime: int
    tx_power: float
    frame: Any
    source_position: tuple[float, float] | None = None

    @property
    def end(self) -> int:
        return self.start + self.airtime


@dataclass(slots=True)
class Arrival:
    """A transmission as seen by one receiver."""

    source: int
    start: int
    end: int
    power: float
    frame: Any
    airtime: int
    tag: Any = None  # simulator bookkeeping, invisible to the protocol


def receive_decision(overlapping: Iterable[Arrival], sensitivity: float) -> Arrival | None:
    """Capture model: the strongest arrival above sensitivity wins, everything else is lost.

    Equal powers go to the lowest source id so the outcome does not depend on
    the order of ``overlapping``.
    """
    best = None
    for a in overlapping:
        if a.power < sensitivity:
            continue
        if best is None or a.power > best.power or (a.power == best.power and a.source < best.source):
            best = a
    return best


class RadioState(enum.IntEnum):
    OFF = 0
    SLEEP = 1
    RX_IDLE = 2
    RX = 3
    TX = 4


# SX1276 supply currents in amperes
SX1276_CURRENTS = {
    RadioState.OFF: 0.2e-6,
    RadioState.SLEEP: 1.5e-6,
    RadioState.RX_IDLE: 1.6e-3,
    RadioState.RX: 10.3e-3,
    RadioState.TX: 29e-3,
}


@dataclass
class EnergyLedger:
    """Time spent per radio state, closed interval by interval."""

    supply_voltage: float = 3.3
    currents: dict = field(default_factory=lambda: dict(SX1276_CURRENTS))
    state: RadioState = RadioState.SLEEP
    since: int = 0
    start: int = 0
    durations: dict = field(default_factory=lambda: {s: 0 for s in RadioState})

    def __post_init__(self):
        self.since = self.start

    def set_state(self, new_state: RadioState, at: int) -> None:
        if at < self.since:
            raise RadioError(f"state change at {at} precedes last transition at {self.since}")
        self.durations[self.state] += at - self.since
        self.state = new_state
        self.since = at

    def advance(self, at: int, carved: dict | None = None) -> None:
        """Close ``[since, at)`` with ``carved`` durations booked to their own states.

        The remainder goes to the current state. Used to account windows that
        were skipped in closed form.
        """
        if at < self.since:
            raise RadioError(f"advance to {at} precedes last transition at {self.since}")
        span = at - self.since
        taken = 0
        if carved:
            for state, dur in carved.items():
                if dur < 0:
                    raise RadioError("negative carved duration")
                self.durations[state] += dur
                taken += dur
        if taken > span:
            raise RadioError(f"carved {taken} ns out of a {span} ns interval")
        self.durations[self.state] += span - taken
        self.since = at

    def close(self, at: int) -> None:
        self.set_state(self.state, at)

    @property
    def elapsed(self) -> int:
        return sum(self.durations.values())

    def energy(self) -> float:
        """Joules over the closed intervals."""
        v = self.supply_voltage
        return sum(dur * 1e-9 * self.currents[s] * v for s, dur in self.durations.items())


def average_power(ledger: EnergyLedger, elapsed: int | None = None) -> float:
    """Mean power in watts over ``elapsed`` ns (defaults to the ledger's span)."""
    if elapsed is None:
        elapsed = ledger.elapsed
    if elapsed <= 0:
        raise RadioError("average power needs a positive elapsed time")
    return ledger.energy() / (elapsed * 1e-9)
