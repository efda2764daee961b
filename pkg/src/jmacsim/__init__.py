"""Discrete-event simulator for the JMAC multi-hop LoRa protocol."""

from .des import DAY, HOUR, MIN, MS, S, US, RngStream, Simulator
from .frames import Ack, Beacon, ChildRecord, ScheduleInfo, UpData, c_max, decode, encode
from .metrics import BatteryEstimate, MetricsReport, battery_life, emit_report, pdr, run_batch, throughput
from .network import Network, simulate
from .phy import RadioParams, time_on_air
from .protocol import ProtocolConfig, compute_period, waking_time
from .scenario import ScenarioConfig, ScenarioError, builtin_testbed, load_scenario

__version__ = "0.1.0"

__all__ = [
    "DAY", "HOUR", "MIN", "MS", "S", "US", "RngStream", "Simulator",
    "Ack", "Beacon", "ChildRecord", "ScheduleInfo", "UpData", "c_max", "decode", "encode",
    "BatteryEstimate", "MetricsReport", "battery_life", "emit_report", "pdr", "run_batch", "throughput",
    "Network", "simulate", "RadioParams", "time_on_air", "ProtocolConfig", "compute_period",
    "waking_time", "ScenarioConfig", "ScenarioError", "builtin_testbed", "load_scenario",
]
