"""Per-sensor metrics, batch execution and report emission."""

from __future__ import annotations

import csv
import json
import math
import statistics
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from .network import RunResult, simulate

CSV_COLUMNS = (
    "sensor_id", "hops", "parents", "pdr_mean", "pdr_std", "delay_mean_s", "delay_std_s",
    "throughput_Bps", "power_uW", "energy_mJ",
)


def pdr(sent: int, acked: int) -> float:
    """Acknowledged over sent UP_DATA frames; 1.0 when nothing was sent."""
    if sent < 0 or acked < 0:
        raise ValueError("counts must be non-negative")
    if acked > sent:
        raise ValueError(f"acked ({acked}) cannot exceed sent ({sent})")
    return acked / sent if sent else 1.0


def end_to_end_delay(generated_at: float, delivered_at: float) -> float:
    if delivered_at < generated_at:
        raise ValueError("delivery precedes generation")
    return delivered_at - generated_at


def throughput(m: int, mean_delay: float) -> float:
    """Bytes per second; ``m`` payload bytes over the mean end-to-end delay."""
    if mean_delay <= 0:
        raise ValueError("mean delay must be positive")
    return m / mean_delay


def battery_life(capacity_mah: float, supply_v: float, power_w: float) -> float:
    """Hours of operation from a battery at a constant average draw."""
    if power_w <= 0:
        raise ValueError("power must be positive")
    if capacity_mah <= 0 or supply_v <= 0:
        raise ValueError("capacity and supply must be positive")
    return capacity_mah / 1000.0 * supply_v / power_w


@dataclass(frozen=True)
class BatteryEstimate:
    capacity_mah: float
    supply_v: float
    power_w: float
    lifetime_h: float

    @classmethod
    def from_power(cls, power_w: float, capacity_mah: float = 1000.0, supply_v: float = 3.3) -> BatteryEstimate:
        return cls(capacity_mah, supply_v, power_w, battery_life(capacity_mah, supply_v, power_w))

    @property
    def lifetime_days(self) -> float:
        return self.lifetime_h / 24.0


def _std(values: list[float]) -> float:
    return statistics.stdev(values) if len(values) > 1 else 0.0


@dataclass
class RunSensorStats:
    sensor_id: int
    hops: int | None
    parents: int
    generated: int
    sent: int
    acked: int
    delivered: int
    backlog: int
    dropped: int
    pdr: float
    delay_mean_s: float | None
    delay_max_s: float | None
    power_uW: float
    energy_mJ: float
    tx_airtime_s: float


@dataclass
class RunSummary:
    run: int
    seed: int
    duration_s: float
    events: int
    sensors: list[RunSensorStats] = field(default_factory=list)


@dataclass
class SensorSummary:
    sensor_id: int
    hops: int | None
    parents: int
    pdr_mean: float
    pdr_std: float
    delay_mean_s: float | None
    delay_std_s: float | None
    delay_max_s: float | None
    throughput_Bps: float | None
    power_uW: float
    energy_mJ: float
    delivered: int
    backlog_mean: float


@dataclass
class MetricsReport:
    scenario: str
    m: int
    c: int
    seed: int
    days: float
    sensors: list[SensorSummary] = field(default_factory=list)
    runs: list[RunSummary] = field(default_factory=list)

    def sensor(self, sensor_id: int) -> SensorSummary:
        for s in self.sensors:
            if s.sensor_id == sensor_id:
                return s
        raise KeyError(sensor_id)

    def network_pdr(self) -> float:
        return statistics.fmean(s.pdr_mean for s in self.sensors) if self.sensors else 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> MetricsReport:
        sensors = [SensorSummary(**s) for s in data.get("sensors", [])]
        runs = [RunSummary(**{**r, "sensors": [RunSensorStats(**x) for x in r["sensors"]]})
                for r in data.get("runs", [])]
        return cls(**{**data, "sensors": sensors, "runs": runs})


def summarize(results: list[RunResult], *, scenario: str, m: int, c: int, seed: int,
              days: float) -> MetricsReport:
    report = MetricsReport(scenario, m, c, seed, days)
    for res in results:
        summary = RunSummary(res.run, res.seed, res.duration_s, res.events)
        for sid in sorted(res.sensors):
            s = res.sensors[sid]
            summary.sensors.append(RunSensorStats(
                sensor_id=sid, hops=s.hops, parents=s.parents, generated=s.generated, sent=s.sent,
                acked=s.acked, delivered=s.delivered, backlog=s.backlog, dropped=s.dropped,
                pdr=pdr(s.sent, s.acked),
                delay_mean_s=statistics.fmean(s.delays) if s.delays else None,
                delay_max_s=max(s.delays) if s.delays else None,
                power_uW=s.power_w * 1e6, energy_mJ=s.energy_j * 1e3, tx_airtime_s=s.tx_airtime_s,
            ))
        report.runs.append(summary)
    ids = sorted({sid for res in results for sid in res.sensors})
    for sid in ids:
        per_run = [res.sensors[sid] for res in results if sid in res.sensors]
        pdrs = [pdr(s.sent, s.acked) for s in per_run]
        run_means = [statistics.fmean(s.delays) for s in per_run if s.delays]
        pooled = [d for s in per_run for d in s.delays]
        delay_mean = statistics.fmean(run_means) if run_means else None
        hops = Counter(s.hops for s in per_run).most_common(1)[0][0]
        parents = Counter(s.parents for s in per_run).most_common(1)[0][0]
        report.sensors.append(SensorSummary(
            sensor_id=sid,
            hops=hops,
            parents=parents,
            pdr_mean=statistics.fmean(pdrs),
            pdr_std=_std(pdrs),
            delay_mean_s=delay_mean,
            delay_std_s=_std(pooled) if pooled else None,
            delay_max_s=max(pooled) if pooled else None,
            throughput_Bps=throughput(m, delay_mean) if delay_mean else None,
            power_uW=statistics.fmean(s.power_w for s in per_run) * 1e6,
            energy_mJ=statistics.fmean(s.energy_j for s in per_run) * 1e3,
            delivered=sum(s.delivered for s in per_run),
            backlog_mean=statistics.fmean(s.backlog for s in per_run),
        ))
    return report


def _run_one(args) -> RunResult:
    scenario, run, lazy, log = args
    return simulate(scenario, run, lazy=lazy, log=log)


def run_batch(config, *, jobs: int = 1, lazy: bool = True,
              progress: Callable[[RunResult], None] | None = None,
              log: Callable[[str], None] | None = None) -> MetricsReport:
    """Execute ``config.runs`` independent runs and aggregate them.

    Every run draws from its own random substreams, so results do not depend
    on ``jobs``. A ``log`` callback receives the transition trace and forces
    sequential execution.
    """
    tasks = [(config, run, lazy, log) for run in range(config.runs)]
    results: list[RunResult] = []
    if jobs > 1 and len(tasks) > 1 and log is None:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_run_one, tasks):
                results.append(res)
                if progress:
                    progress(res)
    else:
        for task in tasks:
            res = _run_one(task)
            results.append(res)
            if progress:
                progress(res)
    return summarize(results, scenario=config.name, m=config.m, c=config.c, seed=config.seed, days=config.days)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.9g}"
    return str(value)


def report_rows(report: MetricsReport) -> list[list[str]]:
    return [[_cell(getattr(s, col)) for col in CSV_COLUMNS] for s in report.sensors]


def emit_report(report: MetricsReport, fmt: str, path: str | Path) -> None:
    """Write ``report`` as CSV (one row per sensor) or JSON (with run detail)."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            writer.writerows(report_rows(report))
    else:
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=False) + "\n")


def load_report(path: str | Path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text()))
