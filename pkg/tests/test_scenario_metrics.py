import csv
import io
import json

import pytest

from jmacsim.des import DAY, MIN, MS, S
from jmacsim.metrics import (
    CSV_COLUMNS,
    BatteryEstimate,
    MetricsReport,
    battery_life,
    emit_report,
    end_to_end_delay,
    load_report,
    pdr,
    run_batch,
    throughput,
)
from jmacsim.network import Network, simulate
from jmacsim.scenario import (
    ScenarioError,
    builtin_testbed,
    load_scenario,
    loads_scenario,
    parse_distance,
    parse_duration,
)

MINIMAL = """
[nodes]
0 = gateway
1 = sensor

[links]
1 = 0@2km
"""


def test_minimal_scenario_gets_defaults():
    sc = loads_scenario(MINIMAL)
    assert sc.sensors == [1]
    assert sc.m == 30 and sc.c == 1
    assert sc.protocol.duty_cycle == 0.01
    assert sc.protocol.app_period == 15 * MIN
    assert sc.days == 7 and sc.runs == 20


def test_load_scenario_from_file(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(MINIMAL + "\n[protocol]\nm = 50\nc = 2\napp_period = 10min\n")
    sc = load_scenario(path)
    assert sc.m == 50 and sc.c == 2 and sc.protocol.app_period == 10 * MIN
    assert sc.name == "tiny"


def test_duplicate_gateway_id_rejected():
    with pytest.raises(ScenarioError, match="line"):
        loads_scenario("[nodes]\n0 = gateway\n0 = sensor\n")


def test_second_gateway_rejected():
    with pytest.raises(ScenarioError, match="gateway"):
        loads_scenario("[nodes]\n0 = gateway\n3 = gateway\n")


def test_invalid_protocol_values_rejected():
    with pytest.raises(ScenarioError, match="C"):
        loads_scenario(MINIMAL + "\n[protocol]\nc = 0\n")
    with pytest.raises(ScenarioError):
        loads_scenario(MINIMAL + "\n[protocol]\napp_period = 20min\n")


def test_problems_are_collected_with_locations():
    text = MINIMAL + "\n[protocol]\nm = many\nbogus = 1\n"
    with pytest.raises(ScenarioError) as info:
        loads_scenario(text)
    assert len(info.value.problems) == 2
    assert all("line" in p for p in info.value.problems)


def test_link_that_cannot_close_is_rejected():
    with pytest.raises(ScenarioError, match="sensitivity|close"):
        loads_scenario("[nodes]\n0 = gateway\n1 = sensor\n[links]\n1 = 0@40km\n")


def test_units():
    assert parse_duration("250ms") == 250 * MS
    assert parse_duration("1.5h") == 90 * MIN
    assert parse_duration("2d") == 2 * DAY
    assert parse_duration("12") == 12 * S
    assert parse_distance("2.5km") == 2500.0
    with pytest.raises(ValueError):
        parse_duration("3 fortnights")


def test_testbed1_topology():
    sc = builtin_testbed("testbed1")
    assert len(sc.nodes) == 11
    hops = sc.hop_counts()
    assert hops[1] == 1 and hops[2] == 1 and hops[6] == 3
    parents = sc.parent_sets()
    assert sorted(parents[4]) == [1, 2]
    assert sorted(parents[6]) == [4, 5]
    assert len(parents[10]) == 2


def test_testbed2_topology():
    sc = builtin_testbed("testbed2")
    assert len(sc.nodes) == 19
    hops = sc.hop_counts()
    assert max(hops.values()) == 4
    parents = sc.parent_sets()
    assert len(parents[16]) == 3 and len(parents[17]) == 3
    assert set(parents[16]) == set(parents[17])


def test_unknown_testbed():
    with pytest.raises(ScenarioError, match="unknown"):
        builtin_testbed("testbed9")


def test_overrides_are_validated():
    sc = builtin_testbed("testbed1")
    assert sc.with_overrides(m=100, c=4).protocol.c_max == 1
    with pytest.raises(ScenarioError):
        sc.with_overrides(runs=0)
    with pytest.raises(ScenarioError):
        sc.with_overrides(m=300)


# -- metric formulas -------------------------------------------------------------------


def test_pdr_examples():
    assert pdr(100, 97) == pytest.approx(0.97)
    assert pdr(0, 0) == 1.0
    with pytest.raises(ValueError):
        pdr(3, 4)


def test_delay_and_throughput():
    assert end_to_end_delay(0.0, 50.0) == 50.0
    assert throughput(30, 60.0) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        throughput(30, 0.0)


def test_battery_life():
    assert battery_life(1000, 3.3, 239.6e-6) == pytest.approx(13_772.95, rel=1e-4)
    assert battery_life(1000, 3.3, 3.3e-3) == pytest.approx(1000.0)
    assert battery_life(1000, 3.3, 2 * 239.6e-6) == pytest.approx(battery_life(1000, 3.3, 239.6e-6) / 2)
    est = BatteryEstimate.from_power(239.6e-6)
    assert round(est.lifetime_days) == 574 or est.lifetime_days == pytest.approx(573.9, abs=0.1)
    with pytest.raises(ValueError):
        battery_life(1000, 3.3, 0.0)


# -- reports -----------------------------------------------------------------------------


def test_empty_report_is_header_only_csv(tmp_path):
    report = MetricsReport("x", 30, 1, 1, 0)
    path = tmp_path / "r.csv"
    emit_report(report, "csv", path)
    assert path.read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_zero_day_run_is_empty():
    sc = builtin_testbed("testbed1").with_overrides(days=0, runs=1)
    report = run_batch(sc)
    assert len(report.sensors) == 10
    assert all(s.delivered == 0 and s.delay_mean_s is None for s in report.sensors)
    assert all(r.generated == 0 for run in report.runs for r in run.sensors)


@pytest.fixture(scope="module")
def small_report():
    sc = builtin_testbed("testbed1").with_overrides(c=3, days=1, runs=2, seed=7)
    return run_batch(sc)


def test_report_shape(small_report):
    assert [s.sensor_id for s in small_report.sensors] == list(range(1, 11))
    for s in small_report.sensors:
        assert 0.0 <= s.pdr_mean <= 1.0
        if s.delay_mean_s is not None:
            assert s.throughput_Bps == pytest.approx(30 / s.delay_mean_s)


def test_json_roundtrip(small_report, tmp_path):
    path = tmp_path / "r.json"
    emit_report(small_report, "json", path)
    assert load_report(path) == small_report
    data = json.loads(path.read_text())
    assert len(data["runs"]) == 2


def test_csv_columns_in_contract_order(small_report, tmp_path):
    path = tmp_path / "r.csv"
    emit_report(small_report, "csv", path)
    rows = list(csv.reader(io.StringIO(path.read_text())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 11


def test_unknown_format(small_report, tmp_path):
    with pytest.raises(ValueError):
        emit_report(small_report, "xml", tmp_path / "r.xml")


def test_batch_is_deterministic_and_job_independent(tmp_path):
    sc = builtin_testbed("testbed1").with_overrides(c=2, days=0.5, runs=2, seed=3)
    paths = []
    for i, jobs in enumerate((1, 1, 2)):
        path = tmp_path / f"r{i}.csv"
        emit_report(run_batch(sc, jobs=jobs), "csv", path)
        paths.append(path.read_bytes())
    assert paths[0] == paths[1] == paths[2]


# -- simulation invariants ------------------------------------------------------------


@pytest.fixture(scope="module")
def finished_network():
    sc = builtin_testbed("testbed2").with_overrides(c=3, days=1)
    net = Network(sc, 0)
    result = net.run()
    return net, result


def test_packet_conservation(finished_network):
    net, result = finished_network
    queued = {net.registry[k][0] for k in net.backlog_keys() if k in net.registry}
    dropped = {net.registry[(p.origin, p.sequence)][0] for d in net.drops for p in d.packets}
    generated = {uid for uids in net.generated.values() for uid in uids}
    assert net.delivered <= generated
    missing = generated - net.delivered - queued - dropped
    assert len(missing) <= net.false_ack_packets
    for sid, s in result.sensors.items():
        assert s.delivered + s.backlog + s.dropped <= s.generated
        assert s.acked <= s.sent


def test_energy_ledgers_cover_the_whole_run(finished_network):
    net, result = finished_network
    for node in net.nodes.values():
        assert sum(node.ledger.durations.values()) == DAY
        assert node.ledger.elapsed == DAY


def test_duty_cycle_respected(finished_network):
    _, result = finished_network
    for s in result.sensors.values():
        assert s.tx_airtime_s <= 0.01 * result.duration_s


def test_lazy_and_eager_runs_agree():
    sc = builtin_testbed("testbed1").with_overrides(c=4, days=0.5)
    lazy, eager = simulate(sc, 2, lazy=True), simulate(sc, 2, lazy=False)
    assert lazy.events < eager.events
    for sid in lazy.sensors:
        a, b = lazy.sensors[sid], eager.sensors[sid]
        assert (a.generated, a.sent, a.acked, a.delivered, a.backlog, a.delays) == \
            (b.generated, b.sent, b.acked, b.delivered, b.backlog, b.delays)
        assert a.energy_j == pytest.approx(b.energy_j, rel=1e-12)
        assert a.rx_idle_s == pytest.approx(b.rx_idle_s, abs=1e-9)


def test_frames_survive_the_wire_during_a_run():
    sc = builtin_testbed("testbed1").with_overrides(c=2, days=0.1)
    plain = simulate(sc, 0)
    checked = simulate(sc, 0, verify_frames=True)
    assert {k: v.acked for k, v in plain.sensors.items()} == {k: v.acked for k, v in checked.sensors.items()}


def test_transmissions_only_go_upward():
    sc = builtin_testbed("testbed2").with_overrides(c=2, days=0.25)
    hops = sc.hop_counts()
    seen = []
    net = Network(sc, 1, log=seen.append)
    net.run()
    assert seen
    for node in net.nodes.values():
        fsm = node.fsm
        if getattr(fsm, "hops", None) is not None:
            assert fsm.hops == hops[node.address] <= 4


def test_gateway_beacon_gaps():
    sc = builtin_testbed("testbed1").with_overrides(days=0.1)
    res = simulate(sc, 0)
    gaps = [b - a for a, b in zip(res.beacon_times, res.beacon_times[1:])]
    assert gaps and all(15 * S <= g < 25 * S + 300 * MS for g in gaps)


def test_sensors_start_at_random_phases():
    sc = builtin_testbed("testbed1").with_overrides(days=0.01)
    phases = []
    for run in range(3):
        net = Network(sc, run)
        net.run()
        fsm = net.nodes[3].fsm
        assert 0.0 <= fsm.phase < 1.0
        phases.append(fsm.phase)
    assert len(set(phases)) == 3
