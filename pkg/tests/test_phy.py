import itertools
import math

import pytest
from hypothesis import given, strategies as st

from jmacsim.des import MS, S
from jmacsim.phy import (
    Arrival,
    EnergyLedger,
    PathLossModel,
    RadioError,
    RadioParams,
    RadioState,
    average_power,
    max_tx_power,
    path_loss,
    propagation_delay,
    receive_decision,
    rx_power,
    time_on_air,
)

from oracles import datasheet_airtime_ns


def test_airtime_matches_oracle_on_full_grid():
    worst = 0
    for sf, cr in itertools.product(range(7, 13), range(1, 5)):
        params = RadioParams(spreading_factor=sf, coding_rate=cr)
        for payload in range(1, 256):
            diff = abs(time_on_air(params, payload) - datasheet_airtime_ns(sf, 125_000, cr, payload))
            worst = max(worst, diff)
    assert worst <= 1


@pytest.mark.parametrize("bw", [125_000, 250_000, 500_000])
@pytest.mark.parametrize("header,crc,ldro", [(True, True, True), (False, False, False), (False, True, True)])
def test_airtime_matches_oracle_for_flag_variants(bw, header, crc, ldro):
    for sf in (7, 9, 12):
        params = RadioParams(spreading_factor=sf, bandwidth=bw, explicit_header=header, crc_on=crc,
                             low_data_rate_optimize=ldro, preamble_symbols=10)
        for payload in (1, 19, 51, 243, 255):
            expected = datasheet_airtime_ns(sf, bw, 1, payload, 10, header, crc, ldro)
            assert abs(time_on_air(params, payload) - expected) <= 1


def test_reference_airtimes():
    radio = RadioParams()
    assert time_on_air(radio, 243) == 379_136_000
    assert abs(time_on_air(radio, 243) / MS - 379.1) < 0.1
    assert time_on_air(radio, 19) == 51_456_000


@pytest.mark.parametrize("payload", [0, 256, -1])
def test_airtime_rejects_out_of_range_payload(payload):
    with pytest.raises(RadioError):
        time_on_air(RadioParams(), payload)


def test_airtime_grows_with_spreading_factor():
    for sf in range(7, 12):
        lo, hi = RadioParams(spreading_factor=sf), RadioParams(spreading_factor=sf + 1)
        assert all(time_on_air(hi, n) > time_on_air(lo, n) for n in range(1, 256))


def test_radio_params_validation():
    with pytest.raises(RadioError):
        RadioParams(spreading_factor=6)
    with pytest.raises(RadioError):
        RadioParams(bandwidth=100_000)
    with pytest.raises(RadioError):
        RadioParams(coding_rate=5)
    with pytest.raises(RadioError, match="exceeds"):
        RadioParams(tx_power=20.0)
    assert RadioParams(tx_power=27.0, carrier_frequency=869.525e6).tx_power == 27.0


def test_max_tx_power_bands():
    assert max_tx_power(868.1e6) == 14.0
    assert max_tx_power(869.5e6) == 27.0
    assert max_tx_power(915e6) is None


def test_path_loss_identities():
    model = PathLossModel(ref_loss=100.0, exponent=3.0, ref_distance=50.0)
    assert path_loss(50.0, model) == pytest.approx(100.0)
    assert path_loss(200.0, model) - path_loss(100.0, model) == pytest.approx(30 * math.log10(2))
    with pytest.raises(RadioError):
        path_loss(0.0)


def test_default_link_budget_closes_at_15km_not_30km():
    radio = RadioParams()
    assert rx_power(radio.tx_power, 15_000) >= radio.rx_sensitivity
    assert rx_power(radio.tx_power, 30_000) < radio.rx_sensitivity


def test_propagation_delay():
    assert propagation_delay(0) == 0
    assert propagation_delay(15_000) == 50_035
    assert abs(propagation_delay(15_000) - 15_000 / 299_792_458 * 1e9) < 0.5
    assert abs(propagation_delay(2_000) - 2 * propagation_delay(1_000)) <= 1
    with pytest.raises(RadioError):
        propagation_delay(-1)


def arrival(src, power, start=0, length=100):
    return Arrival(src, start, start + length, power, f"frame-{src}", length)


def test_capture_decisions():
    sens = -124.0
    one = arrival(1, -100)
    assert receive_decision([one], sens) is one
    strong, weak = arrival(1, -80), arrival(2, -90, start=10)
    assert receive_decision([weak, strong], sens) is strong
    assert receive_decision([arrival(3, -130)], sens) is None
    assert receive_decision([], sens) is None


def test_capture_tie_goes_to_lowest_source():
    a, b = arrival(7, -95), arrival(3, -95)
    assert receive_decision([a, b], -124).source == 3
    assert receive_decision([b, a], -124).source == 3


@given(st.lists(st.tuples(st.integers(1, 40), st.sampled_from([-130.0, -110.0, -100.0, -95.0, -80.0])),
                min_size=1, max_size=8), st.randoms())
def test_capture_is_permutation_invariant(specs, rnd):
    arrivals = [arrival(src, p) for src, p in specs]
    first = receive_decision(arrivals, -124.0)
    shuffled = list(arrivals)
    rnd.shuffle(shuffled)
    second = receive_decision(shuffled, -124.0)
    if first is None:
        assert second is None
    else:
        assert (second.source, second.power) == (first.source, first.power)


def test_ledger_energy_examples():
    ledger = EnergyLedger()
    ledger.set_state(RadioState.SLEEP, 0)
    ledger.close(10 * S)
    assert ledger.energy() == pytest.approx(49.5e-6)
    tx = EnergyLedger(state=RadioState.TX)
    tx.close(S)
    assert tx.energy() == pytest.approx(95.7e-3)
    empty = EnergyLedger()
    empty.close(0)
    assert empty.energy() == 0.0


def test_average_power_examples():
    ledger = EnergyLedger()
    ledger.close(3600 * S)
    assert average_power(ledger) == pytest.approx(4.95e-6)
    with pytest.raises(RadioError):
        average_power(EnergyLedger())


def test_average_power_is_scale_invariant():
    def build(scale):
        ledger = EnergyLedger()
        t = 0
        for state, dur in ((RadioState.RX_IDLE, 3), (RadioState.TX, 1), (RadioState.SLEEP, 50), (RadioState.RX, 2)):
            ledger.set_state(state, t)
            t += dur * scale * S
        ledger.close(t)
        return average_power(ledger)

    assert build(2) == pytest.approx(build(1))


def test_ledger_rejects_time_regression_and_overcarving():
    ledger = EnergyLedger()
    ledger.set_state(RadioState.RX, 10)
    with pytest.raises(RadioError):
        ledger.set_state(RadioState.SLEEP, 5)
    with pytest.raises(RadioError):
        ledger.advance(20, {RadioState.TX: 11})


@given(st.lists(st.tuples(st.sampled_from(list(RadioState)), st.integers(0, 10**9)), max_size=30))
def test_ledger_durations_sum_to_elapsed(steps):
    ledger = EnergyLedger()
    t = 0
    for state, dur in steps:
        ledger.set_state(state, t)
        t += dur
    ledger.advance(t + 100, {RadioState.RX_IDLE: 40})
    ledger.close(t + 100)
    assert ledger.elapsed == t + 100
