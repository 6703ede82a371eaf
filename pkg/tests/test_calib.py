import warnings

import numpy as np
import pytest

from freightmech.calib import (
    CSV_COLUMNS, CalibOptions, CalibrationError, CalibrationWarning, LaneRecord, average_cost,
    back_solve_arrivals, calibrate, daily_demand, load_lane_csv, sample_network, travel_periods,
)
from freightmech.fluid import solve_fa
from freightmech.net import Network, Uniform

OPTS = CalibOptions()


def rec(o="A", d="B", tons=146000.0, miles=500.0, ro=3.10, rd=2.94):
    return LaneRecord(o, d, tons, miles, ro, rd)


def write_csv(path, rows, header=CSV_COLUMNS):
    path.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    return path


def test_daily_demand_example():
    assert daily_demand(rec(tons=146000), 0.01, OPTS) == pytest.approx(0.2, rel=1e-12)


@pytest.mark.parametrize("miles, tau", [(1200, 3), (500, 1), (501, 2), (100, 1), (1000, 2)])
def test_travel_periods(miles, tau):
    assert travel_periods(rec(miles=miles), OPTS) == tau


def test_average_cost_example():
    assert average_cost(rec(miles=500, ro=3.10, rd=2.94), OPTS) == pytest.approx(3.02 * 500 / 1.1)
    assert average_cost(rec(miles=500, ro=3.10, rd=2.94), OPTS) == pytest.approx(1372.7, abs=0.05)


def test_record_validation():
    with pytest.raises(CalibrationError, match="average_miles"):
        rec(miles=-5)
    with pytest.raises(CalibrationError, match="origin_rate"):
        rec(ro=0.0)
    with pytest.raises(CalibrationError, match="annual_tons"):
        rec(tons=float("inf"))


def test_load_csv(tmp_path):
    rows = [("A", "B", 1e6, 600, 3.0, 2.9), ("B", "A", 2e6, 600, 2.9, 3.0), ("A", "A", 5e5, 120, 3.0, 3.0)]
    recs = load_lane_csv(write_csv(tmp_path / "ok.csv", rows))
    assert len(recs) == 3 and recs[1].origin == "B" and recs[2].average_miles == 120


def test_load_csv_negative_miles_names_line(tmp_path):
    rows = [("A", "B", 1e6, 600, 3.0, 2.9), ("B", "A", 2e6, -600, 2.9, 3.0)]
    with pytest.raises(CalibrationError, match="line 3"):
        load_lane_csv(write_csv(tmp_path / "bad.csv", rows))


def test_load_csv_non_numeric(tmp_path):
    with pytest.raises(CalibrationError, match="line 2"):
        load_lane_csv(write_csv(tmp_path / "bad.csv", [("A", "B", "lots", 600, 3.0, 2.9)]))


def test_load_csv_missing_column(tmp_path):
    with pytest.raises(CalibrationError, match="destination_rate"):
        load_lane_csv(write_csv(tmp_path / "bad.csv", [], header=CSV_COLUMNS[:-1]))


def test_load_csv_header_only(tmp_path):
    assert load_lane_csv(write_csv(tmp_path / "empty.csv", [])) == []


def test_calibrate_empty_after_filter():
    with pytest.raises(CalibrationError, match="minimum-demand"):
        calibrate([rec(tons=1000)], 0.01)
    with pytest.raises(CalibrationError):
        calibrate([], 0.01)


def test_calibrate_rejects_bad_share():
    with pytest.raises(CalibrationError):
        calibrate([rec()], 0.0)
    with pytest.raises(CalibrationError):
        calibrate([rec()], 1.5)


def test_min_demand_boundary_is_kept():
    net = calibrate([rec(tons=146000), rec("B", "A", tons=145000)], 0.01)
    assert net.n_lanes == 1 and net.lanes[0].demand.rate == pytest.approx(0.2)


def test_lane_parameters():
    net = calibrate([rec(tons=1e7, miles=1200)], 0.01)
    lane = net.lanes[0]
    p = 3.02 * 1200 / 1.1
    assert lane.travel_time == 3
    assert lane.penalty == pytest.approx(2 * p)
    assert lane.cost == Uniform(0.5 * p, 1.5 * p)
    assert lane.demand.price == pytest.approx(2 * p)


def test_stay_probability_split_by_demand():
    recs = [rec("A", "B", tons=3e6), rec("A", "C", tons=1e6), rec("B", "A", tons=2e6), rec("C", "A", tons=2e6)]
    net = calibrate(recs, 0.01)
    q = {net.lane_key(k): l.stay_prob for k, l in enumerate(net.lanes)}
    assert q["A->B"] == pytest.approx(0.15) and q["A->C"] == pytest.approx(0.05)
    assert q["B->A"] == pytest.approx(0.2) and q["C->A"] == pytest.approx(0.2)


def test_flow_balance_before_clamping():
    net = sample_network()
    ybar = 0.9 * np.array([l.demand.rate for l in net.lanes])
    lam_bar = ybar / 0.5
    resid = net.arrival_rate + net.retention @ ybar - lam_bar
    assert np.max(np.abs(resid)) <= 1e-9 * max(1.0, lam_bar.max())


def test_back_solve_matches_hand_computation():
    # Two-node loop A->B, B->A with d = (2, 1) and full stay mass on one lane each.
    lam = back_solve_arrivals(np.array([0, 1]), np.array([1, 0]), np.array([2.0, 1.0]),
                              np.array([0.2, 0.2]), OPTS)
    # lam_bar = 0.9 d / 0.5 = (3.6, 1.8); inflow to A is 0.9, to B is 1.8.
    np.testing.assert_allclose(lam, [3.6 - 0.2 * 0.9, 1.8 - 0.2 * 1.8])


def test_share_doubling():
    a, b = sample_network(0.02), sample_network(0.04)
    assert a.n_lanes == b.n_lanes
    for la, lb in zip(a.lanes, b.lanes):
        assert lb.demand.rate == pytest.approx(2 * la.demand.rate, rel=1e-12)
        assert lb.arrival_rate == pytest.approx(2 * la.arrival_rate, rel=1e-12)
        assert (lb.travel_time, lb.cost, lb.penalty) == (la.travel_time, la.cost, la.penalty)
        assert lb.stay_prob == pytest.approx(la.stay_prob, rel=1e-12)


def test_clamp_warns():
    # Heavy inflow into A with a light outbound lane drives the back-solved rate negative.
    recs = [rec("B", "A", tons=5e7), rec("A", "B", tons=2e5), rec("A", "A", tons=1e7)]
    opts = CalibOptions(stay_prob=0.9)
    with pytest.warns(CalibrationWarning, match="A->"):
        net = calibrate(recs, 0.01, opts)
    assert min(l.arrival_rate for l in net.lanes) == opts.lambda_floor


def test_sample_network_is_valid():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        net = sample_network()
    assert isinstance(net, Network) and net.n_nodes == 5 and net.n_lanes == 21
    assert np.all(net.retention.sum(axis=0) < 1)
    again = Network.from_dict(net.to_dict())
    assert again == net
    assert solve_fa(net).kkt_residual <= 1e-6


def test_options_from_dict():
    assert CalibOptions.from_dict({"stay_prob": 0.1}).stay_prob == 0.1
    with pytest.raises(CalibrationError, match="colour"):
        CalibOptions.from_dict({"colour": 1})
    with pytest.raises(CalibrationError):
        CalibOptions(stay_prob=1.0)
