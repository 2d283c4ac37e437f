import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blecollab import AnchorSet, DeviceProfile, Point2D, ScenarioError
from blecollab.rss_model import LdplParams, ldpl_distance
from blecollab.simulator import (
    OFFICE_ANCHORS,
    OFFICE_DEVICE_RSS_1M,
    ChannelModel,
    Obstacle,
    Scenario,
    generate_log,
    link_mean_rss,
    load_scenario,
    obstacle_loss,
    office_scenario,
    register_device,
    registered_profiles,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    segments_intersect,
)


def _pair(d=10.0, obstacles=(), sigma=0.0, duration=60.0, seed=0):
    """One anchor and one receiving device, d meters apart."""
    return Scenario(
        area=(30.0, 10.0),
        anchors=AnchorSet.from_coords([("B1", 1.0, 5.0)]),
        devices=(DeviceProfile("D1", -68.88, Point2D(1.0 + d, 5.0)),),
        obstacles=obstacles,
        channel=ChannelModel(shadowing_sigma=sigma),
        device_tx_period=0.1,
        duration=duration,
        seed=seed,
    )


def test_office_tables():
    s = office_scenario(1)
    assert s.truth()["D1"] == Point2D(5.05, 3.7)
    assert s.anchors.get("B7").position == Point2D(16.65, 10.65)
    assert office_scenario(4).truth()["D5"] == Point2D(12.75, 6.1)
    assert s.area == (16.7, 10.8)
    assert [d.rss_at_1m for d in s.devices] == [-68.88, -74.75, -62.39, -62.99, -78.79]
    for c in range(1, 8):
        assert len(office_scenario(c).devices) == 5
    with pytest.raises(ScenarioError):
        office_scenario(8)


def test_noise_free_link_value():
    log = generate_log(_pair())
    assert len(log) == 240
    assert np.all(log.rss == pytest.approx(-89.88, abs=1e-12))


def test_obstacle_attenuation_additive():
    wall = Obstacle(Point2D(6.0, 0.0), Point2D(6.0, 10.0), 6.0)
    log = generate_log(_pair(obstacles=(wall,)))
    assert np.all(log.rss == pytest.approx(-95.88, abs=1e-12))
    two = (wall, Obstacle(Point2D(8.0, 0.0), Point2D(8.0, 10.0), 2.5))
    assert link_mean_rss(_pair(obstacles=two), "B1", _pair().devices[0]) == pytest.approx(-98.38)


def test_sample_counts_follow_periods():
    s = office_scenario(1, duration=60.0)
    log = generate_log(s)
    per_rx = 7 * 240 + 4 * 600
    assert len(log) == 5 * per_rx
    assert np.all(np.diff(log.t) >= 0)


def test_determinism():
    s = office_scenario(3, shadowing_sigma=4.0, duration=20.0, seed=11)
    a, b = generate_log(s), generate_log(s)
    assert np.array_equal(a.t, b.t) and np.array_equal(a.rss, b.rss) and np.array_equal(a.tx_codes, b.tx_codes)
    c = generate_log(s, seed=12)
    assert not np.array_equal(a.rss, c.rss)


def test_zero_noise_log_inverts_to_true_distances():
    s = office_scenario(2, duration=10.0)
    log = generate_log(s)
    truth = s.truth()
    pos = {a.id: a.position for a in s.anchors} | truth
    profiles = {d.id: d for d in s.devices}
    for t, r, x, v in zip(log.t, log.rx_codes, log.tx_codes, log.rss):
        rx, tx = log.ids[r], log.ids[x]
        d_true = math.dist((pos[rx].x, pos[rx].y), (pos[tx].x, pos[tx].y))
        assert abs(ldpl_distance(LdplParams(profiles[rx].rss_at_1m), v) - d_true) < 1e-9 * max(1.0, d_true)


def test_empirical_shadowing_sigma():
    log = generate_log(_pair(sigma=4.0, duration=3000.0, seed=5))
    assert len(log) >= 10_000
    assert abs(np.std(log.rss, ddof=1) - 4.0) < 0.4


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 20), st.floats(0, 10), st.floats(0, 20), st.floats(0, 10), st.floats(0, 20))
def test_obstacle_never_raises_rss(x1, y1, x2, y2, att):
    s = _pair()
    before = link_mean_rss(s, "B1", s.devices[0])
    obs = (Obstacle(Point2D(x1, y1), Point2D(x2, y2), att),)
    assert link_mean_rss(_pair(obstacles=obs), "B1", s.devices[0]) <= before


def test_segments_intersect_cases():
    f = lambda *p: bool(segments_intersect(*[np.array(q, dtype=float) for q in p])[0])  # noqa: E731
    assert f((0, 0), (2, 2), (0, 2), (2, 0))
    assert not f((0, 0), (1, 1), (2, 0), (3, 1))
    assert f((0, 0), (2, 0), (1, 0), (3, 0))  # collinear overlap
    assert f((0, 0), (2, 0), (2, 0), (2, 5))  # touching endpoint
    assert obstacle_loss(Point2D(0, 0), Point2D(4, 0), [Obstacle(Point2D(1, -1), Point2D(1, 1), 3.0)]) == 3.0


def test_registration_noise_free():
    s = office_scenario(1)
    assert register_device(s, "D1") == -68.88


def test_registration_standard_error():
    s = office_scenario(1, shadowing_sigma=2.0)
    for dev in s.devices:
        assert abs(register_device(s, dev, n=100) - dev.rss_at_1m) <= 0.6
    vals = [register_device(s, "D1", n=100, seed=k) for k in range(400)]
    assert np.mean(np.abs(np.array(vals) + 68.88) <= 0.6) > 0.99


def test_registered_profiles_heterogeneous():
    profiles = registered_profiles(office_scenario(1, shadowing_sigma=2.0))
    assert len({round(p.rss_at_1m, 6) for p in profiles.values()}) == 5
    assert profiles["D1"].true_position == Point2D(5.05, 3.7)


def test_scenario_validation():
    with pytest.raises(ScenarioError, match="outside"):
        Scenario((5.0, 5.0), AnchorSet.from_coords([("B1", 9, 9)]), ())
    with pytest.raises(ScenarioError, match="coincide"):
        Scenario((5.0, 5.0), AnchorSet.from_coords([("B1", 1, 1)]), (DeviceProfile("D1", -70, Point2D(1, 1)),))
    with pytest.raises(ValueError):
        Obstacle(Point2D(0, 0), Point2D(1, 1), -1.0)


def test_scenario_file_round_trip(tmp_path):
    s = office_scenario(5, shadowing_sigma=4.0, duration=30.0, seed=9)
    path = tmp_path / "s.json"
    save_scenario(s, path)
    back = load_scenario(path)
    assert scenario_to_dict(back) == scenario_to_dict(s)
    assert np.array_equal(generate_log(back).rss, generate_log(s).rss)


def test_scenario_errors_name_field():
    doc = scenario_to_dict(office_scenario(1))
    doc["devices"][2]["x"] = "left"
    with pytest.raises(ScenarioError, match=r"devices\[2\]\.x"):
        scenario_from_dict(doc)
    doc = scenario_to_dict(office_scenario(1))
    del doc["anchors"][0]["y"]
    with pytest.raises(ScenarioError, match=r"anchors\[0\]\.y"):
        scenario_from_dict(doc)
