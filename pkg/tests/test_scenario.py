"""Marking geometry, reference construction, catalog and config files."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from safecut.dynamics import RobotState
from safecut.kinematics import JointConfig, forward_kinematics
from safecut.safety import TumorSpec, barrier_value
from safecut.scenario import (SCENARIO_IDS, MarkingSet, ScenarioSpec,
                              build_reference, generate_marking_points,
                              inject_unsafe_points, load_scenario, parse_config,
                              scenario_catalog, scenario_to_config,
                              spec_from_dict, spec_to_dict)

TUMOR = TumorSpec(center=(0.0, 6.0, 30.0), margin=4.0)


def test_markings_on_margin_circle():
    ms = generate_marking_points(TUMOR, 8, (0, 0, 1))
    assert ms.points.shape == (8, 3)
    radii = np.linalg.norm(ms.points - TUMOR.center, axis=1)
    np.testing.assert_allclose(radii, 4.0, atol=1e-12)
    np.testing.assert_allclose(ms.points[:, 2], 30.0, atol=1e-12)
    assert not ms.unsafe.any()


def test_markings_counterclockwise_from_x():
    ms = generate_marking_points(TUMOR, 8, (0, 0, 1))
    np.testing.assert_allclose(ms.points[0], [4.0, 6.0, 30.0], atol=1e-12)
    rel = ms.points - TUMOR.center
    angles = np.unwrap(np.arctan2(rel[:, 1], rel[:, 0]))
    np.testing.assert_allclose(np.diff(angles), math.pi / 4, atol=1e-12)


def test_marking_plane_normal_parallel_to_x():
    ms = generate_marking_points(TUMOR, 4, (1, 0, 0))
    np.testing.assert_allclose(ms.points[:, 0], 0.0, atol=1e-12)


def test_marking_validation():
    with pytest.raises(ValueError):
        generate_marking_points(TUMOR, 0, (0, 0, 1))
    with pytest.raises(ValueError):
        generate_marking_points(TUMOR, 4, (0, 0, 0))
    with pytest.raises(ValueError):
        MarkingSet(np.zeros((2, 3)), np.zeros(3, dtype=bool))


def test_inject_unsafe_points_radial():
    ms = generate_marking_points(TUMOR, 8, (0, 0, 1))
    out = inject_unsafe_points(ms, [(2, TUMOR, 1.5)])
    assert out.unsafe[2] and out.unsafe.sum() == 1
    assert barrier_value(out.points[2], TUMOR) == pytest.approx(-1.5)
    # untouched points and the original set stay as they were
    np.testing.assert_array_equal(out.points[3], ms.points[3])
    assert not ms.unsafe.any()
    # direction preserved
    rel = out.points[2] - TUMOR.center
    rel0 = ms.points[2] - TUMOR.center
    np.testing.assert_allclose(rel / np.linalg.norm(rel), rel0 / np.linalg.norm(rel0),
                               atol=1e-12)


def test_inject_validation():
    ms = generate_marking_points(TUMOR, 4, (0, 0, 1))
    with pytest.raises(ValueError):
        inject_unsafe_points(ms, [(9, TUMOR, 1.0)])
    with pytest.raises(ValueError):
        inject_unsafe_points(ms, [(0, TUMOR, 0.0)])
    with pytest.raises(ValueError):
        inject_unsafe_points(ms, [(0, TUMOR, 4.0)])


def test_reference_constant_speed():
    ms = generate_marking_points(TUMOR, 8, (0, 0, 1))
    ref = build_reference([ms], speed=2.0, dt=1e-3, approach_from=(0.0, 0.0, 43.0))
    steps = np.linalg.norm(np.diff(ref.pos, axis=0), axis=1)
    # arc length advances by speed * dt every step; the Euclidean chord only
    # falls short on the 8 corner-straddling steps and the final one
    assert np.all(steps <= 2e-3 + 1e-12)
    assert int((steps < 2e-3 - 1e-9).sum()) <= 9
    np.testing.assert_allclose(np.linalg.norm(ref.vel, axis=1), 2.0, atol=1e-9)
    np.testing.assert_allclose(ref.pos[0], [0.0, 0.0, 43.0], atol=1e-12)
    np.testing.assert_allclose(ref.pos[-1], ms.points[0], atol=1e-9)


def test_reference_closes_each_loop():
    ms = generate_marking_points(TUMOR, 8, (0, 0, 1))
    ref = build_reference([ms], speed=2.0, dt=1e-3, approach_from=(0.0, 0.0, 43.0))
    approach = float(np.linalg.norm(ms.points[0] - np.array([0.0, 0.0, 43.0])))
    loop = 8 * float(np.linalg.norm(ms.points[1] - ms.points[0]))
    assert ref.duration * 2.0 == pytest.approx(approach + loop, abs=2e-3 * 2.0)


def test_reference_sample_clamps_past_end():
    ms = generate_marking_points(TUMOR, 4, (0, 0, 1))
    ref = build_reference([ms], speed=2.0, dt=1e-3, approach_from=(0.0, 0.0, 43.0))
    pos, vel = ref.sample(ref.duration + 5.0)
    np.testing.assert_array_equal(pos, ref.pos[-1])
    np.testing.assert_array_equal(vel, np.zeros(3))
    pos0, vel0 = ref.sample(0.0)
    np.testing.assert_array_equal(pos0, ref.pos[0])
    assert np.linalg.norm(vel0) == pytest.approx(2.0)


def test_catalog_ids_and_geometry():
    for sid in SCENARIO_IDS:
        spec = scenario_catalog(sid)
        assert spec.scenario_id == sid
        spec.validate()
    with pytest.raises(ValueError):
        scenario_catalog(7)
    s2 = scenario_catalog(2)
    # the preserved tumor's intruded point sits 1.5 mm deep on the y axis
    bad = s2.markings[0].points[6]
    np.testing.assert_allclose(bad, [0.0, -3.5, 30.0], atol=1e-9)
    s4 = scenario_catalog(4)
    assert s4.filter.activation_gate and s4.filter.alpha == 1.5
    assert s4.shells[0].outer_radius == 7.0


def test_catalog_initial_tip_positions():
    for sid in (1, 2, 3):
        spec = scenario_catalog(sid)
        tip = forward_kinematics(spec.initial.q, spec.kinematics)
        np.testing.assert_allclose(tip, [0.0, 0.0, 43.0], atol=1e-12)
    s4 = scenario_catalog(4)
    tip = forward_kinematics(s4.initial.q, s4.kinematics)
    np.testing.assert_allclose(tip, [0.0, 0.0, 36.7], atol=1e-12)
    # outside the depth shell, so the gate starts disengaged
    assert np.linalg.norm(tip - s4.shells[0].center) > s4.shells[0].outer_radius


def test_validate_rejects_bad_geometry():
    spec = scenario_catalog(1)
    # bend the tip onto the tumor centre: y = -l_end sin(theta3), z via d1
    theta3 = math.asin(-6.0 / 17.0)
    d1 = 30.0 - 3.0 - (10.0 + 17.0 * math.cos(theta3))
    inside = replace(spec, initial=RobotState(JointConfig(d1, 0.0, theta3), np.zeros(3)))
    tip = forward_kinematics(inside.initial.q, inside.kinematics)
    assert barrier_value(tip, spec.tumors[0]) < 0.0
    with pytest.raises(ValueError):
        inside.validate()
    off_margin = replace(spec, markings=[MarkingSet(spec.markings[0].points + 0.5,
                                                    spec.markings[0].unsafe)])
    with pytest.raises(ValueError):
        off_margin.validate()


def test_duration_override():
    spec = scenario_catalog(1)
    assert spec.run_duration() == pytest.approx(spec.reference().duration + spec.settle)
    fixed = replace(spec, duration=3.0)
    assert fixed.run_duration() == 3.0


def test_config_round_trip():
    for sid in SCENARIO_IDS:
        spec = scenario_catalog(sid)
        text = scenario_to_config(spec)
        back = load_scenario(text)
        assert spec_to_dict(back) == spec_to_dict(spec)


def test_config_override_merges_onto_catalog():
    text = "scenario_id = 1\nfilter.alpha = 0.9\nspeed = 3.5\n"
    spec = load_scenario(text)
    assert spec.filter.alpha == 0.9
    assert spec.speed == 3.5
    base = scenario_catalog(1)
    np.testing.assert_array_equal(spec.markings[0].points, base.markings[0].points)


def test_config_base_id_argument():
    spec = load_scenario("filter.alpha = 0.7\n", base_id=2)
    assert spec.scenario_id == 2 and spec.filter.alpha == 0.7
    with pytest.raises(ValueError):
        load_scenario("filter.alpha = 0.7\n")


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        load_scenario("scenario_id = 1\nfilter.beta = 2\n")


def test_parse_config_comments_and_blanks():
    d = parse_config("# comment\n\nspeed = 2.5\n dt = 0.002 # trailing\n")
    assert d == {"speed": "2.5", "dt": "0.002"}


def test_spec_dict_round_trip_preserves_auto_duration():
    spec = scenario_catalog(1)
    d = spec_to_dict(spec)
    assert d["duration"] == "auto"
    back = spec_from_dict(d)
    assert back.duration is None
