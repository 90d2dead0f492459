import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from combilearn.domain import (ExperimentConfig, Pose, Trajectory, normalize_angle, pose_delta,
                               rng_from_state, rng_state, seeded_rng, wrap_angles)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_normalize_angle_fixed_points():
    assert normalize_angle(0.0) == 0.0
    assert normalize_angle(-math.pi / 4) == -math.pi / 4
    # half-open interval: the boundary lands on -pi
    assert normalize_angle(3 * math.pi) == -math.pi
    assert normalize_angle(math.pi) == -math.pi


@pytest.mark.parametrize("bad", [math.inf, -math.inf, math.nan])
def test_normalize_angle_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        normalize_angle(bad)


@given(finite)
def test_normalize_angle_range_congruence_idempotence(theta):
    w = normalize_angle(theta)
    assert -math.pi <= w < math.pi
    k = (theta - w) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-6
    assert normalize_angle(w) == w


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=20))
def test_wrap_angles_agrees_with_scalar_form(values):
    out = wrap_angles(np.array(values))
    for v, o in zip(values, out):
        ref = normalize_angle(v)
        assert abs(math.remainder(o - ref, 2 * math.pi)) < 1e-9


def test_pose_delta_examples():
    assert pose_delta((1, 2, 0.3), (1, 2, 0.3)) == (0.0, 0.0, 0.0)
    d = pose_delta((0, 0, math.pi - 0.1), (0, 0, -math.pi + 0.1))
    assert d.x == 0 and d.z == 0 and d.theta == pytest.approx(0.2)
    assert pose_delta((1, 2, 0), (1.5, 2, 0)) == pytest.approx((0.5, 0.0, 0.0))


@given(st.tuples(finite, finite, finite), st.tuples(finite, finite, finite))
def test_pose_delta_antisymmetric_in_position(a, b):
    ab, ba = pose_delta(a, b), pose_delta(b, a)
    assert ab.x == -ba.x and ab.z == -ba.z


def test_pose_make_validates_and_wraps():
    assert Pose.make(0, 0, 3 * math.pi).theta == -math.pi
    with pytest.raises(ValueError):
        Pose.make(math.nan, 0, 0)


def test_trajectory_contract():
    with pytest.raises(ValueError):
        Trajectory(0.05, np.zeros((1, 3)))
    with pytest.raises(ValueError):
        Trajectory(0.0, np.zeros((3, 3)))
    assert len(Trajectory(0.05, np.zeros((4, 3)))) == 4


def test_seeded_rng_streams():
    a = seeded_rng(0).random(100)
    assert np.array_equal(a, seeded_rng(0).random(100))
    assert not np.array_equal(a, seeded_rng(1).random(100))


def test_rng_state_round_trip_through_json():
    rng = seeded_rng(7)
    rng.random(13)
    saved = json.loads(json.dumps(rng_state(rng)))
    expected = rng.random(50)
    assert np.array_equal(rng_from_state(saved).random(50), expected)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(seed=3, env_variant="friction-channel", action_variant="PL-12")
    cfg.to_json(tmp_path / "c.json")
    back = ExperimentConfig.from_json(tmp_path / "c.json")
    assert back == cfg
    assert back.to_dict() == cfg.to_dict()


def test_config_rejects_unknown_keys():
    data = ExperimentConfig().to_dict()
    data["sede"] = 1
    with pytest.raises(ValueError, match="sede"):
        ExperimentConfig.from_dict(data)
    data = ExperimentConfig().to_dict()
    data["sac"]["discont"] = 0.9
    with pytest.raises(ValueError, match="discont"):
        ExperimentConfig.from_dict(data)


@pytest.mark.parametrize("changes", [
    {"episode_cap": 0},
    {"control_hz": 0.0},
    {"ws_frac": 0.2, "wm_frac": 0.3},
    {"subgoal_period": 0},
    {"kp_p_bounds": [0.0, 10.0]},
    {"kp_f_bounds": [1.0, 0.5]},
    {"env_variant": "hdmi"},
])
def test_config_invariants(changes):
    with pytest.raises(ValueError):
        ExperimentConfig(**changes)


def test_reference_wrench_defaults():
    assert np.array_equal(ExperimentConfig().reference_wrench(), np.zeros(3))
    ch = ExperimentConfig(env_variant="friction-channel").reference_wrench()
    assert np.array_equal(ch, [0.0, -10.0, 0.0])
