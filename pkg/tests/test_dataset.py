from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from combilearn.dataset import (DemoSet, GoalRelabeler, NoiseProfile, PairBuilder, generate_demo,
                                generate_demoset, load_trajectory, load_triplets, pairs_bc,
                                relabel_flat, relabel_hierarchical, save_trajectory, save_triplets,
                                window_sizes)
from combilearn.domain import Trajectory, seeded_rng
from combilearn.env import goal_reached
from support import enumerate_triplets


def as_multiset(p, pl, ph):
    return Counter(zip(map(tuple, p), map(tuple, pl), map(tuple, ph)))


def test_three_pose_hand_trace():
    poses = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    p, pl, ph = relabel_hierarchical(poses, 2, 1)
    got = sorted(zip(p[:, 0], pl[:, 0], ph[:, 0]))
    assert got == [(0, 1, 1), (0, 1, 2), (1, 2, 2)]


def test_length_eleven_count():
    poses = np.random.default_rng(0).normal(size=(11, 3))
    for w_m in range(1, 9):
        assert len(relabel_hierarchical(poses, 8, w_m)[0]) == 52


def test_equal_windows_reduce_to_flat():
    poses = np.random.default_rng(1).normal(size=(15, 3))
    p, pl, ph = relabel_hierarchical(poses, 6, 6)
    assert np.array_equal(pl, ph)
    fp, fl, fh = relabel_flat(poses, 6)
    assert np.array_equal(p, fp) and np.array_equal(pl, fl) and np.array_equal(ph, fh)


def test_single_pose_gives_nothing():
    p, pl, ph = relabel_hierarchical(np.zeros((1, 3)), 3, 1)
    assert len(p) == len(pl) == len(ph) == 0


def test_flat_hand_enumeration():
    poses = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    p, pl, ph = relabel_flat(poses, 1)
    assert list(zip(p[:, 0], pl[:, 0], ph[:, 0])) == [(0, 1, 1), (1, 2, 2)]
    assert len(relabel_flat(np.zeros((1, 3)), 3)[0]) == 0


def test_window_order_rejected():
    with pytest.raises(ValueError):
        relabel_hierarchical(np.zeros((5, 3)), 2, 3)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 50), st.data())
def test_relabel_matches_reference_enumeration(length, data):
    w_s = data.draw(st.integers(1, max(1, length - 1)))
    w_m = data.draw(st.integers(1, w_s))
    poses = np.random.default_rng(length * 1000 + w_s).normal(size=(length, 3))
    got = as_multiset(*relabel_hierarchical(poses, w_s, w_m))
    assert got == Counter(enumerate_triplets(poses, w_s, w_m))
    skip = as_multiset(*relabel_hierarchical(poses, w_s, w_m, first=1))
    assert skip == Counter(enumerate_triplets(poses, w_s, w_m, skip_first=True))


@given(st.integers(2, 40), st.integers(1, 30))
def test_count_monotone_in_skill_window(length, w_s):
    poses = np.zeros((length, 3))
    a = len(relabel_hierarchical(poses, w_s, 1)[0])
    b = len(relabel_hierarchical(poses, w_s + 1, 1)[0])
    assert b >= a
    assert len(relabel_flat(poses, w_s)[0]) == len(relabel_hierarchical(poses, w_s, 1)[0])


@given(st.integers(2, 40), st.data())
def test_goal_lies_within_window_after_state(length, data):
    w_s = data.draw(st.integers(1, length))
    w_m = data.draw(st.integers(1, w_s))
    poses = np.arange(length, dtype=float)[:, None] * np.ones(3)
    p, pl, ph = relabel_hierarchical(poses, w_s, w_m)
    assert np.all((ph[:, 0] - p[:, 0] >= 1) & (ph[:, 0] - p[:, 0] <= w_s))
    assert np.all((pl[:, 0] <= ph[:, 0]) & (pl[:, 0] > p[:, 0]))


def test_pairs():
    poses = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    a, b = pairs_bc(poses)
    assert a[:, 0].tolist() == [0, 1] and b[:, 0].tolist() == [1, 2]
    assert len(pairs_bc(np.zeros((7, 3)))[0]) == 6


@pytest.mark.parametrize("length, expected", [(101, (85, 30)), (2, (1, 1)), (11, (9, 3))])
def test_window_sizes(length, expected):
    assert window_sizes(length, 0.85, 0.30) == expected


def test_window_fraction_order():
    with pytest.raises(ValueError):
        window_sizes(10, 0.3, 0.5)


def test_relabeler_modes():
    trajs = [np.random.default_rng(i).normal(size=(12 + i, 3)) for i in range(3)]
    X, y, g = GoalRelabeler(mode="hierarchical").fit(trajs).transform(trajs)
    assert X.shape[1] == 6 and y.shape[1] == 3
    assert sorted(set(g.tolist())) == [0, 1, 2]
    Xf, yf, _ = GoalRelabeler(mode="flat").fit(trajs).transform(trajs)
    assert np.array_equal(yf, Xf[:, 3:])
    Xn, yn, _ = GoalRelabeler(mode="next").fit(trajs).transform(trajs)
    # sub-goal is always the pose right after the state
    for (row, label) in zip(Xn[:5], yn[:5]):
        i = int(np.flatnonzero(np.all(trajs[0] == row[:3], axis=1))[0])
        assert np.array_equal(label, trajs[0][i + 1])
    with pytest.raises(ValueError):
        GoalRelabeler(mode="bogus").fit(trajs)


def test_pair_builder_has_no_goal_column():
    trajs = [np.zeros((5, 3)), np.ones((4, 3))]
    X, y, g = PairBuilder().fit(trajs).transform(trajs)
    assert X.shape == (7, 3) and y.shape == (7, 3)


def test_zero_noise_demo_is_nominal(l_geometry):
    a = generate_demo(l_geometry, seeded_rng(0), NoiseProfile.none())
    b = generate_demo(l_geometry, seeded_rng(99), NoiseProfile.none())
    assert np.array_equal(a.poses, b.poses)
    assert np.allclose(a.poses[0], l_geometry.start.as_array())
    assert np.allclose(a.poses[-1], l_geometry.goal.as_array(), atol=1e-12)


@pytest.mark.parametrize("name", ["l-insertion", "friction-channel"])
def test_generated_demos_contract(name, cfg):
    from combilearn.geometry import bundled_geometry

    g = bundled_geometry(name)
    ds = generate_demoset(g, seeded_rng(0))
    assert len(ds.train) == 8 and len(ds.validation) == 2
    lengths = np.array([len(t) for t in ds.trajectories])
    assert np.all(np.abs(lengths / lengths.mean() - 1.0) <= 0.2)
    for t in ds.trajectories:
        assert goal_reached(t.poses[-1], g, cfg.goal_tolerance)
    again = generate_demoset(g, seeded_rng(0))
    assert all(np.array_equal(a.poses, b.poses) for a, b in zip(ds.trajectories, again.trajectories))


def test_demoset_files_round_trip(tmp_path, demos):
    demos.save(tmp_path)
    back = DemoSet.load(tmp_path)
    assert back.split == demos.split
    for a, b in zip(back.trajectories, demos.trajectories):
        assert a.dt == b.dt and np.array_equal(a.poses, b.poses)


def test_trajectory_file_format(tmp_path):
    t = Trajectory(0.05, np.array([[0.0, 0.1, 0.2], [0.3, 0.4, 0.5]]))
    save_trajectory(t, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# dt=0.05" and lines[1] == "t,x,z,theta"
    assert np.array_equal(load_trajectory(tmp_path / "t.csv").poses, t.poses)


def test_triplet_file_round_trip(tmp_path):
    poses = np.random.default_rng(3).normal(size=(9, 3))
    p, pl, ph = relabel_hierarchical(poses, 4, 2)
    ids = np.zeros(len(p), int)
    save_triplets(tmp_path / "x.csv", p, pl, ph, ids)
    header = (tmp_path / "x.csv").read_text().splitlines()[0]
    assert header == "traj_id,px,pz,ptheta,lx,lz,ltheta,hx,hz,htheta"
    a, b, c, i = load_triplets(tmp_path / "x.csv")
    assert np.array_equal(a, p) and np.array_equal(b, pl) and np.array_equal(c, ph)
    assert np.array_equal(i, ids)


def test_demoset_split_validation():
    t = Trajectory(0.05, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        DemoSet([t, t], ["train"])
    with pytest.raises(ValueError):
        DemoSet([t], ["test"])
