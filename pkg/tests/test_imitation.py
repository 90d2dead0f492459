import numpy as np
import pytest
from sklearn.base import clone

from combilearn.domain import ImitationConfig, Trajectory
from combilearn.env import PlanarInsertionEnv
from combilearn.imitation import (SkillPolicy, SubGoalScheduler, build_dataset, infer_subgoal,
                                  query_period, rollout_motion, schedule_step, train_baseline,
                                  train_policy, train_skill)

SMALL = ImitationConfig(hidden=[32, 32], dropout=0.0, max_steps=300, max_epochs=6)


def line(n=30, start=(0.0, 0.06, 0.0), end=(0.0, 0.02, 0.0)):
    return Trajectory(0.05, np.linspace(start, end, n))


def test_triplet_sets_are_deterministic():
    trajs = [line(), line(25)]
    X1, y1 = build_dataset("hgcil", trajs)
    X2, y2 = build_dataset("hgcil", trajs)
    assert np.array_equal(X1, X2) and np.array_equal(y1, y2)
    assert build_dataset("bc", trajs)[0].shape[1] == 3
    with pytest.raises(ValueError):
        build_dataset("dagger", trajs)


def test_training_is_reproducible():
    a = train_skill([line()], cfg=SMALL, random_state=3)
    b = train_skill([line()], cfg=SMALL, random_state=3)
    x = np.array([[0.0, 0.05, 0.0, 0.0, 0.02, 0.0]])
    assert np.array_equal(a.predict(x), b.predict(x))
    assert a.train_loss_ == b.train_loss_


def test_input_checks():
    pol = SkillPolicy(kind="hgcil")
    with pytest.raises(ValueError):
        pol.fit(np.zeros((4, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        pol.fit(np.zeros((4, 6)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        pol.fit(np.zeros((0, 6)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        SkillPolicy(kind="dagger").fit(np.zeros((4, 6)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        train_policy("hgcil", [])
    with pytest.raises(ValueError):
        train_baseline("hgcil", [line()])


def test_estimator_params_clone():
    pol = SkillPolicy(kind="bc", hidden=(8,), max_steps=10)
    twin = clone(pol)
    assert twin.get_params() == pol.get_params()
    assert not hasattr(twin, "net_")


def test_bc_learns_a_straight_descent():
    pol = train_baseline("bc", [line(40)], cfg=ImitationConfig(hidden=[64, 64], dropout=0.0,
                                                              max_steps=3000, max_epochs=60,
                                                              patience=60))
    traj = line(40).poses
    pred = pol.predict(traj[:-1])
    assert np.max(np.abs(pred - traj[1:])) < 5e-4


def test_predictions_clamped_to_workspace(l_geometry):
    ws = np.asarray(l_geometry.workspace)
    pol = train_skill([line()], cfg=SMALL, workspace=ws)
    far = np.array([[10.0, 10.0, 3.0, 10.0, 10.0, 3.0]])
    out = pol.predict(far)
    assert np.all(out >= ws[:, 0]) and np.all(out <= ws[:, 1])
    assert np.all(pol.validation_mse(far, out) >= 0)


def test_save_load_round_trip(tmp_path, l_geometry):
    pol = train_skill([line()], [line(20)], cfg=SMALL, workspace=np.asarray(l_geometry.workspace))
    pol.save(tmp_path / "p.npz")
    back = SkillPolicy.load(tmp_path / "p.npz", expect_kind="hgcil")
    x = np.random.default_rng(0).normal(scale=0.02, size=(10, 6))
    assert np.array_equal(back.predict(x), pol.predict(x))
    a, b = back.get_params(), pol.get_params()
    assert np.array_equal(a.pop("workspace"), b.pop("workspace"))
    assert a == b
    with pytest.raises(ValueError):
        SkillPolicy.load(tmp_path / "p.npz", expect_kind="bc")


def test_scheduler_holds_between_refreshes():
    calls = []

    class Counting:
        kind = "bc"

        def predict(self, X):
            calls.append(1)
            return np.atleast_2d(X)[:, :3] + 1.0

    sched = SubGoalScheduler(50)
    for k in range(50):
        sched, _ = schedule_step(sched, Counting(), np.full(3, float(k)), None)
    assert len(calls) == 1 and sched.refreshes == [0]
    sched, _ = schedule_step(sched, Counting(), np.zeros(3), None)
    assert sched.refreshes == [0, 50]
    every = SubGoalScheduler(1)
    for k in range(7):
        every, _ = schedule_step(every, Counting(), np.zeros(3), None)
    assert every.refreshes == list(range(7))
    every.reset()
    assert every.steps == 0 and every.subgoal is None and every.refreshes == []
    with pytest.raises(ValueError):
        SubGoalScheduler(0)


def test_query_periods():
    assert query_period("hgcil") == 50
    assert query_period("gcbc-flat") == 1 and query_period("bc") == 1


def test_goal_pose_is_required_for_goal_conditioned_policies():
    pol = train_skill([line()], cfg=SMALL)
    with pytest.raises(ValueError):
        infer_subgoal(pol, np.zeros(3))


def test_trained_skill_holds_at_goal(il_policies, l_geometry):
    goal = l_geometry.goal.as_array()
    out = infer_subgoal(il_policies["hgcil"], goal, goal)
    # at the goal the proposed sub-goal stays within a few millimetres of it
    assert np.all(np.abs(out[:2] - goal[:2]) < 0.003)
    assert abs(out[2] - goal[2]) < np.radians(3.0)


def test_rollout_refresh_pattern(il_policies, cfg):
    env = PlanarInsertionEnv("l-insertion", cfg, collisions=False)
    env.reset(perturb=False)
    res = rollout_motion(env, il_policies["hgcil"], max_steps=120)
    assert res.refreshes == [k for k in range(0, res.steps, 50)]
    assert res.max_wrench == 0.0
    assert len(res.poses) == len(res.subgoals) + 1
