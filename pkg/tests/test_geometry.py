import math

import numpy as np
import pytest

from combilearn.geometry import (ContactError, TaskGeometry, bundled_geometry, check_convex,
                                 contact_wrench, contacts, penetrates)

SQUARE = [(-0.005, 0.0), (0.005, 0.0), (0.005, 0.01), (-0.005, 0.01)]
K = 1.0e4


def floor_geometry():
    return TaskGeometry(name="floor", moving=[SQUARE],
                        fixed=[[(-0.05, -0.02), (0.05, -0.02), (0.05, 0.0), (-0.05, 0.0)]],
                        clearance=0.001, goal=(0.0, 0.02, 0.0), start=(0.0, 0.03, 0.0),
                        stiffness=K)


def test_clear_part_reads_zero():
    g = floor_geometry()
    assert np.array_equal(contact_wrench(g, (0.0, 0.01, 0.0)), np.zeros(3))
    # touching counts as separated
    assert np.array_equal(contact_wrench(g, (0.0, 0.0, 0.0)), np.zeros(3))


@pytest.mark.parametrize("d", [1e-4, 5e-4, 2e-3])
def test_flat_press_into_floor(d):
    fx, fz, tau = contact_wrench(floor_geometry(), (0.0, -d, 0.0))
    assert fx == pytest.approx(0.0, abs=1e-9)
    assert tau == pytest.approx(0.0, abs=1e-9)
    # sensor convention: pressing down reads a negative vertical force
    assert fz == pytest.approx(-K * d, rel=1e-9)


def test_damping_adds_to_approach_only():
    g = floor_geometry()
    still = contact_wrench(g, (0.0, -1e-3, 0.0))[1]
    pressing = contact_wrench(g, (0.0, -1e-3, 0.0), twist=(0.0, -0.01, 0.0))[1]
    leaving = contact_wrench(g, (0.0, -1e-3, 0.0), twist=(0.0, 0.01, 0.0))[1]
    assert pressing == pytest.approx(still - 50.0 * 0.01)
    assert leaving == pytest.approx(still + 50.0 * 0.01)


def test_mirrored_walls_cancel_sideways():
    walls = [[(-0.02, -0.02), (-0.004, -0.02), (-0.004, 0.03), (-0.02, 0.03)],
             [(0.004, -0.02), (0.02, -0.02), (0.02, 0.03), (0.004, 0.03)]]
    g = TaskGeometry(name="walls", moving=[[(-0.003, 0), (0.003, 0), (0.003, 0.01), (-0.003, 0.01)]],
                     fixed=walls, clearance=0.001, goal=(0.0, 0.0, 0.0), start=(0.0, 0.05, 0.0))
    wide = TaskGeometry(name="wide", moving=[SQUARE], fixed=walls, clearance=0.001,
                        goal=(0.0, 0.05, 0.0), start=(0.0, 0.05, 0.0))
    assert np.array_equal(contact_wrench(g, (0.0, 0.0, 0.0)), np.zeros(3))
    cs = contacts(wide, (0.0, 0.0, 0.0))
    assert len(cs) == 2
    fx, fz, tau = contact_wrench(wide, (0.0, 0.0, 0.0))
    assert fx == pytest.approx(0.0, abs=1e-9)
    assert fz == pytest.approx(0.0, abs=1e-9)


def test_degenerate_polygons_are_errors():
    with pytest.raises(ContactError):
        check_convex([(0, 0), (1, 0), (2, 0)])
    with pytest.raises(ContactError):
        check_convex([(0, 0), (1, 0)])
    with pytest.raises(ContactError):
        check_convex([(0, 0), (2, 0), (1, 0.2), (2, 1), (0, 1)])


def test_goal_pose_must_fit():
    with pytest.raises(ValueError, match="penetrates"):
        TaskGeometry(name="bad", moving=[SQUARE],
                     fixed=[[(-0.05, -0.02), (0.05, -0.02), (0.05, 0.0), (-0.05, 0.0)]],
                     clearance=0.001, goal=(0.0, -0.001, 0.0), start=(0.0, 0.03, 0.0))


@pytest.mark.parametrize("name", ["l-insertion", "friction-channel"])
def test_bundled_geometries_round_trip(tmp_path, name):
    g = bundled_geometry(name)
    g.save(tmp_path / "g.json")
    back = TaskGeometry.load(tmp_path / "g.json")
    assert back.to_dict() == g.to_dict()
    assert not penetrates(g, g.goal)
    assert not contacts(g, g.start)


def test_unknown_bundled_geometry():
    with pytest.raises(ValueError):
        bundled_geometry("hdmi")


# ---------------------------------------------------------------------------
# grid-sampling oracle for the penalty model
#
# Every quantity is recomputed from raw vertices: point membership on a fine
# grid gives the overlap area, centroid and tangential extent; the push-out
# direction is the minimum over a dense sweep of directions of the distance
# the part must travel to clear the fixed piece.


def _inside(points, poly):
    poly = np.asarray(poly)
    sign = np.sign(np.sum(poly[:, 0] * np.roll(poly[:, 1], -1) - np.roll(poly[:, 0], -1) * poly[:, 1]))
    ok = np.ones(len(points), bool)
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        cross = (b[0] - a[0]) * (points[:, 1] - a[1]) - (b[1] - a[1]) * (points[:, 0] - a[0])
        ok &= sign * cross > 0
    return ok


def _oracle_wrench(geometry, pose, n_grid=700, n_dirs=72_000):
    x, z, th = pose
    c, s = math.cos(th), math.sin(th)
    phis = np.linspace(0.0, 2 * math.pi, n_dirs, endpoint=False)
    dirs = np.stack([np.cos(phis), np.sin(phis)], axis=1)
    total = np.zeros(3)
    for part in geometry.moving:
        mv = np.array([[x + c * px - s * pz, z + s * px + c * pz] for px, pz in part])
        for piece in geometry.fixed:
            fv = np.asarray(piece.polygon)
            lo = np.maximum(mv.min(0), fv.min(0))
            hi = np.minimum(mv.max(0), fv.max(0))
            if np.any(hi <= lo):
                continue
            h = (hi - lo) / n_grid
            gx = lo[0] + (np.arange(n_grid) + 0.5) * h[0]
            gz = lo[1] + (np.arange(n_grid) + 0.5) * h[1]
            pts = np.stack(np.meshgrid(gx, gz), axis=-1).reshape(-1, 2)
            pts = pts[_inside(pts, mv) & _inside(pts, fv)]
            if len(pts) < 50:
                continue
            area = len(pts) * h[0] * h[1]
            centroid = pts.mean(0)
            push = (fv @ dirs.T).max(0) - (mv @ dirs.T).min(0)
            n = dirs[np.argmin(push)]
            t = np.array([-n[1], n[0]])
            proj = pts @ t
            width = proj.max() - proj.min() + abs(h @ np.abs(t))
            k = piece.stiffness if piece.stiffness is not None else geometry.stiffness
            f = k * area / width * n
            lever = centroid - np.array([x, z])
            total += [f[0], f[1], lever[0] * f[1] - lever[1] * f[0]]
    return -total


def _random_contact_poses(geometry, n, rng):
    goal = geometry.goal.as_array()
    out = []
    while len(out) < n:
        pose = goal + rng.uniform([-0.003, 0.0, -0.08], [0.003, 0.02, 0.08])
        cs = contacts(geometry, pose)
        if cs and max(c.depth for c in cs) < 0.003:
            out.append(pose)
    return out


@pytest.mark.parametrize("name", ["l-insertion", "friction-channel"])
def test_wrench_matches_grid_integration(name):
    g = bundled_geometry(name)
    rng = np.random.default_rng(11)
    for pose in _random_contact_poses(g, 6, rng):
        model = contact_wrench(g, pose)
        oracle = _oracle_wrench(g, pose)
        f_model, f_oracle = model[:2], oracle[:2]
        assert np.linalg.norm(f_model - f_oracle) <= 0.05 * np.linalg.norm(f_oracle), (pose, model, oracle)
        # torque: compare against the force scale times a 1 mm lever as a floor
        tol = 0.05 * max(abs(oracle[2]), np.linalg.norm(f_oracle) * 1e-3)
        assert abs(model[2] - oracle[2]) <= tol, (pose, model, oracle)


def test_wrench_continuity_probe():
    g = bundled_geometry("l-insertion")
    rng = np.random.default_rng(5)
    for pose in _random_contact_poses(g, 20, rng):
        w0 = contact_wrench(g, pose)
        w1 = contact_wrench(g, pose + np.array([1e-7, 1e-7, 1e-6]))
        # a 1e-7 m nudge with k = 1e4 N/m moves the force by about 1e-3 N
        assert np.max(np.abs(w1[:2] - w0[:2])) < 0.05
