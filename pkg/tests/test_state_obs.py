import math

import numpy as np
import pytest

from core.errors import ShapeMismatchError
from core.physics import Pose2, Shape, Twist2
from core.state_obs import (
    HISTORY_LEN, OBS_DIM, OBS_SLICES, PRIV_DIM, PRIV_SLICES, STUDENT_STEP_DIM,
    HistoryBuffers, build_observation, build_privileged, inertial_mask, key_points,
    push_history, snapshot, success,
)

ROBOT_DIMS = (0.7, 0.45)
CRITERIA = [(0.05, 5.0), (0.05, 10.0), (0.05, 15.0), (0.1, 10.0), (0.03, 5.0)]


def _as_set(points):
    return sorted(tuple(np.round(p, 9)) for p in points.reshape(-1, 3))


def test_key_points_unit_box():
    g = key_points(Pose2(0, 0, 0), (1.0, 1.0, 1.0), Pose2(0, 0, 0)).reshape(8, 3)
    expected = [(sx * 0.5, sy * 0.5, z) for z in (0.0, 1.0) for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1))]
    np.testing.assert_allclose(g, expected, atol=1e-12)


def test_key_points_cylinder_uses_bounding_box(make_object):
    box = make_object(shape=Shape.BOX, dims=(1.0, 1.0, 1.0))
    cylinder = make_object(shape=Shape.CYLINDER, dims=(1.0, 1.0, 1.0))
    np.testing.assert_array_equal(key_points(Pose2(0.3, -0.2, 0.4), box.dims, Pose2(0, 0, 0)),
                                  key_points(Pose2(0.3, -0.2, 0.4), cylinder.dims, Pose2(0, 0, 0)))


def test_key_points_square_symmetry():
    a = key_points(Pose2(0, 0, 0), (1.0, 1.0, 1.0), Pose2(0, 0, 0))
    b = key_points(Pose2(0, 0, math.pi / 2), (1.0, 1.0, 1.0), Pose2(0, 0, 0))
    assert _as_set(a) == _as_set(b)


def test_key_points_rigid_equivariance():
    rng = np.random.default_rng(0)
    for _ in range(50):
        obj = Pose2(*rng.uniform(-3, 3, 2), rng.uniform(0, 2 * math.pi))
        robot = Pose2(*rng.uniform(-3, 3, 2), rng.uniform(0, 2 * math.pi))
        shift, turn = rng.uniform(-2, 2, 2), rng.uniform(0, 2 * math.pi)

        def moved(p: Pose2) -> Pose2:
            c, s = math.cos(turn), math.sin(turn)
            x, y = c * p.x - s * p.y + shift[0], s * p.x + c * p.y + shift[1]
            return Pose2(x, y, p.yaw + turn)

        np.testing.assert_allclose(key_points(obj, (1.0, 0.6, 0.4), robot),
                                   key_points(moved(obj), (1.0, 0.6, 0.4), moved(robot)), atol=1e-9)


def test_key_points_reject_bad_dims():
    with pytest.raises(ValueError):
        key_points(Pose2(), (0.0, 1.0, 1.0), Pose2())


def test_observation_direction_and_distance(make_world):
    world = make_world(robot=Pose2(0, 0, 0), obj_pose=Pose2(1.0, 0.0, 0.0), goal=Pose2(1.0, 0.0, 0.0))
    o = build_observation(world, ROBOT_DIMS)
    assert o.shape == (OBS_DIM,)
    np.testing.assert_allclose(o[OBS_SLICES["dir_robot_object"]], [1.0, 0.0])
    assert o[OBS_SLICES["dist_robot_object"]][0] == pytest.approx(1.0)
    # object already at the goal position: zero direction, zero distance, no NaN
    np.testing.assert_array_equal(o[OBS_SLICES["dir_object_goal"]], [0.0, 0.0])
    assert o[OBS_SLICES["dist_object_goal"]][0] == 0.0
    assert np.all(np.isfinite(o))


def test_observation_aligned_axes(make_world):
    world = make_world(robot=Pose2(0, 0, 0.3), obj_pose=Pose2(1, 1, 0.3), goal=Pose2(2, 0, 0.3))
    o = build_observation(world, ROBOT_DIMS)
    for name in ("axes_robot_object", "axes_robot_goal", "axes_object_goal"):
        dot, cross = o[OBS_SLICES[name]]
        assert dot == pytest.approx(1.0)
        assert cross == pytest.approx(0.0, abs=1e-12)


def test_observation_row_oracle(make_world):
    rng = np.random.default_rng(1)
    for _ in range(20):
        robot = Pose2(*rng.uniform(-3, 3, 2), rng.uniform(0, 2 * math.pi))
        obj = Pose2(*rng.uniform(-3, 3, 2), rng.uniform(0, 2 * math.pi))
        goal = Pose2(*rng.uniform(-3, 3, 2), rng.uniform(0, 2 * math.pi))
        world = make_world(robot=robot, obj_pose=obj, goal=goal, robot_twist=Twist2(0.4, -0.2, 0.7),
                           object_twist=Twist2(0.3, 0.1, -0.5))
        o = build_observation(world, ROBOT_DIMS)

        c, s = math.cos(robot.yaw), math.sin(robot.yaw)
        np.testing.assert_allclose(o[0:3], [c, s, 0.0], atol=1e-9)
        np.testing.assert_allclose(o[3:6], [0.4, -0.2, 0.0], atol=1e-9)
        np.testing.assert_allclose(o[6:9], [0.0, 0.0, 0.7], atol=1e-9)
        np.testing.assert_allclose(o[9:15], [0.35, 0.225, 0.0, 0.35, -0.225, 0.0], atol=1e-9)
        dx, dy = obj.x - robot.x, obj.y - robot.y
        dist = math.hypot(dx, dy)
        np.testing.assert_allclose(o[15:18], [dx / dist, dy / dist, dist], atol=1e-9)
        dx, dy = goal.x - obj.x, goal.y - obj.y
        dist = math.hypot(dx, dy)
        np.testing.assert_allclose(o[18:21], [dx / dist, dy / dist, dist], atol=1e-9)
        dx, dy = goal.x - robot.x, goal.y - robot.y
        dist = math.hypot(dx, dy)
        np.testing.assert_allclose(o[21:24], [dx / dist, dy / dist, dist], atol=1e-9)
        vx, vy = 0.3, 0.1
        np.testing.assert_allclose(o[24:27], [c * vx + s * vy, -s * vx + c * vy, 0.0], atol=1e-9)
        for k, (a, b) in enumerate(((robot, obj), (robot, goal), (obj, goal))):
            diff = b.yaw - a.yaw
            np.testing.assert_allclose(o[27 + 2 * k: 29 + 2 * k], [math.cos(diff), abs(math.sin(diff))], atol=1e-9)
        for name in ("axes_robot_object", "axes_robot_goal", "axes_object_goal"):
            d, x = o[OBS_SLICES[name]]
            assert d * d + x * x == pytest.approx(1.0, abs=1e-9)


def test_privileged_layout(make_object):
    obj = make_object(com=(0.1, -0.05, 0.02), friction=0.25, drag=0.4)
    x = build_privileged(obj, True)
    assert x.shape == (PRIV_DIM,)
    np.testing.assert_array_equal(x[PRIV_SLICES["object_type"]], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(x[PRIV_SLICES["dims"]], obj.dims)
    assert x[PRIV_SLICES["mass"]][0] == obj.mass
    np.testing.assert_array_equal(x[PRIV_SLICES["com"]], obj.com_offset)
    np.testing.assert_array_equal(x[PRIV_SLICES["inertia"]], obj.inertia.reshape(-1))
    assert x[PRIV_SLICES["friction"]][0] == 0.25
    assert x[PRIV_SLICES["drag"]][0] == 0.4
    assert x[PRIV_SLICES["contact"]][0] == 1.0

    cylinder = build_privileged(make_object(shape=Shape.CYLINDER), False)
    np.testing.assert_array_equal(cylinder[PRIV_SLICES["object_type"]], [0.0, 1.0, 0.0])
    assert cylinder[PRIV_SLICES["contact"]][0] == 0.0


def test_privileged_inertial_mask(make_object):
    x = build_privileged(make_object(com=(0.1, 0.0, 0.0)), True, mask_inertial=True)
    assert inertial_mask().sum() == 13
    assert np.all(x[inertial_mask()] == 0.0)
    assert x[PRIV_SLICES["friction"]][0] == 0.3


def test_success_criteria():
    goal = Pose2(1.0, 1.0, 0.5)
    assert all(success(goal, goal, d, th) for d, th in CRITERIA)

    near = Pose2(1.04, 1.0, 0.5 + math.radians(4.0))
    assert success(near, goal, 0.05, 5.0)
    assert not success(near, goal, 0.03, 5.0)


def test_success_wraps_yaw():
    assert success(Pose2(0, 0, math.radians(359.0)), Pose2(0, 0, 0), 0.05, 5.0)


def test_success_rejects_bad_tolerance():
    with pytest.raises(ValueError):
        success(Pose2(), Pose2(), 0.0, 5.0)


def test_history_zero_before_any_push():
    X, H = snapshot(HistoryBuffers())
    assert X.shape == (HISTORY_LEN, PRIV_DIM)
    assert H.shape == (HISTORY_LEN, STUDENT_STEP_DIM)
    assert not X.any() and not H.any()


def test_history_full_after_twenty_steps():
    buffers = HistoryBuffers()
    for k in range(HISTORY_LEN):
        push_history(buffers, o=np.full(OBS_DIM, k + 1.0), x=np.full(PRIV_DIM, k + 1.0))
    X, _ = snapshot(buffers)
    assert np.all(X != 0.0)
    np.testing.assert_array_equal(X[:, 0], np.arange(1, HISTORY_LEN + 1))


def test_history_interleaving_trace():
    buffers = HistoryBuffers()
    # action a1, two physics ticks, action a2, one tick
    push_history(buffers, a=np.array([1.0, 0.0, 0.0]), o=np.full(OBS_DIM, 1.0), x=np.full(PRIV_DIM, 1.0))
    push_history(buffers, o=np.full(OBS_DIM, 2.0), x=np.full(PRIV_DIM, 2.0))
    push_history(buffers, a=np.array([0.0, 2.0, 0.0]), o=np.full(OBS_DIM, 3.0), x=np.full(PRIV_DIM, 3.0))
    _, H = snapshot(buffers)

    np.testing.assert_array_equal(H[-3:, 0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(H[-3:, OBS_DIM:], [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    assert buffers.physics_pushes == 3
    assert buffers.action_pushes == 2
    np.testing.assert_array_equal(buffers.actions[-2:], [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])


def test_history_rejects_wrong_width():
    with pytest.raises(ShapeMismatchError):
        push_history(HistoryBuffers(), o=np.zeros(OBS_DIM + 1))


def test_history_copy_is_independent():
    buffers = HistoryBuffers()
    push_history(buffers, o=np.ones(OBS_DIM))
    clone = buffers.copy()
    push_history(buffers, o=np.full(OBS_DIM, 2.0))
    assert clone.observations[-1, 0] == 1.0
    assert clone.physics_pushes == 1


def test_layout_slices_tile_the_vectors():
    for slices, dim in ((OBS_SLICES, OBS_DIM), (PRIV_SLICES, PRIV_DIM)):
        covered = np.zeros(dim, dtype=int)
        for s in slices.values():
            covered[s] += 1
        assert covered.tolist() == [1] * dim
