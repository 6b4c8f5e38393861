import math

import numpy as np
import pytest
from pydantic import ValidationError

from core.env_gen import (
    RandomizationRanges, RangeMode, TaskConfig, Termination,
    com_scale, drift_com, orientation_task, principal_inertia, randomize_inertia,
    reset, sample_com, sample_object, sample_task, terminate,
)
from core.physics import Pose2, Shape, detect_contact
from presets.tables import TEST_RANGES, TRAIN_RANGES

ROBOT_DIMS = (0.7, 0.45)


def test_train_ranges_from_table():
    rng = np.random.default_rng(0)
    ranges = RandomizationRanges.for_mode(RangeMode.TRAIN)
    for _ in range(500):
        obj = sample_object(ranges, rng)
        assert 6.0 <= obj.mass <= 18.0
        assert 0.35 <= obj.dims[2] <= 1.05
        assert all(0.5 <= d <= 1.5 for d in obj.dims[:2])
        if obj.shape is Shape.CYLINDER:
            assert obj.dims[0] == obj.dims[1]


def test_sampler_statistics_over_10000_objects():
    rng = np.random.default_rng(1)
    ranges = RandomizationRanges.for_mode(RangeMode.TRAIN)
    objs = [sample_object(ranges, rng) for _ in range(10_000)]
    fields = {
        "mass": [o.mass for o in objs],
        "friction": [o.friction for o in objs],
        "drag": [o.drag for o in objs],
        "height": [o.dims[2] for o in objs],
    }
    for name, values in fields.items():
        values = np.asarray(values)
        lo, hi = TRAIN_RANGES[name]
        assert lo <= values.min() and values.max() <= hi
        stderr = (hi - lo) / math.sqrt(12.0) / math.sqrt(len(values))
        assert abs(values.mean() - (lo + hi) / 2.0) < 3.0 * stderr, name


def test_test_mode_changes_endpoints_only():
    ranges = RandomizationRanges.for_mode(RangeMode.TEST)
    assert ranges.mass == TEST_RANGES["mass"]
    assert ranges.mode is RangeMode.TEST
    rng = np.random.default_rng(2)
    assert all(10.0 <= sample_object(ranges, rng).mass <= 20.0 for _ in range(200))


def test_ranges_validation():
    with pytest.raises(ValidationError):
        RandomizationRanges(mass=(5.0, 1.0))
    with pytest.raises(ValidationError):
        RandomizationRanges(com_volume_pct=(0.0, 150.0))
    with pytest.raises(ValidationError):
        RandomizationRanges(shapes=[])


def test_randomize_inertia_identity_at_zero():
    principal = np.array([1.0, 2.0, 3.0])
    np.testing.assert_allclose(randomize_inertia(principal, 0.0), np.diag(principal), atol=1e-15)


def test_randomize_inertia_hand_oracle():
    theta = math.radians(20.0)
    c, s = math.cos(theta), math.sin(theta)
    R = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    I = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]]
    expected = [[sum(R[i][k] * I[k][l] * R[j][l] for k in range(3) for l in range(3)) for j in range(3)]
                for i in range(3)]
    np.testing.assert_allclose(randomize_inertia([1.0, 2.0, 3.0], 20.0, axis=2), expected, atol=1e-12)


def test_randomize_inertia_preserves_spectrum():
    rng = np.random.default_rng(3)
    for _ in range(100):
        moments = rng.uniform(0.1, 5.0, 3)
        out = randomize_inertia(moments, rng.uniform(-180, 180), int(rng.integers(3)))
        np.testing.assert_allclose(out, out.T)
        np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(out)), np.sort(moments), atol=1e-10)


def test_principal_inertia_uniform_box():
    np.testing.assert_allclose(principal_inertia(Shape.BOX, (1.0, 1.0, 1.0), 12.0), [2.0, 2.0, 2.0])


def test_com_zero_volume_is_center():
    rng = np.random.default_rng(4)
    np.testing.assert_array_equal(sample_com((1.0, 1.0, 1.0), Shape.BOX, 0.0, rng), np.zeros(3))


def test_com_box_containment():
    rng = np.random.default_rng(5)
    half = 0.5 ** (1.0 / 3.0) / 2.0
    for _ in range(10_000):
        offset = sample_com((1.0, 1.0, 1.0), Shape.BOX, 50.0, rng)
        assert np.all(np.abs(offset) <= half + 1e-12)


def test_com_cylinder_radius_containment():
    rng = np.random.default_rng(6)
    limit = com_scale(50.0) * 0.6
    for _ in range(10_000):
        offset = sample_com((1.2, 1.2, 0.8), Shape.CYLINDER, 50.0, rng)
        assert math.hypot(offset[0], offset[1]) <= limit + 1e-12


def test_com_rejects_bad_percent():
    with pytest.raises(ValueError):
        sample_com((1.0, 1.0, 1.0), Shape.BOX, 120.0, np.random.default_rng(0))


def test_task_sampling_properties(make_object):
    rng = np.random.default_rng(7)
    cfg = TaskConfig()
    obj = make_object()
    for _ in range(2_000):
        task = sample_task(rng, obj, ROBOT_DIMS, cfg)
        for pose in (task.robot_start, task.object_start, task.goal):
            assert 0.0 <= pose.yaw < 2 * math.pi
        assert np.linalg.norm(task.robot_start.position) <= 4.0 + 1e-12
        assert np.linalg.norm(task.object_start.position) <= 4.0 + 1e-12
        assert np.linalg.norm(task.goal.position - task.object_start.position) <= 4.0 + 1e-12
        assert not detect_contact(task.robot_start, ROBOT_DIMS, task.object_start, obj)
        assert task.time_limit == 30.0


def test_goal_never_pre_satisfied(make_object):
    rng = np.random.default_rng(8)
    cfg = TaskConfig(goal_radius=0.05)
    for _ in range(500):
        task = sample_task(rng, make_object(), ROBOT_DIMS, cfg)
        dist = np.linalg.norm(task.goal.position - task.object_start.position)
        yaw = abs(math.remainder(task.goal.yaw - task.object_start.yaw, 2 * math.pi))
        assert not (dist <= 0.1 and yaw <= math.radians(15.0))


def test_orientation_task_fixes_goal(make_object):
    task = orientation_task(np.random.default_rng(9), make_object(), ROBOT_DIMS, 90.0)
    assert task.goal == Pose2(1.5, 0.0, 0.0)
    assert task.object_start.yaw == pytest.approx(math.pi / 2)
    np.testing.assert_array_equal(task.object_start.position, [0.0, 0.0])


def test_reset_is_seeded():
    ranges = RandomizationRanges()
    w1, t1 = reset(ranges, np.random.default_rng(10))
    w2, t2 = reset(ranges, np.random.default_rng(10))
    assert t1 == t2
    assert w1.object.mass == w2.object.mass
    np.testing.assert_array_equal(w1.object.inertia, w2.object.inertia)
    assert w1.sim_time == 0.0


def test_terminate_time_and_fault():
    from dataclasses import replace
    world, task = reset(RandomizationRanges(), np.random.default_rng(11))
    assert terminate(replace(world, sim_time=29.99), task) is Termination.RUNNING
    assert terminate(replace(world, sim_time=30.0), task) is Termination.TIMEOUT
    assert terminate(replace(world, fault=True), task) is Termination.FAULT


def test_com_drift_stays_contained(make_object):
    rng = np.random.default_rng(12)
    obj = make_object(shape=Shape.CYLINDER, dims=(1.0, 1.0, 0.6))
    limit = com_scale(50.0) * 0.5
    for _ in range(2_000):
        obj = drift_com(obj, 0.5, 0.2, 50.0, rng)
        assert math.hypot(obj.com_offset[0], obj.com_offset[1]) <= limit + 1e-12
        assert abs(obj.com_offset[2]) <= com_scale(50.0) * 0.3 + 1e-12
    assert drift_com(obj, 0.0, 0.2, 50.0, rng) is obj
