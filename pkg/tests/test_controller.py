import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dloshape import controller as ctl
from dloshape.controller import (
    ControllerConfig,
    ControllerState,
    ErrorVector,
    FeedbackMode,
    Objective,
    control_step,
    cosine_similarity,
    ee_velocity_command,
    estimate_initial_values,
)
from dloshape.errors import ControllerFault, EstimationError
from dloshape.jacobian import BoundaryConditionMode, ControlPointLayout
from dloshape.rod import BoundaryState, integrate_ivp, positions_at
from dloshape.so3 import Pose, exp_so3, log_so3

from conftest import bent_state, layout_for

BI = BoundaryConditionMode.BI_ARM
CL = BoundaryConditionMode.CLAMPED_BASE


def points(g, params, layout):
    return positions_at(integrate_ivp(g, params), layout.arclengths)


def wrench_scale(params):
    EI, L = params.kr[0, 0], params.length
    return np.array([EI / L**2] * 3 + [EI / L] * 3)


def state_distance(a, b, params):
    """Dimensionless distance between two initial-value vectors."""
    L = params.length
    return np.linalg.norm(np.concatenate([
        (a.p - b.p) / L, log_so3(a.R.T @ b.R), (a.wrench - b.wrench) / wrench_scale(params)
    ]))


def nudged(g, params, seed, scale=0.02):
    d = np.random.default_rng(seed).uniform(-1, 1, 6) * scale * wrench_scale(params)
    return g.with_wrench(g.n + d[:3], g.m + d[3:])


class TestObjectiveAndError:
    def test_layout_mismatch(self, rubber):
        with pytest.raises(ValueError):
            Objective(np.zeros((2, 3))).check(layout_for(rubber, 3))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Objective([[0, 0, np.nan], [0, 0, 1]])

    def test_sign(self):
        e = ErrorVector.from_points(Objective([[1.0, 0, 0], [0, 0, 0]]), [[0, 0, 0], [0, 2.0, 0]])
        np.testing.assert_array_equal(e.stacked, [1, 0, 0, 0, -2, 0])
        np.testing.assert_array_equal(e.norms, [1, 2])
        assert e.mean == 1.5 and e.max == 2.0

    @given(st.lists(st.floats(-1, 1), min_size=12, max_size=12))
    def test_norms_match_blocks(self, xs):
        e = ErrorVector.from_points(Objective(np.reshape(xs, (4, 3))), np.zeros((4, 3)))
        for i in range(4):
            assert e.norms[i] == pytest.approx(np.linalg.norm(e.stacked[3 * i:3 * i + 3]), rel=1e-15, abs=0)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(gain=0.0), dict(gain=1.5), dict(ee_gain_rotation=0.0),
                                    dict(ee_gain_translation=-1.0), dict(damping=-1.0), dict(max_rejections=0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            ControllerConfig(**kw)


class TestCosine:
    def test_identical(self):
        assert cosine_similarity([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0, 0], [0, 1.0, 0]) == 0.0

    def test_skips_tiny(self):
        assert cosine_similarity([1e-10, 0, 0], [1.0, 0, 0]) is None


class TestEndEffectorCommand:
    def test_at_target(self):
        pose = Pose(np.array([0.1, 0.2, 0.3]), exp_so3([0.3, -0.2, 0.1]))
        vt, va = ee_velocity_command(pose, pose, ControllerConfig())
        assert not np.any(vt) and not np.any(va)

    def test_translation(self):
        cfg = ControllerConfig(ee_gain_translation=2.0)
        vt, _ = ee_velocity_command(Pose(np.array([0.1, 0, 0]), np.eye(3)), Pose(np.zeros(3), np.eye(3)), cfg)
        np.testing.assert_allclose(vt, [-0.2, 0, 0], atol=1e-15)

    def test_rotation(self):
        cfg = ControllerConfig(ee_gain_rotation=1.0)
        cur = Pose(np.zeros(3), exp_so3([0, 0, np.pi / 2]))
        _, va = ee_velocity_command(cur, Pose(np.zeros(3), np.eye(3)), cfg)
        np.testing.assert_allclose(va, [0, 0, -np.pi / 2], atol=1e-12)

    def test_rotation_converges(self):
        cfg = ControllerConfig(ee_gain_rotation=5.0)
        target = Pose(np.zeros(3), exp_so3([0.2, 0.1, -0.4]))
        R = np.eye(3)
        for _ in range(30):
            _, va = ee_velocity_command(Pose(np.zeros(3), R), target, cfg)
            R = R @ exp_so3(va * 0.1)
        assert np.linalg.norm(log_so3(target.R.T @ R)) < 1e-8


class TestEstimate:
    def test_zero_error_keeps_estimate(self, rubber):
        layout = layout_for(rubber, 3)
        g = bent_state(rubber, 0)
        state = ControllerState(g)
        pts = points(g, rubber, layout)
        control_step(state, pts, Objective(pts + 1e-3), rubber, layout, BI, ControllerConfig())
        eps = ErrorVector.from_points(Objective(pts), pts)
        assert estimate_initial_values(state, eps, ControllerConfig()) is state.gamma0_hat

    def test_first_iteration_uses_shooting_estimate(self, rubber):
        g = bent_state(rubber, 0)
        eps = ErrorVector.from_points(Objective(np.ones((3, 3))), np.zeros((3, 3)))
        assert estimate_initial_values(ControllerState(g), eps, ControllerConfig()) is g

    def test_missing_pinv(self, rubber):
        eps = ErrorVector.from_points(Objective(np.ones((3, 3))), np.zeros((3, 3)))
        with pytest.raises(EstimationError):
            estimate_initial_values(ControllerState(bent_state(rubber, 0), iteration=3), eps, ControllerConfig())

    def test_missing_reading(self, rubber):
        eps = ErrorVector.from_points(Objective(np.ones((3, 3))), np.zeros((3, 3)))
        cfg = ControllerConfig(feedback=FeedbackMode.FORCE_SENSOR)
        with pytest.raises(EstimationError):
            estimate_initial_values(ControllerState(BoundaryState.rest()), eps, cfg)

    def test_force_sensor_pass_through(self, rubber):
        from dloshape.plant import PlantConfig, make_plant, measure_base_wrench

        truth = bent_state(rubber, 5)
        plant = make_plant(truth, PlantConfig(rubber))
        reading = measure_base_wrench(plant, PlantConfig(rubber), np.random.default_rng(0))
        cfg = ControllerConfig(feedback=FeedbackMode.FORCE_SENSOR)
        eps = ErrorVector.from_points(Objective(np.ones((3, 3))), np.zeros((3, 3)))
        est = estimate_initial_values(ControllerState(BoundaryState.rest()), eps, cfg, BI, reading, plant.base)
        assert est == plant.true_gamma0

    def test_vision_estimate_moves_toward_truth(self, rubber):
        # The plant realises the previous command exactly; the estimate is
        # then updated from the remaining error.
        layout = layout_for(rubber, 3)
        cfg = ControllerConfig()
        previous = bent_state(rubber, 2)
        objective = Objective(points(nudged(previous, rubber, 2, 0.1), rubber, layout))
        state = ControllerState(previous)
        out = control_step(state, points(previous, rubber, layout), objective, rubber, layout, BI, cfg)
        truth = out.gamma0
        eps = ErrorVector.from_points(objective, points(truth, rubber, layout))
        est = estimate_initial_values(state, eps, cfg)
        assert state_distance(est, truth, rubber) < state_distance(previous, truth, rubber)


class TestControlStep:
    def test_fixed_point(self, rubber):
        layout = layout_for(rubber, 3)
        g = bent_state(rubber, 1)
        pts = points(g, rubber, layout)
        out = control_step(ControllerState(g), pts, Objective(pts), rubber, layout, BI, ControllerConfig())
        assert out.gamma0 is g
        assert not np.any(out.increment)
        shape = integrate_ivp(g, rubber)
        cfg = ControllerConfig()
        for current, target in ((shape.base.pose, out.ee_targets.base), (shape.tip.pose, out.ee_targets.tip)):
            vt, va = ee_velocity_command(current, target, cfg)
            assert not np.any(vt) and not np.any(va)

    def test_state_advances(self, rubber):
        layout = layout_for(rubber, 3)
        g = bent_state(rubber, 1)
        state = ControllerState(g)
        pts = points(g, rubber, layout)
        out = control_step(state, pts, Objective(pts + 1e-3), rubber, layout, BI, ControllerConfig())
        assert state.iteration == 1 and state.prev_jacobian is not None
        assert out.diagnostics.cosine_similarity is None
        assert out.diagnostics.stability_margin > ControllerConfig().sigma_min_threshold
        assert len(out.diagnostics.singular_values) == 9

    def test_gain_scaling_is_exact(self, rubber):
        layout = layout_for(rubber, 3)
        g = bent_state(rubber, 1)
        pts = points(g, rubber, layout)
        obj = Objective(points(nudged(g, rubber, 1), rubber, layout))
        cfg = ControllerConfig(gain=0.2)
        full = control_step(ControllerState(g), pts, obj, rubber, layout, BI, cfg)
        half = control_step(ControllerState(g), pts, obj, rubber, layout, BI, dataclasses.replace(cfg, gain=0.1))
        np.testing.assert_array_equal(2.0 * half.increment, full.increment)

    @pytest.mark.parametrize("seed", range(4))
    def test_one_step_contraction(self, rubber, seed):
        layout = layout_for(rubber, 3)
        g = bent_state(rubber, seed)
        obj = Objective(points(nudged(g, rubber, seed), rubber, layout))
        pts = points(g, rubber, layout)
        out = control_step(ControllerState(g), pts, obj, rubber, layout, BI, ControllerConfig())
        before = ErrorVector.from_points(obj, pts)
        after = ErrorVector.from_points(obj, positions_at(out.predicted_shape, layout.arclengths))
        assert np.linalg.norm(after.stacked) < np.linalg.norm(before.stacked)

    @given(st.integers(0, 1000))
    def test_monotone_in_linear_regime(self, seed):
        from dloshape.presets import get_preset

        P = get_preset("rubber_band").params()
        layout = layout_for(P, 3)
        g = bent_state(P, seed)
        obj = Objective(points(nudged(g, P, seed), P, layout))
        cfg = ControllerConfig(feedback=FeedbackMode.FORCE_SENSOR, gain=0.3)
        state = ControllerState(g)
        last = np.inf
        for _ in range(60):
            eps = ErrorVector.from_points(obj, points(g, P, layout))
            norm = np.linalg.norm(eps.stacked)
            assert norm < last
            if eps.mean < 1e-5:
                break
            last = norm
            # the ideal plant executes the command and the sensor reports it
            g = control_step(state, points(g, P, layout), obj, P, layout, BI, cfg, (g.n, g.m), g.pose).gamma0
        else:
            pytest.fail("did not reach tolerance")

    def test_guard_halves_gain(self, rubber, monkeypatch):
        margins = iter([0.0, 0.0, 1.0])
        monkeypatch.setattr(ctl, "_candidate_margin", lambda *a: next(margins))
        layout = layout_for(rubber, 3)
        g = bent_state(rubber, 1)
        pts = points(g, rubber, layout)
        obj = Objective(points(nudged(g, rubber, 1), rubber, layout))
        out = control_step(ControllerState(g), pts, obj, rubber, layout, BI, ControllerConfig(gain=0.4))
        assert out.diagnostics.rejections == 2
        assert out.diagnostics.gain == 0.1

    def test_guard_fault(self, rubber, monkeypatch):
        calls = []
        monkeypatch.setattr(ctl, "_candidate_margin", lambda *a: calls.append(1) or 0.0)
        layout = layout_for(rubber, 3)
        g = bent_state(rubber, 1)
        state = ControllerState(g)
        pts = points(g, rubber, layout)
        with pytest.raises(ControllerFault):
            control_step(state, pts, Objective(pts + 1e-3), rubber, layout, BI, ControllerConfig())
        assert len(calls) == 5
        assert state.iteration == 0 and state.gamma0_hat is g

    def test_clamped_keeps_pose(self, steel):
        layout = layout_for(steel, 4)
        g = bent_state(steel, 3)
        obj = Objective(points(nudged(g, steel, 3), steel, layout))
        state = ControllerState(g)
        pts = points(g, steel, layout)
        for _ in range(3):
            out = control_step(state, pts, obj, steel, layout, CL, ControllerConfig())
            assert out.ee_targets.base is None
            assert out.increment.shape == (6,)
            np.testing.assert_array_equal(out.gamma0.p, g.p)
            np.testing.assert_array_equal(out.gamma0.R, g.R)
            pts = positions_at(out.predicted_shape, layout.arclengths)

    def test_layout_mismatch(self, rubber):
        with pytest.raises(ValueError):
            control_step(ControllerState(BoundaryState.rest()), np.zeros((3, 3)), Objective(np.zeros((4, 3))),
                         rubber, ControlPointLayout.uniform(0.6, 3), BI, ControllerConfig())
