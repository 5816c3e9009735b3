import numpy as np
import pytest

from dloshape.jacobian import BoundaryConditionMode
from dloshape.plant import PlantConfig, Twist, make_plant, measure_base_wrench, measure_markers, step
from dloshape.rod import BoundaryState, integrate_ivp, positions_at
from dloshape.so3 import log_so3

from conftest import bent_state, layout_for


def boundary_residual(plant, params):
    shape = integrate_ivp(plant.true_gamma0, params)
    return (
        np.linalg.norm(shape.tip.p - plant.tip.p),
        np.linalg.norm(log_so3(plant.tip.R.T @ shape.tip.R)),
    )


class TestTwist:
    def test_saturation_keeps_direction(self):
        t = Twist([3.0, 4.0, 0.0], [0.0, 0.0, 1.0]).saturated(0.5, 2.0)
        np.testing.assert_allclose(t.linear, [0.3, 0.4, 0.0])
        np.testing.assert_array_equal(t.angular, [0, 0, 1])

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Twist([np.nan, 0, 0], [0, 0, 0])


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(dt=0.0), dict(marker_noise_sigma=-1.0), dict(wrench_noise_sigma=(0.0, -1.0))])
    def test_rejects(self, rubber, kw):
        with pytest.raises(ValueError):
            PlantConfig(rubber, **kw)


class TestStep:
    def test_zero_twist_only_advances_clock(self, rubber):
        cfg = PlantConfig(rubber)
        plant = make_plant(bent_state(rubber, 0), cfg)
        after = step(plant, (Twist.zero(), Twist.zero()), cfg)
        assert after.clock == pytest.approx(0.1)
        assert after.true_gamma0 is plant.true_gamma0 and after.base is plant.base and after.tip is plant.tip

    def test_euler_step(self, rubber):
        cfg = PlantConfig(rubber, dt=0.1)
        plant = make_plant(BoundaryState.rest(), cfg)
        after = step(plant, (Twist([0.1, 0, 0], [0, 0, 0]), None), cfg)
        np.testing.assert_allclose(after.base.p - plant.base.p, [0.01, 0, 0], atol=1e-15)

    def test_tip_tracks_gripper(self, rubber):
        cfg = PlantConfig(rubber)
        plant = make_plant(bent_state(rubber, 1, 0.5), cfg)
        for _ in range(3):
            plant = step(plant, (None, Twist([0.0, 0.02, 0.0], [0.05, 0.0, 0.0])), cfg)
            dp, dr = boundary_residual(plant, rubber)
            assert dp < 1e-8 and dr < 1e-8
            np.testing.assert_array_equal(plant.true_shape.p, integrate_ivp(plant.true_gamma0, rubber).p)

    def test_clamped_base_is_frozen(self, steel):
        cfg = PlantConfig(steel, mode=BoundaryConditionMode.CLAMPED_BASE)
        plant = make_plant(bent_state(steel, 2, 0.3), cfg)
        after = step(plant, (Twist([0.1, 0, 0], [0, 0, 0]), Twist([0.0, 0.01, 0.0], [0, 0, 0])), cfg)
        assert after.base is plant.base
        assert np.linalg.norm(after.tip.p - plant.tip.p) == pytest.approx(0.001)

    def test_saturates(self, rubber):
        cfg = PlantConfig(rubber, max_twist=(0.05, 2.0))
        plant = make_plant(BoundaryState.rest(), cfg)
        after = step(plant, (None, Twist([0.0, 1.0, 0.0], [0, 0, 0])), cfg)
        assert np.linalg.norm(after.tip.p - plant.tip.p) == pytest.approx(0.005)


class TestSensors:
    def test_exact_markers(self, rubber):
        cfg = PlantConfig(rubber)
        plant = make_plant(bent_state(rubber, 2), cfg)
        layout = layout_for(rubber, 3)
        np.testing.assert_array_equal(measure_markers(plant, layout, cfg, cfg.rng()),
                                      positions_at(plant.true_shape, layout.arclengths))

    def test_marker_noise_statistics(self, rubber):
        sigma = 5e-4
        cfg = PlantConfig(rubber, marker_noise_sigma=sigma)
        plant = make_plant(BoundaryState.rest(), cfg)
        layout = layout_for(rubber, 3)
        rng = cfg.rng()
        truth = positions_at(plant.true_shape, layout.arclengths)[0]
        samples = np.array([measure_markers(plant, layout, cfg, rng)[0] for _ in range(10_000)]) - truth
        assert np.all(np.abs(samples.std(axis=0) / sigma - 1.0) < 0.1)

    def test_marker_noise_is_seeded(self, rubber):
        cfg = PlantConfig(rubber, marker_noise_sigma=2e-4, rng_seed=11)
        plant = make_plant(BoundaryState.rest(), cfg)
        layout = layout_for(rubber, 3)
        a = [measure_markers(plant, layout, cfg, r) for r in [cfg.rng()] for _ in range(5)]
        b = [measure_markers(plant, layout, cfg, r) for r in [cfg.rng()] for _ in range(5)]
        np.testing.assert_array_equal(a, b)

    def test_rest_wrench(self, rubber):
        cfg = PlantConfig(rubber)
        n, m = measure_base_wrench(make_plant(BoundaryState.rest(), cfg), cfg, cfg.rng())
        assert not np.any(n) and not np.any(m)

    def test_bent_wrench_pass_through(self, rubber):
        cfg = PlantConfig(rubber)
        g = bent_state(rubber, 3)
        n, m = measure_base_wrench(make_plant(g, cfg), cfg, cfg.rng())
        np.testing.assert_array_equal(n, g.n)
        np.testing.assert_array_equal(m, g.m)

    def test_wrench_noise_mean(self, rubber):
        sn, sm = 1e-3, 2e-4
        cfg = PlantConfig(rubber, wrench_noise_sigma=(sn, sm), rng_seed=5)
        g = bent_state(rubber, 3)
        plant = make_plant(g, cfg)
        rng = cfg.rng()
        reads = [measure_base_wrench(plant, cfg, rng) for _ in range(10_000)]
        n_mean = np.mean([r[0] for r in reads], axis=0)
        m_mean = np.mean([r[1] for r in reads], axis=0)
        assert np.all(np.abs(n_mean - g.n) < 3 * sn / 100)
        assert np.all(np.abs(m_mean - g.m) < 3 * sm / 100)
