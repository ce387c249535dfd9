import json
from dataclasses import replace

import numpy as np
import pytest

from sagtwin import expert as ex
from sagtwin import pipeline as pl
from sagtwin import scenarios as sc
from sagtwin.errors import UnstablePlantConfig


def quiet(plant=None, sigma=(0.0, 0.0)):
    plant = sc.SyntheticPlant() if plant is None else plant
    return replace(plant, noise_sigma=sigma, holdup_noise=0.0, efficiency_noise=0.0, mv_noise=(0.0, 0.0, 0.0))


def frozen_rulebase():
    """Default rule base with every consequent zeroed: setpoints never move."""
    rb = ex.default_rulebase()
    states = tuple(replace(s, consequent=np.zeros(3)) for s in rb.states)
    return replace(rb, states=states)


@pytest.fixture(scope="module")
def short_series():
    return sc.generate(sc.SyntheticPlant(), steps=300, seed=11)


class TestScenarios:
    def test_wear_factors(self):
        assert sc.wear_scenario(5).factors([0, 100])[:, 0].tolist() == [1.10, 1.10]
        assert sc.wear_scenario(1).factors([0])[0].tolist() == [1.02, 1.0]
        assert np.all(sc.wear_scenario(0).factors(np.arange(10)) == 1.0)

    def test_hardness_onset(self):
        s = sc.hardness_scenario(0.10, onset=300)
        f = s.factors(np.arange(600))
        assert np.all(f[:300] == 1.0)
        assert np.all(f[300:] == 1.10)
        assert np.all(sc.hardness_scenario(0.0).factors(np.arange(50)) == 1.0)

    def test_hardness_ramp(self):
        f = sc.hardness_scenario(0.10, onset=10, ramp=4).factors(np.arange(20))[:, 0]
        assert np.all(f[:10] == 1.0) and np.all(f[14:] == 1.10)
        assert np.all(np.diff(f[9:15]) > 0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            sc.wear_scenario(-1)
        with pytest.raises(ValueError):
            sc.hardness_scenario(-0.1)
        with pytest.raises(ValueError):
            sc.DisturbanceScenario("bad", (((0, -1.0),), ()))

    def test_identity_apply_is_exact_copy(self, short_series):
        out = sc.apply(sc.identity_scenario(), short_series)
        np.testing.assert_array_equal(out.y, short_series.y)
        assert out.y is not short_series.y

    def test_factor_multiplies_exactly(self, short_series):
        out = sc.apply(sc.wear_scenario(5), short_series)
        assert np.all(out.y[:, 0] == short_series.y[:, 0] * 1.10)
        np.testing.assert_array_equal(out.y[:, 1], short_series.y[:, 1])
        for name in ("timestamp", "u", "u_sp", "sag_running", "expert_online"):
            np.testing.assert_array_equal(getattr(out, name), getattr(short_series, name))
        assert len(out) == len(short_series)

    def test_composition_is_product(self, short_series):
        a, b = sc.wear_scenario(3), sc.hardness_scenario(0.05, onset=40)
        twice = sc.apply(b, sc.apply(a, short_series))
        f = a.factors(np.arange(len(short_series))) * b.factors(np.arange(len(short_series)))
        np.testing.assert_allclose(twice.y, short_series.y * f, rtol=1e-15)

    def test_file_round_trip(self, tmp_path):
        s = sc.hardness_scenario(0.1, onset=25, ramp=3)
        sc.save_scenario(s, tmp_path / "s.json")
        assert sc.load_scenario(tmp_path / "s.json") == s
        doc = json.loads((tmp_path / "s.json").read_text())
        assert set(doc["factors"]) == {"y1", "y2"}


class TestGenerate:
    def test_deterministic(self):
        a = sc.generate(steps=200, seed=5)
        b = sc.generate(steps=200, seed=5)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.u, b.u)
        assert not np.array_equal(a.y, sc.generate(steps=200, seed=6).y)

    def test_fixed_point_without_noise(self):
        s = sc.generate(quiet(), frozen_rulebase(), steps=600, seed=0, u_sp0=(2100.0, 70.0, 9.6))
        tail = np.vstack([s.y[-50:].T, s.u[-50:].T])
        assert np.all(np.ptp(tail, axis=1) < 1e-9)

    def test_measurement_noise_level(self):
        sigma = 3.0
        s = sc.generate(quiet(sigma=(sigma, 0.0)), frozen_rulebase(), steps=2000, seed=1)
        assert abs(s.y[:, 0].std(ddof=1) - sigma) <= 0.2 * sigma

    def test_supervisor_moves_setpoints(self, short_series):
        assert np.ptp(short_series.u_sp[:, 0]) > 0
        lo, hi = ex.default_rulebase().setpoint_limits[0]
        assert np.all((short_series.u_sp[:, 0] >= lo) & (short_series.u_sp[:, 0] <= hi))

    def test_series_layout(self, short_series):
        assert len(short_series) == 300
        assert np.all(np.diff(short_series.timestamp) == pl.SAMPLE_PERIOD)
        assert short_series.sag_running.all() and short_series.expert_online.all()

    def test_pressure_stays_below_limit_mostly(self, short_series):
        y_lim = sc.SyntheticPlant().y_lim[0]
        assert np.mean(short_series.y[:, 0] < y_lim + 20) > 0.95

    def test_unstable_configuration(self):
        with pytest.raises(UnstablePlantConfig):
            sc.generate(replace(sc.SyntheticPlant(), pressure_gain=1e4), steps=50, seed=0)

    def test_limit_schedule_changes_behaviour(self):
        base = sc.generate(steps=600, seed=3)
        low = sc.generate(steps=600, seed=3, limit_schedule=[(0, (1100.0, sc.SyntheticPlant().y_lim[1]))])
        assert low.y[200:, 0].mean() < base.y[200:, 0].mean() - 50

    def test_raw_expansion_round_trips_through_downsampling(self, short_series):
        raw = sc.to_raw(short_series, np.random.default_rng(0))
        assert len(raw) == 6 * len(short_series) and raw.sample_period == 5.0
        back = pl.median_downsample(raw)
        np.testing.assert_array_equal(back.y, short_series.y)
        np.testing.assert_array_equal(back.u, short_series.u)
        np.testing.assert_array_equal(back.timestamp, short_series.timestamp)
