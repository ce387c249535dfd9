import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sagtwin import narx as nx
from sagtwin import pipeline as pl
from sagtwin.errors import ArtifactError, ShapeMismatch, TrainingDiverged, WindowTooShort
from sagtwin.scaling import Scaler

Y_SCALER = Scaler([1100.0, 9000.0], [60.0, 300.0])
U_SCALER = Scaler([2000.0, 72.0, 9.5], [150.0, 2.0, 0.3])


def random_model(rng, m=3, n=2, h=2, activation="tanh", scale=0.5):
    d = 2 * m + 3 * n
    return nx.NarxModel(m=m, n=n, W_in=rng.uniform(-scale, scale, (h, d)), b_hidden=rng.uniform(-scale, scale, h),
                        W_out=rng.uniform(-1, 1, (2, h)), b_out=rng.uniform(-scale, scale, 2),
                        activation=activation, y_scaler=Y_SCALER, u_scaler=U_SCALER)


def random_window(rng, m, n):
    return nx.RegressorWindow(Y_SCALER.inverse(rng.standard_normal((m, 2))),
                              U_SCALER.inverse(rng.standard_normal((n, 3))))


def as_series(y, u):
    T = len(y)
    return pl.SampledSeries(np.arange(T) * 30.0, u, u, y)


class TestForward:
    def test_constant_network(self):
        target = np.array([1200.0, 8500.0])
        m = nx.NarxModel(m=2, n=2, W_in=np.zeros((2, 10)), b_hidden=np.zeros(2), W_out=np.zeros((2, 2)),
                         b_out=Y_SCALER.transform(target), y_scaler=Y_SCALER, u_scaler=U_SCALER)
        rng = np.random.default_rng(0)
        for _ in range(5):
            np.testing.assert_allclose(nx.forward(m, random_window(rng, 2, 2)), target, rtol=1e-14)

    def test_matches_scalar_reimplementation(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            mdl = random_model(rng, m=4, n=3, h=3)
            w = random_window(rng, 4, 3)
            ref = oracles.narx_forward(mdl.W_in.tolist(), mdl.b_hidden.tolist(), mdl.W_out.tolist(),
                                       mdl.b_out.tolist(), Y_SCALER.mean, Y_SCALER.scale, U_SCALER.mean,
                                       U_SCALER.scale, w.past_y, w.past_u)
            np.testing.assert_allclose(nx.forward(mdl, w), ref, rtol=1e-12, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 11), st.floats(-5, 5))
    def test_lipschitz_bound(self, seed, channel, delta):
        rng = np.random.default_rng(seed)
        mdl = random_model(rng)
        w = random_window(rng, mdl.m, mdl.n)
        x = np.concatenate([w.past_y.ravel(), w.past_u.ravel()])
        x2 = x.copy()
        x2[channel] += delta
        w2 = nx.RegressorWindow(x2[:2 * mdl.m].reshape(mdl.m, 2), x2[2 * mdl.m:].reshape(mdl.n, 3))
        scale_in = np.concatenate([np.tile(Y_SCALER.scale, mdl.m), np.tile(U_SCALER.scale, mdl.n)])
        # bound in scaled units, mapped back through the output scaling
        L = np.linalg.norm(mdl.W_out, 2) * np.linalg.norm(mdl.W_in, 2)
        dy = (nx.forward(mdl, w2) - nx.forward(mdl, w)) / Y_SCALER.scale
        assert np.linalg.norm(dy) <= L * abs(delta) / scale_in[channel] + 1e-12

    def test_lag_mismatch(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ShapeMismatch):
            nx.forward(random_model(rng, m=3, n=2), random_window(rng, 2, 2))

    def test_input_dimension_enforced(self):
        with pytest.raises(ShapeMismatch):
            nx.NarxModel(m=2, n=2, W_in=np.zeros((2, 9)), b_hidden=np.zeros(2), W_out=np.zeros((2, 2)),
                         b_out=np.zeros(2))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=2))
    def test_scaler_round_trip(self, v):
        np.testing.assert_allclose(Y_SCALER.inverse(Y_SCALER.transform(v)), v, rtol=1e-12, atol=1e-9)


class TestRegressors:
    def test_layout_newest_first(self):
        y = np.arange(20.0).reshape(10, 2)
        u = 100 + np.arange(30.0).reshape(10, 3)
        X, tgt, t = nx.regressors((2, 3), y, u)
        assert t[0] == 2
        np.testing.assert_array_equal(X[0], np.concatenate([y[1], y[0], u[2], u[1], u[0]]))
        np.testing.assert_array_equal(tgt, y[2:])


class TestRollout:
    def test_constant_network(self):
        target = np.array([1000.0, 9000.0])
        m = nx.NarxModel(m=2, n=2, W_in=np.zeros((1, 10)), b_hidden=np.zeros(1), W_out=np.zeros((2, 1)),
                         b_out=Y_SCALER.transform(target), y_scaler=Y_SCALER, u_scaler=U_SCALER)
        rng = np.random.default_rng(3)
        out = nx.rollout(m, (rng.normal(1000, 10, (5, 2)), rng.normal(2000, 10, (5, 3))),
                         rng.normal(2000, 10, (4, 3)), 3)
        np.testing.assert_allclose(out, np.tile(target, (4, 1)), rtol=1e-14)

    def test_zero_horizon_is_forward(self):
        rng = np.random.default_rng(4)
        mdl = random_model(rng)
        yh, uh = Y_SCALER.inverse(rng.standard_normal((6, 2))), U_SCALER.inverse(rng.standard_normal((6, 3)))
        uf = U_SCALER.inverse(rng.standard_normal((1, 3)))
        out = nx.rollout(mdl, (yh, uh), uf, 0)
        w = nx.RegressorWindow(yh[::-1][:mdl.m], np.vstack([uf, uh[::-1]])[:mdl.n])
        np.testing.assert_array_equal(out[0], nx.forward(mdl, w))

    def test_linear_arx_subcase(self):
        a, b = np.array([0.8, 0.6]), np.array([0.5, -0.3])
        W_in = np.zeros((2, 2 * 1 + 3 * 1))
        W_in[0, 0], W_in[1, 1] = a
        W_in[0, 2], W_in[1, 3] = b
        mdl = nx.NarxModel(m=1, n=1, W_in=W_in, b_hidden=np.zeros(2), W_out=np.eye(2), b_out=np.zeros(2),
                           activation="linear")
        rng = np.random.default_rng(5)
        yh, uh = rng.standard_normal((3, 2)), rng.standard_normal((3, 3))
        uf = rng.standard_normal((11, 3))
        np.testing.assert_allclose(nx.rollout(mdl, (yh, uh), uf, 10), oracles.arx_recursion(a, b, yh, uf),
                                   atol=1e-10)

    def test_each_step_is_forward_on_mixed_window(self):
        rng = np.random.default_rng(6)
        mdl = random_model(rng, m=4, n=3)
        yh, uh = Y_SCALER.inverse(rng.standard_normal((8, 2))), U_SCALER.inverse(rng.standard_normal((8, 3)))
        uf = U_SCALER.inverse(rng.standard_normal((6, 3)))
        out = nx.rollout(mdl, (yh, uh), uf, 5)
        for i in range(6):
            ys = np.vstack([yh, out[:i]])[::-1][:mdl.m]
            us = np.vstack([uh, uf[:i + 1]])[::-1][:mdl.n]
            np.testing.assert_array_equal(out[i], nx.forward(mdl, nx.RegressorWindow(ys, us)))

    def test_old_measurements_drop_out(self):
        rng = np.random.default_rng(7)
        mdl = random_model(rng, m=3, n=2)
        yh, uh = Y_SCALER.inverse(rng.standard_normal((6, 2))), U_SCALER.inverse(rng.standard_normal((6, 3)))
        uf = U_SCALER.inverse(rng.standard_normal((4, 3)))
        base = nx.rollout(mdl, (yh, uh), uf, 3)
        y2 = yh.copy()
        y2[:-3] += 500.0  # older than the CV lag window
        np.testing.assert_array_equal(nx.rollout(mdl, (y2, uh), uf, 3), base)

    def test_short_history(self):
        rng = np.random.default_rng(8)
        mdl = random_model(rng, m=4, n=2)
        with pytest.raises(WindowTooShort):
            nx.rollout(mdl, (np.ones((3, 2)), np.ones((3, 3))), np.ones((2, 3)), 1)
        with pytest.raises(WindowTooShort):
            nx.rollout(mdl, (np.ones((5, 2)), np.ones((5, 3))), np.ones((1, 3)), 1)


class TestTraining:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        y, u, _ = oracles.teacher_series(rng, 300, 3, 3, 2)
        prob = nx.build_problem(as_series(y, u), 3, 3, 2)
        theta = rng.uniform(-0.5, 0.5, prob.template.params().size)
        _, grad = prob.loss_and_gradient(theta)
        for i in rng.choice(theta.size, 20, replace=False):
            e = np.zeros_like(theta)
            e[i] = 1e-6
            fd = (prob.loss_and_gradient(theta + e)[0] - prob.loss_and_gradient(theta - e)[0]) / 2e-6
            assert abs(fd - grad[i]) <= 1e-4 * max(abs(fd), abs(grad[i]), 1e-8)

    def test_teacher_student_small(self):
        rng = np.random.default_rng(10)
        y, u, _ = oracles.teacher_series(rng, 1500, 2, 2, 2)
        mdl = nx.train(as_series(y, u), 2, 2, 2, nx.TrainConfig(seed=0))
        assert np.sqrt(mdl.cost) <= 1e-3

    def test_constant_output(self):
        rng = np.random.default_rng(11)
        T = 400
        y = np.tile([1100.0, 9000.0], (T, 1))
        u = U_SCALER.inverse(rng.standard_normal((T, 3)))
        mdl = nx.train(as_series(y, u), 2, 2, 1, nx.TrainConfig(seed=0, restarts=2))
        pred, _ = nx.predict_one_step(mdl, as_series(y, u))
        np.testing.assert_allclose(pred, y[2:], atol=1e-6)

    def test_deterministic(self):
        rng = np.random.default_rng(12)
        y, u, _ = oracles.teacher_series(rng, 400, 2, 2, 1)
        a = nx.train(as_series(y, u), 2, 2, 1, nx.TrainConfig(seed=3, restarts=2))
        b = nx.train(as_series(y, u), 2, 2, 1, nx.TrainConfig(seed=3, restarts=2))
        np.testing.assert_array_equal(a.params(), b.params())

    def test_beats_constant_predictor_and_centred_residuals(self):
        rng = np.random.default_rng(13)
        y, u, _ = oracles.teacher_series(rng, 1200, 2, 2, 2)
        y = y + 0.05 * rng.standard_normal(y.shape)
        s = as_series(y, u)
        mdl = nx.train(s, 2, 2, 2, nx.TrainConfig(seed=0, restarts=3))
        pred, t = nx.predict_one_step(mdl, s)
        r = pred - y[t]
        assert np.all(np.mean(r ** 2, axis=0) < np.var(y[t], axis=0))
        assert np.all(np.abs(r.mean(axis=0)) <= 3 * r.std(axis=0, ddof=1) / np.sqrt(len(r)))

    def test_too_short(self):
        rng = np.random.default_rng(14)
        y, u, _ = oracles.teacher_series(rng, 100, 4, 4, 2)
        with pytest.raises(TrainingDiverged):
            nx.train(as_series(y, u), 4, 4, 2)

    def test_round_trip(self, tmp_path):
        mdl = random_model(np.random.default_rng(15))
        nx.save_model(mdl, tmp_path / "n.json")
        back = nx.load_model(tmp_path / "n.json")
        np.testing.assert_array_equal(back.params(), mdl.params())
        assert (back.m, back.n, back.activation) == (mdl.m, mdl.n, mdl.activation)
        (tmp_path / "bad.json").write_text("{}")
        with pytest.raises(ArtifactError):
            nx.load_model(tmp_path / "bad.json")


class TestStructure:
    def test_single_candidate(self):
        rng = np.random.default_rng(16)
        y, u, _ = oracles.teacher_series(rng, 600, 2, 2, 1)
        s = nx.search_structure(as_series(y, u), [3], [2], config=nx.TrainConfig(restarts=1))
        assert (s.m, s.n, s.hidden_width) == (3, 3, 2)

    def test_dominance(self):
        assert nx.structure_dominates(((8, 8), 2), ((4, 4), 2))
        assert not nx.structure_dominates(((8, 8), 1), ((4, 4), 2))
        assert not nx.structure_dominates(((4, 4), 2), ((4, 4), 2))

    def test_flat_costs_pick_smallest(self):
        from sagtwin.selection import choose_parsimonious
        cands = [((l, l), w) for l in (4, 8, 12) for w in (1, 2, 4)]
        assert choose_parsimonious(cands, [1.0] * len(cands), 0.05,
                                   dominates=nx.structure_dominates) == ((4, 4), 1)

    def test_teacher_structure_found(self):
        rng = np.random.default_rng(17)
        y, u, _ = oracles.teacher_series(rng, 1500, 2, 2, 2)
        y = y + 0.01 * rng.standard_normal(y.shape)
        s = nx.search_structure(as_series(y, u), [1, 2, 3], [1, 2], config=nx.TrainConfig(restarts=3))
        assert (s.m, s.hidden_width) == (2, 2)
