"""One-hidden-layer NARX network for the mill CVs.

The regressor at instant ``t`` holds the ``m`` previous CV samples and the
current plus ``n - 1`` previous MV samples, newest first::

    [y(t-1), ..., y(t-m), u(t), ..., u(t-n+1)]      (2m + 3n values)

and the network predicts ``y(t)``. Training is series-parallel (measured
CVs in the regressor) by Levenberg-Marquardt with random restarts;
:func:`rollout` feeds predictions back for multi-step use.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from itertools import product
from typing import NamedTuple

import numpy as np

from .errors import ArtifactError, ShapeMismatch, TrainingDiverged, WindowTooShort
from .optim import levenberg_marquardt
from .scaling import Scaler
from .selection import choose_parsimonious

logger = logging.getLogger(__name__)

N_CV, N_MV = 2, 3
FORMAT_VERSION = 1
DEFAULT_LAGS = 12
DEFAULT_WIDTH = 2

ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "linear": (lambda z: z, np.ones_like),
}


@dataclass(frozen=True)
class NarxModel:
    m: int
    n: int
    W_in: np.ndarray
    b_hidden: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    activation: str = "tanh"
    y_scaler: Scaler = None
    u_scaler: Scaler = None
    seed: int = 0
    cost: float = float("nan")

    def __post_init__(self):
        W_in = np.atleast_2d(np.asarray(self.W_in, dtype=float))
        h = W_in.shape[0]
        d = N_CV * self.m + N_MV * self.n
        if W_in.shape != (h, d):
            raise ShapeMismatch(f"W_in must be {h}x{d} for m={self.m}, n={self.n}; got {W_in.shape}")
        b_hidden = np.asarray(self.b_hidden, dtype=float).reshape(-1)
        W_out = np.asarray(self.W_out, dtype=float).reshape(N_CV, -1)
        b_out = np.asarray(self.b_out, dtype=float).reshape(-1)
        if b_hidden.shape != (h,) or W_out.shape != (N_CV, h) or b_out.shape != (N_CV,):
            raise ShapeMismatch("hidden/output layer shapes are inconsistent")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        y_scaler = Scaler.identity(N_CV) if self.y_scaler is None else self.y_scaler
        u_scaler = Scaler.identity(N_MV) if self.u_scaler is None else self.u_scaler
        if len(y_scaler) != N_CV or len(u_scaler) != N_MV:
            raise ShapeMismatch("scalers must cover 2 CVs and 3 MVs")
        for name, arr in (("W_in", W_in), ("b_hidden", b_hidden), ("W_out", W_out), ("b_out", b_out)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "y_scaler", y_scaler)
        object.__setattr__(self, "u_scaler", u_scaler)

    @property
    def hidden_width(self):
        return self.W_in.shape[0]

    @property
    def input_dim(self):
        return N_CV * self.m + N_MV * self.n

    @property
    def burn_in(self):
        return max(self.m, self.n - 1)

    def params(self):
        return np.concatenate([self.W_in.ravel(), self.b_hidden, self.W_out.ravel(), self.b_out])

    def with_params(self, theta, **changes):
        h, d = self.hidden_width, self.input_dim
        i = h * d
        return replace(
            self,
            W_in=theta[:i].reshape(h, d), b_hidden=theta[i:i + h],
            W_out=theta[i + h:i + h + N_CV * h].reshape(N_CV, h), b_out=theta[i + h + N_CV * h:],
            **changes,
        )

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "narx",
            "m": self.m, "n": self.n, "hidden_width": self.hidden_width,
            "activation": self.activation,
            "y_scaler": self.y_scaler.to_dict(), "u_scaler": self.u_scaler.to_dict(),
            "W_in": self.W_in.tolist(), "b_hidden": self.b_hidden.tolist(),
            "W_out": self.W_out.tolist(), "b_out": self.b_out.tolist(),
            "seed": self.seed, "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "narx":
            raise ArtifactError("not a NARX model artifact of a supported version")
        return cls(
            m=int(d["m"]), n=int(d["n"]), W_in=np.asarray(d["W_in"]), b_hidden=d["b_hidden"],
            W_out=np.asarray(d["W_out"]), b_out=d["b_out"], activation=d["activation"],
            y_scaler=Scaler.from_dict(d["y_scaler"]), u_scaler=Scaler.from_dict(d["u_scaler"]),
            seed=int(d["seed"]), cost=float(d["cost"]),
        )


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    try:
        with open(path) as fh:
            return NarxModel.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ArtifactError(f"cannot load NARX model from {path}: {exc}") from exc


class RegressorWindow(NamedTuple):
    past_y: np.ndarray  # (m, 2), newest first
    past_u: np.ndarray  # (n, 3), newest first, row 0 is the current MV


def _scaled_regressor(model, window):
    py = np.asarray(window.past_y, dtype=float)
    pu = np.asarray(window.past_u, dtype=float)
    if py.shape != (model.m, N_CV) or pu.shape != (model.n, N_MV):
        raise ShapeMismatch(
            f"window is y{py.shape}/u{pu.shape}, model needs y({model.m}, 2)/u({model.n}, 3)")
    return np.concatenate([model.y_scaler.transform(py).ravel(), model.u_scaler.transform(pu).ravel()])


def _network(model, X):
    act = ACTIVATIONS[model.activation][0]
    return act(X @ model.W_in.T + model.b_hidden) @ model.W_out.T + model.b_out


def forward(model, window):
    """Predict the CV pair for one regressor window (engineering units)."""
    x = _scaled_regressor(model, window)
    return model.y_scaler.inverse(_network(model, x[None, :])[0])


def regressors(model_or_lags, y, u, start=None):
    """Stack regressor rows (unscaled) for every instant ``t >= start``.

    Returns ``(X, targets, t_index)``.
    """
    if isinstance(model_or_lags, NarxModel):
        m, n = model_or_lags.m, model_or_lags.n
    else:
        m, n = model_or_lags
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    burn = max(m, n - 1)
    start = burn if start is None else max(start, burn)
    T = y.shape[0]
    t = np.arange(start, T)
    if t.size == 0:
        return np.empty((0, N_CV * m + N_MV * n)), np.empty((0, N_CV)), t
    ylag = np.stack([y[t - j] for j in range(1, m + 1)], axis=1).reshape(t.size, -1)
    ulag = np.stack([u[t - j] for j in range(0, n)], axis=1).reshape(t.size, -1)
    return np.hstack([ylag, ulag]), y[t], t


def _scale_rows(model, X):
    m = model.m
    Xs = np.empty_like(X)
    Xs[:, :N_CV * m] = model.y_scaler.transform(X[:, :N_CV * m].reshape(-1, N_CV)).reshape(X.shape[0], -1)
    Xs[:, N_CV * m:] = model.u_scaler.transform(X[:, N_CV * m:].reshape(-1, N_MV)).reshape(X.shape[0], -1)
    return Xs


def predict_one_step(model, series):
    """Series-parallel predictions for every instant with a full regressor.

    Returns ``(y_hat, t_index)`` with ``y_hat`` in engineering units.
    """
    X, _, t = regressors(model, series.y, series.u)
    if t.size == 0:
        return np.empty((0, N_CV)), t
    return model.y_scaler.inverse(_network(model, _scale_rows(model, X))), t


def proportional_residuals(model, series):
    """``(y_hat - y) / y`` of the one-step predictions; returns ``(residuals, t_index)``."""
    y_hat, t = predict_one_step(model, series)
    y = np.asarray(series.y)[t]
    return (y_hat - y) / y, t


def rollout(model, history, future_u, N):
    """Multi-step prediction feeding predictions back into the CV lags.

    Parameters
    ----------
    history : SampledSeries or (y, u) arrays
        Measurements up to instant ``k - 1`` (oldest first); at least ``m``
        CV and ``n - 1`` MV samples are needed.
    future_u : array of shape (>= N + 1, 3)
        MV trajectory for instants ``k .. k + N``.
    N : int

    Returns
    -------
    ndarray of shape (N + 1, 2)
        ``y_hat(k|k) .. y_hat(k+N|k)``.
    """
    if hasattr(history, "y"):
        y_hist, u_hist = np.asarray(history.y), np.asarray(history.u)
    else:
        y_hist, u_hist = (np.asarray(a, dtype=float) for a in history)
    future_u = np.asarray(future_u, dtype=float).reshape(-1, N_MV)
    if y_hist.shape[0] < model.m or u_hist.shape[0] < model.n - 1:
        raise WindowTooShort(f"history holds {y_hist.shape[0]} samples; model needs "
                             f"{model.m} CV and {model.n - 1} MV samples")
    if future_u.shape[0] < N + 1:
        raise WindowTooShort(f"need {N + 1} future MV samples, got {future_u.shape[0]}")
    ys = list(y_hist[::-1][:model.m])
    us = list(u_hist[::-1][:max(model.n - 1, 0)])
    out = np.empty((N + 1, N_CV))
    for i in range(N + 1):
        us.insert(0, future_u[i])
        window = RegressorWindow(np.array(ys[:model.m]), np.array(us[:model.n]).reshape(model.n, N_MV))
        out[i] = forward(model, window)
        ys.insert(0, out[i])
    return out


# -- training ---------------------------------------------------------------

class NarxProblem:
    """Series-parallel least-squares problem in scaled units.

    ``residuals(theta)`` stacks ``y_hat - y`` row-major; ``jacobian`` is
    analytic; ``loss_and_gradient`` returns ``0.5 * ||r||^2`` and its
    gradient.
    """

    def __init__(self, template, Xs, Ys):
        self.template = template
        self.Xs, self.Ys = Xs, Ys
        self.h, self.d = template.hidden_width, template.input_dim
        self.act, self.dact = ACTIVATIONS[template.activation]

    def _split(self, theta):
        h, d = self.h, self.d
        i = h * d
        W_in = theta[:i].reshape(h, d)
        b_h = theta[i:i + h]
        W_out = theta[i + h:i + h + N_CV * h].reshape(N_CV, h)
        b_out = theta[i + h + N_CV * h:]
        return W_in, b_h, W_out, b_out

    def _hidden(self, theta):
        W_in, b_h, W_out, b_out = self._split(theta)
        return self.act(self.Xs @ W_in.T + b_h), W_out, b_out

    def residuals(self, theta):
        H, W_out, b_out = self._hidden(theta)
        return (H @ W_out.T + b_out - self.Ys).ravel()

    def jacobian(self, theta):
        H, W_out, _ = self._hidden(theta)
        T, h, d = self.Xs.shape[0], self.h, self.d
        dH = self.dact(H)
        J = np.zeros((T, N_CV, h * d + h + N_CV * h + N_CV))
        for o in range(N_CV):
            g = dH * W_out[o]  # (T, h)
            J[:, o, :h * d] = (g[:, :, None] * self.Xs[:, None, :]).reshape(T, h * d)
            J[:, o, h * d:h * d + h] = g
            J[:, o, h * d + h + o * h:h * d + h + (o + 1) * h] = H
            J[:, o, h * d + h + N_CV * h + o] = 1.0
        return J.reshape(T * N_CV, -1)

    def loss_and_gradient(self, theta):
        r = self.residuals(theta)
        return 0.5 * float(r @ r), self.jacobian(theta).T @ r


@dataclass(frozen=True)
class TrainConfig:
    restarts: int = 5
    max_iter: int = 200
    seed: int = 0
    activation: str = "tanh"
    init_range: float = 0.5


def _as_segments(train):
    return list(train) if isinstance(train, (list, tuple)) else [train]


def build_problem(train, m, n, hidden_width, activation="tanh"):
    """Assemble the scaled regression problem for one or more contiguous segments."""
    segs = _as_segments(train)
    parts = [regressors((m, n), s.y, s.u) for s in segs]
    X = np.vstack([p[0] for p in parts])
    Y = np.vstack([p[1] for p in parts])
    y_scaler = Scaler.fit(np.vstack([s.y for s in segs]))
    u_scaler = Scaler.fit(np.vstack([s.u for s in segs]))
    d = N_CV * m + N_MV * n
    h = hidden_width
    template = NarxModel(
        m=m, n=n, W_in=np.zeros((h, d)), b_hidden=np.zeros(h), W_out=np.zeros((N_CV, h)),
        b_out=np.zeros(N_CV), activation=activation, y_scaler=y_scaler, u_scaler=u_scaler,
    )
    Xs = _scale_rows(template, X) if X.size else X
    return NarxProblem(template, Xs, y_scaler.transform(Y))


def train(train, m=DEFAULT_LAGS, n=DEFAULT_LAGS, hidden_width=DEFAULT_WIDTH, config=TrainConfig()):
    """Fit the NARX network on one-step (series-parallel) errors.

    Parameters
    ----------
    train : SampledSeries or list of SampledSeries
        Contiguous segments; regressors never straddle segment boundaries.

    Returns
    -------
    NarxModel
        The best of ``config.restarts`` Levenberg-Marquardt runs; ``cost``
        is the mean squared scaled one-step error.

    Raises
    ------
    TrainingDiverged
        If every restart ends with a non-finite cost.
    """
    segs = _as_segments(train)
    total = sum(len(s) for s in segs)
    d = N_CV * m + N_MV * n
    need = 10 * d + max(m, n)
    if total <= need:
        raise TrainingDiverged(f"{total} training samples, need more than {need}")
    problem = build_problem(segs, m, n, hidden_width, config.activation)
    n_par = problem.template.params().size
    rng = np.random.default_rng(config.seed)
    inits = [rng.uniform(-config.init_range, config.init_range, n_par) for _ in range(config.restarts)]
    best, best_cost = None, np.inf
    for i, theta0 in enumerate(inits):
        with np.errstate(over="ignore", invalid="ignore"):
            res = levenberg_marquardt(problem.residuals, problem.jacobian, theta0, max_iter=config.max_iter)
        cost = float(np.mean(res.fun ** 2)) if res.status >= 0 else np.inf
        logger.debug("restart %d: cost %.4e after %d iterations (%s)", i, cost, res.nit, res.message)
        if np.isfinite(cost) and cost < best_cost:
            best, best_cost = res.x, cost
    if best is None:
        raise TrainingDiverged("all restarts produced non-finite costs")
    baseline = float(np.mean((problem.Ys - problem.Ys.mean(axis=0)) ** 2))
    if best_cost >= baseline:
        logger.warning("NARX fit (%.4g) does not beat the constant predictor (%.4g)", best_cost, baseline)
    return problem.template.with_params(best, seed=config.seed, cost=best_cost)


def validation_cost(model, series):
    X, Y, _ = regressors(model, series.y, series.u)
    pred = _network(model, _scale_rows(model, X))
    return float(np.mean((pred - model.y_scaler.transform(Y)) ** 2))


@dataclass
class StructureSearch:
    m: int
    n: int
    hidden_width: int
    costs: dict = field(default_factory=dict)  # ((m, n), width) -> validation cost


def _lag_pair(lag):
    return (int(lag), int(lag)) if np.isscalar(lag) else tuple(int(v) for v in lag)


def structure_dominates(a, b):
    """True when structure ``a = ((m, n), width)`` is at least as large as ``b`` everywhere and differs."""
    (la, wa), (lb, wb) = a, b
    return a != b and all(x >= y for x, y in zip(la, lb)) and wa >= wb


def search_structure(data, candidate_lags=(4, 8, 12, 16), candidate_widths=(1, 2, 4, 8),
                     improvement_threshold=0.05, validation=None, config=TrainConfig()):
    """Train every (lags, width) combination and keep the parsimonious one.

    Lags may be ints (``m = n``) or ``(m, n)`` pairs. Without an explicit
    ``validation`` series the last quarter of ``data`` is held out. A
    combination counts as larger than another when neither its lags nor its
    width are smaller.
    """
    if validation is None:
        cut = int(0.75 * len(data))
        data, validation = data[:cut], data[cut:]
    candidates = [(_lag_pair(l), int(w)) for l, w in product(candidate_lags, candidate_widths)]
    if not candidates:
        raise ValueError("no structure candidates")
    costs = {}
    for (m, n), w in candidates:
        model = train(data, m, n, w, config)
        costs[((m, n), w)] = validation_cost(model, validation)
        logger.info("structure m=%d n=%d width=%d: validation cost %.4e", m, n, w, costs[((m, n), w)])

    if len(candidates) == 1:
        choice = candidates[0]
    else:
        choice = choose_parsimonious(candidates, [costs[c] for c in candidates],
                                     improvement_threshold, dominates=structure_dominates)
    (m, n), w = choice
    return StructureSearch(m, n, w, costs)


def select_structure(data, candidate_lags=(4, 8, 12, 16), candidate_widths=(1, 2, 4, 8),
                     improvement_threshold=0.05, validation=None, config=TrainConfig()):
    s = search_structure(data, candidate_lags, candidate_widths, improvement_threshold, validation, config)
    return s.m, s.n, s.hidden_width

