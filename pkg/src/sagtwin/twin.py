"""Closed-loop digital twin: supervisor, regulatory loops and NARX in series.

Starting from measured history up to instant ``k - 1`` the twin repeats, for
``i = 0 .. N``:

1. the fuzzy supervisor looks at the latest CV/MV window (measured samples
   first, then the twin's own predictions) and moves the setpoints,
2. the regulatory state-space model turns setpoints into MVs,
3. the NARX model turns the CV and MV lags into the next CV pair.

Candidate CV limits can be scored by rolling the twin out once per candidate
(:func:`evaluate_supervisor`), and prediction errors over a test set are
summarised per horizon by :func:`error_report`.
"""

import csv
import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import expert as ex
from .errors import AllInfeasible, InsufficientData, ShapeMismatch, WindowTooShort
from .narx import NarxModel, RegressorWindow, forward
from .regulatory import EstimationConfig, StateSpaceModel, advance, estimate_online

N_CV, N_MV = 2, 3
MIN_PAIRS = 30
HIST_BINS = 41
HIST_SPAN = 5.0  # histogram covers mean +/- HIST_SPAN std


@dataclass(frozen=True)
class HorizonConfig:
    N: int = 5
    sample_period: float = 30.0

    def __post_init__(self):
        if self.N < 0:
            raise ValueError("N must be non-negative")
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")


@dataclass(frozen=True)
class Bounds:
    """Candidate limits and the feasible boxes.

    Attributes
    ----------
    y_lim_grid : tuple of two 1-D arrays
        Candidate limits per CV; candidates are their Cartesian product in
        row-major order (pressure varies slowest).
    y_box : array of shape (2, 2)
        ``(low, high)`` per CV.
    u_box : array of shape (3, 2)
        ``(low, high)`` per MV.
    """

    y_lim_grid: tuple
    y_box: np.ndarray
    u_box: np.ndarray

    def __post_init__(self):
        grid = tuple(np.asarray(g, dtype=float).reshape(-1) for g in self.y_lim_grid)
        if len(grid) != N_CV or any(g.size == 0 for g in grid):
            raise ValueError("y_lim_grid needs a non-empty candidate list per CV")
        if any(not np.all(np.isfinite(g)) or np.any(g <= 0) for g in grid):
            raise ValueError("candidate limits must be finite and positive")
        yb = np.asarray(self.y_box, dtype=float).reshape(N_CV, 2)
        ub = np.asarray(self.u_box, dtype=float).reshape(N_MV, 2)
        if np.any(yb[:, 0] > yb[:, 1]) or np.any(ub[:, 0] > ub[:, 1]):
            raise ValueError("boxes must have low <= high")
        object.__setattr__(self, "y_lim_grid", grid)
        object.__setattr__(self, "y_box", yb)
        object.__setattr__(self, "u_box", ub)

    def candidates(self):
        return [np.array(c) for c in itertools.product(*self.y_lim_grid)]

    def feasible(self, y, u):
        """Per-row box membership of CV rows ``y`` and MV rows ``u``."""
        y, u = np.atleast_2d(y), np.atleast_2d(u)
        ok_y = np.all((y >= self.y_box[:, 0]) & (y <= self.y_box[:, 1]), axis=1)
        ok_u = np.all((u >= self.u_box[:, 0]) & (u <= self.u_box[:, 1]), axis=1)
        return ok_y & ok_u


@dataclass(frozen=True)
class TwinComponents:
    rulebase: ex.FuzzyRuleBase
    regulatory: StateSpaceModel
    narx: NarxModel

    @property
    def lag_window(self):
        """Measured samples needed before the first prediction."""
        return max(self.narx.m, self.narx.n - 1, self.rulebase.slope_window, 1)


class TwinPrediction(NamedTuple):
    y_hat: np.ndarray  # (N+1, 2)
    u_hat: np.ndarray  # (N+1, 3)
    u_sp_hat: np.ndarray  # (N+1, 3)
    feasible: np.ndarray  # (N+1,) bool


def _history_arrays(history):
    if hasattr(history, "y"):
        return (np.asarray(history.y, dtype=float), np.asarray(history.u, dtype=float),
                np.asarray(history.u_sp, dtype=float))
    y, u, u_sp = (np.asarray(a, dtype=float) for a in history)
    return y, u, u_sp


def rollout_closed_loop(components, history, y_lim, horizon=HorizonConfig(), bounds=None, x=None):
    """Predict ``N + 1`` closed-loop steps from instant ``k``.

    Parameters
    ----------
    components : TwinComponents
        The regulatory model should already carry the online estimate for
        instant ``k`` (see :func:`prepare_regulatory`).
    history : SampledSeries or (y, u, u_sp) arrays
        Measurements up to ``k - 1``, oldest first.
    y_lim : array of shape (2,)
        CV limits handed to the supervisor over the whole horizon.
    horizon : HorizonConfig
    bounds : Bounds, optional
        Feasibility boxes; without them every step is flagged feasible.
    x : array, optional
        Regulatory state at ``k``; defaults to ``components.regulatory.x0``.

    Returns
    -------
    TwinPrediction
    """
    y_hist, u_hist, sp_hist = _history_arrays(history)
    if y_hist.ndim != 2 or y_hist.shape[1] != N_CV or u_hist.shape[1:] != (N_MV,) or sp_hist.shape[1:] != (N_MV,):
        raise ShapeMismatch("history must hold (L, 2) CVs and (L, 3) MVs and setpoints")
    if not (y_hist.shape[0] == u_hist.shape[0] == sp_hist.shape[0]):
        raise ShapeMismatch("history channels differ in length")
    need = components.lag_window
    if y_hist.shape[0] < need:
        raise WindowTooShort(f"history holds {y_hist.shape[0]} samples, the twin needs {need}")
    y_lim = np.asarray(y_lim, dtype=float).reshape(-1)
    if y_lim.shape != (N_CV,):
        raise ShapeMismatch("y_lim must hold one limit per CV")

    rb, reg, net = components.rulebase, components.regulatory, components.narx
    keep = max(need, net.n)
    ys = list(y_hist[-keep:])
    us = list(u_hist[-keep:])
    u_sp = sp_hist[-1].copy()
    x = np.asarray(reg.x0 if x is None else x, dtype=float)
    s = rb.slope_window
    steps = horizon.N + 1
    y_out = np.empty((steps, N_CV))
    u_out = np.empty((steps, N_MV))
    sp_out = np.empty((steps, N_MV))
    for i in range(steps):
        cmd = ex.step(rb, np.array(ys[-s:]), np.array(us[-s:]), y_lim)
        u_sp = ex.apply_command(rb, u_sp, cmd)
        u_i, x = advance(reg, x, u_sp)
        us.append(u_i)
        window = RegressorWindow(np.array(ys[::-1][:net.m]), np.array(us[::-1][:net.n]))
        y_i = forward(net, window)
        ys.append(y_i)
        y_out[i], u_out[i], sp_out[i] = y_i, u_i, u_sp
    ok = np.ones(steps, dtype=bool) if bounds is None else bounds.feasible(y_out, u_out)
    return TwinPrediction(y_out, u_out, sp_out, ok)


def prepare_regulatory(model, history, config=EstimationConfig()):
    """Regulatory model re-estimated on the last ``N_E`` records of ``history``."""
    est = estimate_online(model, history, config)
    return model.with_estimate(est.x0, est.e)


def negative_mean_feed(prediction):
    """Default objective: minus the mean predicted feed tonnage."""
    return -float(np.mean(prediction.u_hat[:, 0]))


class CandidateScore(NamedTuple):
    index: int
    y_lim: np.ndarray
    score: float
    feasible: bool


def evaluate_supervisor(components, history, bounds, objective=negative_mean_feed, horizon=HorizonConfig(),
                        x=None):
    """Score every candidate limit pair and pick the best feasible one.

    A candidate whose rollout leaves a box at any step is discarded. Among
    the rest the lowest objective wins; ties go to the earliest candidate.

    Returns
    -------
    (ndarray, list of CandidateScore)

    Raises
    ------
    AllInfeasible
        When no candidate stays inside the boxes; carries the score table.
    """
    table = []
    for idx, cand in enumerate(bounds.candidates()):
        pred = rollout_closed_loop(components, history, cand, horizon, bounds, x)
        table.append(CandidateScore(idx, cand, float(objective(pred)), bool(np.all(pred.feasible))))
    best = None
    for row in table:
        if row.feasible and (best is None or row.score < best.score):
            best = row
    if best is None:
        raise AllInfeasible(table)
    return best.y_lim.copy(), table


# -- error reporting ----------------------------------------------------------

def collect_predictions(components, series, y_lim, horizon=HorizonConfig(), start=None, stop=None,
                        estimation=EstimationConfig(), stride=1):
    """Moving-horizon rollouts over a measured series.

    At each instant ``k`` the regulatory model is re-estimated on the
    records before ``k`` and the twin is rolled out; predictions are paired
    with the measurements at ``k .. k + N``.

    Returns
    -------
    (y_hat, y_meas, k_index)
        ``y_hat`` and ``y_meas`` have shape ``(K, N + 1, 2)``.
    """
    L = len(series)
    first = max(components.lag_window, estimation.N_E)
    start = first if start is None else max(start, first)
    stop = L - horizon.N if stop is None else min(stop, L - horizon.N)
    ks = np.arange(start, stop, stride)
    if ks.size == 0:
        raise InsufficientData(f"series of {L} samples is too short for N={horizon.N}")
    y_hat = np.empty((ks.size, horizon.N + 1, N_CV))
    y_meas = np.empty_like(y_hat)
    for row, k in enumerate(ks):
        hist = series[:k]
        comp = TwinComponents(components.rulebase, prepare_regulatory(components.regulatory, hist, estimation),
                              components.narx)
        y_hat[row] = rollout_closed_loop(comp, hist, y_lim, horizon).y_hat
        y_meas[row] = series.y[k:k + horizon.N + 1]
    return y_hat, y_meas, ks


@dataclass(frozen=True)
class ErrorStats:
    horizon: int
    cv: str
    mean: float
    std: float
    p005: float
    p995: float
    acf1: float
    n: int
    bin_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)


def _acf1(x):
    d = x - x.mean()
    den = d @ d
    return 0.0 if den <= 0 else float((d[1:] @ d[:-1]) / den)


def error_report(y_hat, y_meas, cv_names=ex.CV_NAMES):
    """Proportional error statistics per horizon and CV.

    Parameters
    ----------
    y_hat, y_meas : arrays of shape (K, H, 2)
        Column ``j`` holds the prediction ``j + 1`` steps past the last
        measurement used, so horizons are numbered ``1 .. H``.

    Returns
    -------
    list of ErrorStats
        Ordered by horizon, then CV.

    Raises
    ------
    InsufficientData
        If some horizon has fewer than 30 finite pairs.
    """
    y_hat = np.asarray(y_hat, dtype=float)
    y_meas = np.asarray(y_meas, dtype=float)
    if y_hat.ndim == 2:
        y_hat, y_meas = y_hat[:, None, :], y_meas[:, None, :]
    if y_hat.shape != y_meas.shape or y_hat.ndim != 3 or y_hat.shape[2] != len(cv_names):
        raise ShapeMismatch(f"predictions {y_hat.shape} and measurements {y_meas.shape} do not align")
    with np.errstate(divide="ignore", invalid="ignore"):
        err = (y_hat - y_meas) / y_meas
    out = []
    for h in range(y_hat.shape[1]):
        for j, cv in enumerate(cv_names):
            e = err[:, h, j]
            e = e[np.isfinite(e)]
            if e.size < MIN_PAIRS:
                raise InsufficientData(f"horizon {h + 1} of {cv} has {e.size} pairs, needs {MIN_PAIRS}")
            mean, std = float(e.mean()), float(e.std(ddof=1))
            span = HIST_SPAN * std if std > 0 else 1.0
            edges = np.linspace(mean - span, mean + span, HIST_BINS + 1)
            counts, _ = np.histogram(e, bins=edges)
            lo, hi = np.percentile(e, [0.5, 99.5])
            out.append(ErrorStats(h + 1, cv, mean, std, float(lo), float(hi), _acf1(e), int(e.size), edges, counts))
    return out


def quality_gate(stats, bands, horizon):
    """Check the central 99 % interval of each CV against a symmetric band.

    Parameters
    ----------
    bands : dict
        ``cv -> half-width`` as a fraction, e.g. ``{"y1": 0.01, "y2": 0.05}``.

    Returns
    -------
    dict
        ``cv -> bool``.
    """
    result = {}
    for s in stats:
        if s.horizon == horizon and s.cv in bands:
            result[s.cv] = bool(-bands[s.cv] <= s.p005 and s.p995 <= bands[s.cv])
    missing = set(bands) - set(result)
    if missing:
        raise KeyError(f"no statistics for {sorted(missing)} at horizon {horizon}")
    return result


REPORT_HEADER = ("horizon", "cv", "mean", "std", "p005", "p995", "acf1")
HISTOGRAM_HEADER = ("horizon", "cv", "bin_low", "bin_high", "count")
TRACE_HEADER = ("k", "i", "y1_hat", "y2_hat", "u1_hat", "u2_hat", "u3_hat",
                "u1_sp_hat", "u2_sp_hat", "u3_sp_hat", "feasible")


def write_report(stats, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for s in stats:
            w.writerow([s.horizon, s.cv, repr(s.mean), repr(s.std), repr(s.p005), repr(s.p995), repr(s.acf1)])


def write_histograms(stats, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTOGRAM_HEADER)
        for s in stats:
            for lo, hi, c in zip(s.bin_edges[:-1], s.bin_edges[1:], s.counts):
                w.writerow([s.horizon, s.cv, repr(float(lo)), repr(float(hi)), int(c)])


def trace_rows(k, prediction):
    for i in range(prediction.y_hat.shape[0]):
        yield (int(k), i, *map(float, prediction.y_hat[i]), *map(float, prediction.u_hat[i]),
               *map(float, prediction.u_sp_hat[i]), int(bool(prediction.feasible[i])))


def write_trace(rows, path, append=False):
    """Write prediction trace rows; the header goes only into a new file."""
    mode = "a" if append else "w"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh)
        if not append or fh.tell() == 0:
            w.writerow(TRACE_HEADER)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
