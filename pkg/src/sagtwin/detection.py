"""Residual drift detection and retraining trigger.

The one-step proportional errors of the NARX model on its training data are
summarised once (:func:`fingerprint`). Online, the last ``N_D`` errors of
each CV are compared against that summary with four two-sided tests: mean,
variance, distribution and lag-1 autocorrelation. A per-CV counter ``M``
restarts at 0 whenever all four pass and grows by one otherwise; the CV
triggers retraining once ``M`` exceeds its threshold ``M_D``. The trigger
stays latched until a retraining succeeds.
"""

import csv
import json
import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import InsufficientData, RetrainDeferred, SegmentTooShort, TrainingDiverged, WindowNotFull
from .pipeline import filter_valid

logger = logging.getLogger(__name__)

CV_LABELS = ("y1", "y2")
ECDF_POINTS = 2000
MIN_BASELINE = 100
TESTS = ("mean", "var", "ks", "acf")


def lag1_autocorrelation(x):
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    den = d @ d
    if x.size < 2 or den <= 0.0:
        return 0.0  # a constant series carries no correlation
    return float(np.clip((d[1:] @ d[:-1]) / den, -1.0, 1.0))


@dataclass(frozen=True)
class ResidualFingerprint:
    mean: float
    variance: float
    ecdf_sample: np.ndarray  # sorted, at most ECDF_POINTS values
    acf1: float
    n: int

    def to_dict(self):
        return {"mean": self.mean, "variance": self.variance, "acf1": self.acf1, "n": self.n,
                "ecdf_sample": self.ecdf_sample.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["mean"]), float(d["variance"]), np.asarray(d["ecdf_sample"], dtype=float),
                   float(d["acf1"]), int(d["n"]))


def fingerprint(residuals):
    """Summarise training residuals of one CV.

    The empirical CDF is kept as a sorted sample; long series are thinned to
    at most ``ECDF_POINTS`` order statistics at evenly spaced ranks.
    """
    r = np.asarray(residuals, dtype=float).reshape(-1)
    if r.size < MIN_BASELINE:
        raise InsufficientData(f"a fingerprint needs {MIN_BASELINE} residuals, got {r.size}")
    if not np.all(np.isfinite(r)):
        raise InsufficientData("residuals contain non-finite values")
    srt = np.sort(r)
    if srt.size > ECDF_POINTS:
        idx = np.round(np.linspace(0, srt.size - 1, ECDF_POINTS)).astype(int)
        srt = srt[idx]
    return ResidualFingerprint(float(r.mean()), float(r.var(ddof=1)), srt, lag1_autocorrelation(r), int(r.size))


class TestResult(NamedTuple):
    mean_p: float
    var_p: float
    ks_p: float
    acf_p: float
    passed: tuple  # one bool per test, same order

    __test__ = False  # not a pytest class

    @property
    def all_pass(self):
        return all(self.passed)


def _mean_p(base, w):
    mw, vw, nw = float(w.mean()), float(w.var(ddof=1)), w.size
    if base.variance == 0.0 and vw == 0.0:
        return 1.0 if mw == base.mean else 0.0
    return float(stats.ttest_ind_from_stats(mw, np.sqrt(vw), nw, base.mean, np.sqrt(base.variance), base.n,
                                            equal_var=False).pvalue)


def _var_p(base, w):
    vw = float(w.var(ddof=1))
    if vw == 0.0:
        return 1.0 if base.variance == 0.0 else 0.0  # degenerate window: maximally non-baseline
    if base.variance == 0.0:
        return 0.0
    f = stats.f(w.size - 1, base.n - 1)
    ratio = vw / base.variance
    return float(min(1.0, 2.0 * min(f.cdf(ratio), f.sf(ratio))))


def _ks_p(base, w):
    if np.ptp(w) == 0.0 and np.ptp(base.ecdf_sample) > 0.0:
        return 0.0
    return float(stats.ks_2samp(w, base.ecdf_sample).pvalue)


def _acf_p(base, w):
    rw = np.clip(lag1_autocorrelation(w), -0.999999, 0.999999)
    rb = np.clip(base.acf1, -0.999999, 0.999999)
    se = np.sqrt(1.0 / (w.size - 3) + 1.0 / max(base.n - 3, 1))
    z = (np.arctanh(rw) - np.arctanh(rb)) / se
    return float(2.0 * stats.norm.sf(abs(z)))


def test_battery(baseline, window, alpha=0.01, N_D=None):
    """Run the four two-sided tests of a window against the baseline.

    Returns
    -------
    TestResult
        p-values and per-test pass flags; a test passes when its p-value is
        at least ``alpha``.

    Raises
    ------
    WindowNotFull
        If the window is shorter than ``N_D`` (or than 4 samples).
    """
    w = np.asarray(window, dtype=float).reshape(-1)
    need = 4 if N_D is None else N_D
    if w.size < need:
        raise WindowNotFull(f"window holds {w.size} residuals, needs {need}")
    p = (_mean_p(baseline, w), _var_p(baseline, w), _ks_p(baseline, w), _acf_p(baseline, w))
    return TestResult(*p, passed=tuple(bool(v >= alpha) for v in p))


test_battery.__test__ = False


@dataclass(frozen=True)
class DetectionConfig:
    N_D: int = 30
    alpha: float = 0.01
    M_D: tuple = (103, 181)
    N_E_retrain: int = 1000
    min_retrain: int = 700

    def __post_init__(self):
        if self.N_D < 10:
            raise ValueError("N_D must be at least 10")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if len(self.M_D) != len(CV_LABELS) or min(self.M_D) < 1:
            raise ValueError("M_D needs one threshold >= 1 per CV")


@dataclass(frozen=True)
class DetectionState:
    baseline: tuple  # ResidualFingerprint per CV
    windows: tuple = None  # tuple of tuples, newest last
    M: tuple = (0, 0)
    triggered: tuple = (False, False)
    k: int = 0
    last: tuple = (None, None)  # TestResult per CV from the latest update

    def __post_init__(self):
        if self.windows is None:
            object.__setattr__(self, "windows", tuple(() for _ in self.baseline))


def initial_state(baselines):
    return DetectionState(tuple(baselines))


def update(state, residual, config=DetectionConfig()):
    """Feed one residual per CV and advance counters and triggers.

    The residual pair is pushed into the windows; once a window is full the
    battery is run, an all-pass resets ``M`` to 0 and any failure adds one.
    A CV whose ``M`` exceeds its ``M_D`` is latched as triggered.
    """
    residual = np.asarray(residual, dtype=float).reshape(-1)
    windows, M, trig, last = [], [], [], []
    for j, base in enumerate(state.baseline):
        w = (state.windows[j] + (float(residual[j]),))[-config.N_D:]
        m, t, res = state.M[j], state.triggered[j], None
        if len(w) == config.N_D:
            res = test_battery(base, w, config.alpha, config.N_D)
            m = 0 if res.all_pass else m + 1
            t = t or m > config.M_D[j]
        windows.append(w)
        M.append(m)
        trig.append(t)
        last.append(res)
    return replace(state, windows=tuple(windows), M=tuple(M), triggered=tuple(trig),
                   k=state.k + 1, last=tuple(last))


class DriftDetector:
    """Sequential wrapper around :func:`update` that records a log.

    Parameters
    ----------
    baselines : sequence of ResidualFingerprint
    config : DetectionConfig
    """

    def __init__(self, baselines, config=DetectionConfig()):
        self.config = config
        self.state = initial_state(baselines)
        self.log = []  # rows matching LOG_HEADER
        self.events = []
        self.first_trigger = [None] * len(CV_LABELS)

    def update(self, residual, k=None):
        k = self.state.k if k is None else k
        prev = self.state.triggered
        self.state = update(self.state, residual, self.config)
        for j, cv in enumerate(CV_LABELS):
            res = self.state.last[j]
            p = (np.nan,) * 4 if res is None else res[:4]
            self.log.append((k, cv, float(residual[j]), *p, self.state.M[j], int(self.state.triggered[j])))
            if self.state.triggered[j] and not prev[j]:
                self.first_trigger[j] = k if self.first_trigger[j] is None else self.first_trigger[j]
                self.events.append({"event": "retrain_trigger", "k": int(k), "cv": cv, "M": int(self.state.M[j])})
                logger.info("retraining trigger on %s at k=%d", cv, k)
        return self.state

    def run(self, residuals, k_index=None):
        residuals = np.asarray(residuals, dtype=float)
        ks = range(len(residuals)) if k_index is None else k_index
        for k, r in zip(ks, residuals):
            self.update(r, int(k))
        return self.state

    @property
    def triggered(self):
        return self.state.triggered


LOG_HEADER = ("k", "cv", "residual", "mean_p", "var_p", "ks_p", "acf_p", "M", "triggered")


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for row in rows:
            w.writerow([("" if isinstance(v, float) and np.isnan(v) else repr(v) if isinstance(v, float) else v)
                        for v in row])


def append_events(events, path):
    with open(path, "a") as fh:
        for e in events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")


def _recent_valid(recent, criteria, limit):
    """Most recent valid contiguous segments holding at most ``limit`` records."""
    segments = filter_valid(recent, criteria)
    picked, total = [], 0
    for seg in reversed(segments):
        take = min(len(seg), limit - total)
        if take <= 0:
            break
        picked.append(seg[len(seg) - take:])
        total += take
    return picked[::-1], total


def retrain_if_triggered(state, recent, criteria, trainer, config=DetectionConfig(), residual_fn=None):
    """Retrain when any CV is triggered.

    Parameters
    ----------
    recent : SampledSeries
        Recent plant history, oldest first.
    criteria : ValidityCriteria
    trainer : callable
        ``trainer(segments) -> NarxModel``.
    residual_fn : callable, optional
        ``residual_fn(model, segment) -> (residuals, t_index)``; defaults to
        one-step proportional residuals.

    Returns
    -------
    (NarxModel or None, DetectionState)
        ``None`` and the unchanged state when nothing is triggered.

    Raises
    ------
    RetrainDeferred
        When fewer than ``config.min_retrain`` recent valid records exist or
        training fails; the trigger stays latched.
    """
    if not any(state.triggered):
        return None, state
    if residual_fn is None:
        from .narx import proportional_residuals as residual_fn
    segments, total = _recent_valid(recent, criteria, config.N_E_retrain)
    if total < config.min_retrain:
        raise RetrainDeferred(f"{total} recent valid records, need {config.min_retrain}")
    try:
        model = trainer(segments)
    except (TrainingDiverged, SegmentTooShort) as exc:
        raise RetrainDeferred(f"retraining failed: {exc}") from exc
    res = np.vstack([residual_fn(model, s)[0] for s in segments])
    try:
        baselines = tuple(fingerprint(res[:, j]) for j in range(res.shape[1]))
    except InsufficientData as exc:
        raise RetrainDeferred(str(exc)) from exc
    return model, initial_state(baselines)
