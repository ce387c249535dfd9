"""Fuzzy expert supervisor emulator.

CV/MV values and their recent slopes are fuzzified with triangular
membership functions, operating states are scored from label conditions,
the most critical active state is picked and its constant (zero-order
Sugeno) consequent, scaled by the activation degree, becomes the setpoint
increment. Rules live in a JSON rule base; see
``data/default_rulebase.json`` for the shipped illustrative one.

Membership functions on CVs may be flagged ``relative``: their breakpoints
are then offsets from the CV operating limit, so moving the limit moves the
supervisor's behaviour with it.
"""

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple

import numpy as np

from .errors import ShapeMismatch, WindowTooShort

CV_NAMES = ("y1", "y2")
MV_NAMES = ("u1", "u2", "u3")
KINDS = ("value", "slope")


def _num(v):
    return float(v) if not isinstance(v, str) else float(v.strip())  # accepts "inf" / "-inf"


@dataclass(frozen=True)
class TriangularMF:
    """Triangle with feet ``a``, ``c`` and apex ``b``.

    An infinite foot turns the triangle into a shoulder that stays at 1 on
    that side of the apex.
    """

    label: str
    a: float
    b: float
    c: float
    relative: bool = False

    def __post_init__(self):
        if not (self.a <= self.b <= self.c) or math.isnan(self.b) or math.isinf(self.b):
            raise ValueError(f"membership {self.label!r} needs a <= b <= c with a finite apex")

    def degree(self, x):
        x = np.asarray(x, dtype=float)
        a, b, c = self.a, self.b, self.c
        if a == b or math.isinf(a):
            left = np.ones_like(x)
        else:
            left = (x - a) / (b - a)
        if b == c or math.isinf(c):
            right = np.ones_like(x)
        else:
            right = (c - x) / (c - b)
        out = np.where(x <= b, left, right)
        out = np.where((x < a) | (x > c), 0.0, out)
        return np.clip(out, 0.0, 1.0)

    def shifted(self, offset):
        return TriangularMF(self.label, self.a + offset, self.b + offset, self.c + offset)

    @classmethod
    def from_dict(cls, d):
        return cls(str(d["label"]), _num(d["a"]), _num(d["b"]), _num(d["c"]), bool(d.get("relative", False)))


def fuzzify(value, mfs):
    """Membership degree of ``value`` in each set, as ``[(label, degree), ...]``."""
    if not mfs:
        raise ValueError("no membership functions given")
    return [(mf.label, float(mf.degree(value))) for mf in mfs]


def slope(series):
    """Least-squares trend of equally spaced samples, in units per sample."""
    v = np.asarray(series, dtype=float).reshape(-1)
    if v.size < 2:
        raise WindowTooShort(f"slope needs at least 2 samples, got {v.size}")
    t = np.arange(v.size) - (v.size - 1) / 2.0
    return float(t @ (v - v.mean()) / (t @ t))


@dataclass(frozen=True)
class OperatingState:
    name: str
    rank: int  # 1 is the most critical
    when: tuple  # OR over clauses, each an AND over "var.kind.label" terms
    consequent: np.ndarray  # setpoint increment per MV at degree 1


class SetpointCommand(NamedTuple):
    delta_u_sp: np.ndarray
    state_name: str


class Inference(NamedTuple):
    state: OperatingState
    degree: float


@dataclass(frozen=True)
class FuzzyRuleBase:
    variables: dict  # name -> {"value": [TriangularMF], "slope": [TriangularMF]}
    states: tuple
    rate_limits: np.ndarray
    activation_threshold: float = 0.3
    slope_window: int = 4
    default_state: str = "normal"
    setpoint_limits: np.ndarray = None  # (3, 2) low/high per MV, or None
    note: str = ""

    def __post_init__(self):
        rate = np.asarray(self.rate_limits, dtype=float).reshape(-1)
        if rate.shape != (len(MV_NAMES),) or np.any(rate < 0):
            raise ValueError("rate_limits must hold one non-negative value per MV")
        object.__setattr__(self, "rate_limits", rate)
        if self.setpoint_limits is not None:
            lim = np.asarray(self.setpoint_limits, dtype=float).reshape(len(MV_NAMES), 2)
            if np.any(lim[:, 0] > lim[:, 1]):
                raise ValueError("setpoint_limits rows must be (low, high)")
            object.__setattr__(self, "setpoint_limits", lim)
        if not 0.0 <= self.activation_threshold < 1.0:
            raise ValueError("activation_threshold must lie in [0, 1)")
        if self.slope_window < 2:
            raise ValueError("slope_window must be at least 2")
        self.validate()

    def validate(self):
        declared = set()
        for var, sets in self.variables.items():
            if var not in CV_NAMES + MV_NAMES:
                raise ValueError(f"unknown variable {var!r}")
            for kind in KINDS:
                labels = [mf.label for mf in sets.get(kind, [])]
                if len(labels) != len(set(labels)):
                    raise ValueError(f"duplicate labels in {var}.{kind}")
                for mf in sets.get(kind, []):
                    if mf.relative and (var not in CV_NAMES or kind != "value"):
                        raise ValueError(f"{var}.{kind}.{mf.label}: only CV value sets can be limit-relative")
                declared.update(f"{var}.{kind}.{lab}" for lab in labels)
        ranks = [s.rank for s in self.states]
        names = [s.name for s in self.states]
        if len(set(ranks)) != len(ranks):
            raise ValueError("criticality ranks must be unique")
        if len(set(names)) != len(names):
            raise ValueError("state names must be unique")
        if self.default_state not in names:
            raise ValueError(f"default state {self.default_state!r} is not declared")
        for s in self.states:
            if not s.when or any(not clause for clause in s.when):
                raise ValueError(f"state {s.name!r} has an empty condition")
            for term in (t for clause in s.when for t in clause):
                if term not in declared:
                    raise ValueError(f"state {s.name!r} references undeclared label {term!r}")
            if np.asarray(s.consequent).shape != (len(MV_NAMES),):
                raise ValueError(f"state {s.name!r} needs one consequent per MV")

    def state(self, name):
        for s in self.states:
            if s.name == name:
                return s
        raise KeyError(name)

    @classmethod
    def from_dict(cls, d):
        variables = {
            var: {kind: [TriangularMF.from_dict(m) for m in sets.get(kind, [])] for kind in KINDS}
            for var, sets in d["variables"].items()
        }
        states = tuple(
            OperatingState(
                name=s["name"], rank=int(s["rank"]),
                when=tuple(tuple(c) for c in s["when"]),
                consequent=np.asarray(s["consequent"], dtype=float),
            )
            for s in d["states"]
        )
        return cls(
            variables=variables, states=states, rate_limits=d["rate_limits"],
            activation_threshold=float(d.get("activation_threshold", 0.3)),
            slope_window=int(d.get("slope_window", 4)),
            default_state=d.get("default_state", "normal"),
            setpoint_limits=d.get("setpoint_limits"),
            note=d.get("note", ""),
        )


def load_rulebase(path=None):
    """Read a rule base from JSON; ``None`` gives the shipped default."""
    if path is None:
        text = resources.files("sagtwin").joinpath("data/default_rulebase.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return FuzzyRuleBase.from_dict(json.loads(text))


def default_rulebase():
    return load_rulebase(None)


def fuzzify_inputs(rulebase, y, u, y_lim):
    """Degrees for every declared set given the latest window.

    Parameters
    ----------
    y : array of shape (s, 2)
        Recent CV samples, oldest first.
    u : array of shape (s, 3)
        Recent MV samples aligned with ``y``.
    y_lim : array of shape (2,)

    Returns
    -------
    dict
        ``"var.kind.label" -> degree``.
    """
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    y_lim = np.asarray(y_lim, dtype=float).reshape(-1)
    s = rulebase.slope_window
    if y.ndim != 2 or y.shape[1] != len(CV_NAMES) or u.ndim != 2 or u.shape[1] != len(MV_NAMES):
        raise ShapeMismatch("history must be (s, 2) CVs and (s, 3) MVs")
    if y_lim.shape != (len(CV_NAMES),):
        raise ShapeMismatch("y_lim must hold one limit per CV")
    if y.shape[0] < s or u.shape[0] < s:
        raise WindowTooShort(f"expert needs {s} samples of history, got {min(y.shape[0], u.shape[0])}")
    cols = {name: y[-s:, i] for i, name in enumerate(CV_NAMES)}
    cols.update({name: u[-s:, j] for j, name in enumerate(MV_NAMES)})
    limits = dict(zip(CV_NAMES, y_lim))
    out = {}
    for var, sets in rulebase.variables.items():
        window = cols[var]
        value, trend = window[-1], slope(window)
        for mf in sets["value"]:
            x = value - limits[var] if mf.relative else value
            out[f"{var}.value.{mf.label}"] = float(mf.degree(x))
        for mf in sets["slope"]:
            out[f"{var}.slope.{mf.label}"] = float(mf.degree(trend))
    return out


def state_degree(state, fuzzified):
    """max over clauses of min over terms."""
    return max(min(fuzzified[t] for t in clause) for clause in state.when)


def infer_state(rulebase, fuzzified):
    """Pick the most critical state whose degree exceeds the threshold.

    Ties on rank go to the larger degree, then to declaration order. When no
    state is active the default state is returned with its own (sub-threshold)
    degree.
    """
    best = None
    for idx, s in enumerate(rulebase.states):
        d = state_degree(s, fuzzified)
        if d <= rulebase.activation_threshold:
            continue
        key = (s.rank, -d, idx)
        if best is None or key < best[0]:
            best = (key, s, d)
    if best is None:
        s = rulebase.state(rulebase.default_state)
        return Inference(s, state_degree(s, fuzzified))
    return Inference(best[1], best[2])


def defuzzify(state, degree, rulebase):
    """Scale the state's consequent by ``degree`` and clamp to the rate limits."""
    delta = float(degree) * np.asarray(state.consequent, dtype=float)
    delta = np.clip(delta, -rulebase.rate_limits, rulebase.rate_limits)
    return SetpointCommand(delta + 0.0, state.name)  # + 0.0 drops negative zeros


def step(rulebase, y, u, y_lim):
    """One supervisor decision from the recent CV/MV window."""
    inf = infer_state(rulebase, fuzzify_inputs(rulebase, y, u, y_lim))
    return defuzzify(inf.state, inf.degree, rulebase)


def apply_command(rulebase, u_sp, command):
    """New setpoint after a command, kept inside the rule base's setpoint limits."""
    new = np.asarray(u_sp, dtype=float) + command.delta_u_sp
    if rulebase.setpoint_limits is not None:
        new = np.clip(new, rulebase.setpoint_limits[:, 0], rulebase.setpoint_limits[:, 1])
    return new
