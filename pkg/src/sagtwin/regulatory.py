"""Linear state-space emulator of the MV regulatory loops.

The model maps MV setpoints to MVs::

    x[t+1] = A x[t] + B usp[t] + K e
    u[t]   = C x[t] + D usp[t] + e

Matrices, ``x0`` and ``e`` live in standardised units; the scaler that
maps engineering units to those units is part of the model. Identification
minimises the free-run simulation error over the whole training record
(output-error fit), started from a MOESP subspace estimate plus random
restarts.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy import signal

from .optim import levenberg_marquardt
from .errors import ArtifactError, IdentificationFailed, ShapeMismatch, WindowTooShort
from .scaling import Scaler
from .selection import choose_parsimonious

logger = logging.getLogger(__name__)

N_MV = 3
FORMAT_VERSION = 1


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray = None
    K: np.ndarray = None
    x0: np.ndarray = None
    e: np.ndarray = None
    scaler: Scaler = None
    tie_feedthrough_to_B: bool = False
    cost: float = float("nan")

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ShapeMismatch(f"A must be square, got {A.shape}")
        B = np.asarray(self.B, dtype=float).reshape(n, -1) if n else np.zeros((0, N_MV))
        C = np.asarray(self.C, dtype=float).reshape(-1, n) if n else np.zeros((N_MV, 0))
        if B.shape != (n, N_MV):
            raise ShapeMismatch(f"B must be {n}x{N_MV}, got {B.shape}")
        if C.shape != (N_MV, n):
            raise ShapeMismatch(f"C must be {N_MV}x{n}, got {C.shape}")
        if self.tie_feedthrough_to_B:
            if n != N_MV:
                raise ShapeMismatch("tie_feedthrough_to_B needs order equal to the number of MVs")
            D = B.copy()
        else:
            D = np.zeros((N_MV, N_MV)) if self.D is None else np.asarray(self.D, dtype=float)
        K = np.zeros((n, N_MV)) if self.K is None else np.asarray(self.K, dtype=float).reshape(n, -1)
        x0 = np.zeros(n) if self.x0 is None else np.asarray(self.x0, dtype=float).reshape(-1)
        e = np.zeros(N_MV) if self.e is None else np.asarray(self.e, dtype=float).reshape(-1)
        scaler = Scaler.identity(N_MV) if self.scaler is None else self.scaler
        for name, arr, shape in (("D", D, (N_MV, N_MV)), ("K", K, (n, N_MV)),
                                 ("x0", x0, (n,)), ("e", e, (N_MV,))):
            if arr.shape != shape:
                raise ShapeMismatch(f"{name} must have shape {shape}, got {arr.shape}")
        if len(scaler) != N_MV:
            raise ShapeMismatch("scaler must cover the three MVs")
        for name, arr in (("A", A), ("B", B), ("C", C), ("D", D), ("K", K), ("x0", x0), ("e", e)):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "scaler", scaler)

    @property
    def order(self):
        return self.A.shape[0]

    def with_estimate(self, x0, e):
        return replace(self, x0=x0, e=e)

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "kind": "regulatory_state_space",
            "order": self.order,
            "tie_feedthrough_to_B": self.tie_feedthrough_to_B,
            "scaler": self.scaler.to_dict(),
            "A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(),
            "D": self.D.tolist(), "K": self.K.tolist(),
            "x0": self.x0.tolist(), "e": self.e.tolist(),
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != FORMAT_VERSION or d.get("kind") != "regulatory_state_space":
            raise ArtifactError("not a regulatory model artifact of a supported version")
        n = int(d["order"])
        return cls(
            A=np.reshape(d["A"], (n, n)), B=np.reshape(d["B"], (n, N_MV)),
            C=np.reshape(d["C"], (N_MV, n)), D=np.asarray(d["D"]), K=np.reshape(d["K"], (n, N_MV)),
            x0=d["x0"], e=d["e"], scaler=Scaler.from_dict(d["scaler"]),
            tie_feedthrough_to_B=bool(d["tie_feedthrough_to_B"]), cost=float(d["cost"]),
        )


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path):
    try:
        with open(path) as fh:
            return StateSpaceModel.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ArtifactError(f"cannot load regulatory model from {path}: {exc}") from exc


# -- simulation -------------------------------------------------------------

def _as_setpoints(u_sp_sequence, steps=None):
    usp = np.asarray(u_sp_sequence, dtype=float)
    if usp.ndim == 1:
        usp = usp.reshape(1, -1)
    if usp.ndim != 2 or usp.shape[1] != N_MV:
        raise ShapeMismatch(f"setpoint sequence must be (steps, {N_MV}), got {usp.shape}")
    if steps is not None and usp.shape[0] < steps:
        raise ShapeMismatch(f"need {steps} setpoints, got {usp.shape[0]}")
    return usp


def advance(model, x, u_sp):
    """One recurrence step in engineering units: returns ``(u_hat, x_next)``."""
    s = model.scaler.transform(u_sp)
    u_std = model.C @ x + model.D @ s + model.e
    x_next = model.A @ x + model.B @ s + model.K @ model.e
    return model.scaler.inverse(u_std), x_next


def simulate(model, u_sp_sequence, steps, x0=None, e=None):
    """Run the regulatory model forward from ``x0`` (defaults to ``model.x0``).

    Returns
    -------
    ndarray of shape (steps, 3)
        Predicted MVs in engineering units; row ``i`` responds to setpoint ``i``.
    """
    usp = _as_setpoints(u_sp_sequence, steps)[:steps]
    if x0 is not None or e is not None:
        model = replace(
            model,
            x0=model.x0 if x0 is None else x0,
            e=model.e if e is None else e,
        )
    s = model.scaler.transform(usp)
    x = model.x0.copy()
    ke = model.K @ model.e
    out = np.empty((steps, N_MV))
    for i in range(steps):
        out[i] = model.C @ x + model.D @ s[i] + model.e
        x = model.A @ x + model.B @ s[i] + ke
    return model.scaler.inverse(out)


def _state_trajectory(A, W, x0):
    """States ``X[0] = x0, X[t+1] = A X[t] + W[t]`` for ``t < T-1``.

    Uses the modal decomposition of ``A`` so each mode is a single
    first-order recursive filter; falls back to a plain loop when ``A`` is
    close to defective.
    """
    T, n = W.shape[0], A.shape[0]
    if n == 0:
        return np.zeros((T, 0))
    with np.errstate(all="ignore"):
        lam, V = np.linalg.eig(A)
        cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > 1e8:
        X = np.empty((T, n))
        x = np.asarray(x0, dtype=float)
        for t in range(T):
            X[t] = x
            x = A @ x + W[t]
        return X
    Vinv = np.linalg.inv(V)
    Wm = W @ Vinv.T
    z0 = Vinv @ x0
    Z = np.empty((T, n), dtype=complex)
    with np.errstate(all="ignore"):
        for k in range(n):
            Z[:, k] = signal.lfilter([0.0, 1.0], [1.0, -lam[k]], Wm[:, k], zi=[z0[k]])[0]
    return np.real(Z @ V.T)


def _free_run(A, B, C, D, x0, c, s):
    X = _state_trajectory(A, s @ B.T, x0)
    return X @ C.T + s @ D.T + c


# -- identification ---------------------------------------------------------

def _standardise(train):
    scaler = Scaler.fit(np.vstack([train.u, train.u_sp]))
    return scaler, scaler.transform(train.u_sp), scaler.transform(train.u)


def _moesp_observability(s, y, block_rows):
    """Left singular vectors of the ordinary-MOESP projected Hankel block."""
    T = s.shape[0]
    j = T - block_rows + 1
    Uf = np.vstack([s[i:i + j].T for i in range(block_rows)])
    Yf = np.vstack([y[i:i + j].T for i in range(block_rows)])
    R = np.linalg.qr(np.vstack([Uf, Yf]).T, mode="r")
    L = R.T
    m = Uf.shape[0]
    L22 = L[m:, m:]
    Us, sv, _ = np.linalg.svd(L22)
    return Us, sv


def _ac_from_observability(Us, sv, n):
    gamma = Us[:, :n] * np.sqrt(sv[:n])
    C = gamma[:N_MV]
    A = np.linalg.lstsq(gamma[:-N_MV], gamma[N_MV:], rcond=None)[0]
    return A, C


def _fit_linear_part(A, C, s, y, tie):
    """Least-squares B, D, x0 and output offset for fixed A, C (the output is linear in them)."""
    T, n = s.shape[0], A.shape[0]
    cols = []
    for r in range(n):
        for c in range(N_MV):
            W = np.zeros((T, n))
            W[:, r] = s[:, c]
            cols.append((_state_trajectory(A, W, np.zeros(n)) @ C.T).ravel())
    nb = len(cols)
    if tie:
        # D equals B: add the feedthrough response to the B columns
        for r in range(n):
            for c in range(N_MV):
                extra = np.zeros((T, N_MV))
                extra[:, r] = s[:, c]
                cols[r * N_MV + c] = cols[r * N_MV + c] + extra.ravel()
    else:
        for r in range(N_MV):
            for c in range(N_MV):
                extra = np.zeros((T, N_MV))
                extra[:, r] = s[:, c]
                cols.append(extra.ravel())
    for r in range(n):
        x0 = np.zeros(n)
        x0[r] = 1.0
        cols.append((_state_trajectory(A, np.zeros((T, n)), x0) @ C.T).ravel())
    for r in range(N_MV):
        ones = np.zeros((T, N_MV))
        ones[:, r] = 1.0
        cols.append(ones.ravel())
    Phi = np.column_stack(cols)
    theta = np.linalg.lstsq(Phi, y.ravel(), rcond=None)[0]
    B = theta[:nb].reshape(n, N_MV)
    if tie:
        D = B.copy()
        rest = theta[nb:]
    else:
        D = theta[nb:nb + N_MV * N_MV].reshape(N_MV, N_MV)
        rest = theta[nb + N_MV * N_MV:]
    return B, D, rest[:n], rest[n:]


def _simulation_jacobian(par, theta, s):
    """Analytic Jacobian of the stacked free-run outputs with respect to theta.

    Each column is the output response of a parameter sensitivity system;
    with ``A = V diag(lam) V^-1`` all of them are built from one first-order
    filter per (mode, driving signal) pair.
    """
    A, B, C, D, x0, _ = par.unpack(theta)
    T, n = s.shape[0], par.n
    X = _state_trajectory(A, s @ B.T, x0)
    lam, V = np.linalg.eig(A)
    fast = np.isfinite(np.linalg.cond(V)) and np.linalg.cond(V) < 1e8

    if fast:
        Vinv = np.linalg.inv(V)
        G = C @ V
        sigs = np.column_stack([X, s])
        F = np.empty((n + N_MV, T, n), dtype=complex)
        for k in range(n):
            F[:, :, k] = signal.lfilter([0.0, 1.0], [1.0, -lam[k]], sigs, axis=0).T
        P = np.power(lam[None, :], np.arange(T)[:, None])

        def driven(r, sig):
            return np.real((F[sig] * Vinv[:, r]) @ G.T)

        def free(r):
            return np.real((P * Vinv[:, r]) @ G.T)
    else:
        def driven(r, sig):
            v = X[:, sig] if sig < n else s[:, sig - n]
            W = np.zeros((T, n))
            W[:, r] = v
            return _state_trajectory(A, W, np.zeros(n)) @ C.T

        def free(r):
            z = np.zeros(n)
            z[r] = 1.0
            return _state_trajectory(A, np.zeros((T, n)), z) @ C.T

    cols = []
    for r in range(n):
        for c in range(n):
            cols.append(driven(r, c))
    for r in range(n):
        for c in range(N_MV):
            d = driven(r, n + c)
            if par.tie and r < N_MV:
                d = d.copy()
                d[:, r] += s[:, c]
            cols.append(d)
    for r in range(N_MV):
        for c in range(n):
            d = np.zeros((T, N_MV))
            d[:, r] = X[:, c]
            cols.append(d)
    if not par.tie:
        for r in range(N_MV):
            for c in range(N_MV):
                d = np.zeros((T, N_MV))
                d[:, r] = s[:, c]
                cols.append(d)
    for r in range(n):
        cols.append(free(r))
    for r in range(N_MV):
        d = np.zeros((T, N_MV))
        d[:, r] = 1.0
        cols.append(d)
    return np.column_stack([c.ravel() for c in cols])


class _Parametrisation:
    def __init__(self, n, tie):
        self.n, self.tie = n, tie
        self.sizes = [n * n, n * N_MV, N_MV * n, 0 if tie else N_MV * N_MV, n, N_MV]

    def pack(self, A, B, C, D, x0, c):
        parts = [A.ravel(), B.ravel(), C.ravel()]
        if not self.tie:
            parts.append(D.ravel())
        parts += [np.ravel(x0), np.ravel(c)]
        return np.concatenate(parts)

    def unpack(self, theta):
        n = self.n
        idx = np.cumsum([0] + self.sizes)
        A = theta[idx[0]:idx[1]].reshape(n, n)
        B = theta[idx[1]:idx[2]].reshape(n, N_MV)
        C = theta[idx[2]:idx[3]].reshape(N_MV, n)
        D = B if self.tie else theta[idx[3]:idx[4]].reshape(N_MV, N_MV)
        x0 = theta[idx[4]:idx[5]]
        c = theta[idx[5]:idx[6]]
        return A, B, C, D, x0, c


def _random_stable(rng, n, radius):
    M = rng.standard_normal((n, n))
    rho = np.max(np.abs(np.linalg.eigvals(M)))
    return M * (radius / rho) if rho > 0 else M


def _embed(model, n, rng):
    """Pad a lower-order model with weakly coupled extra modes."""
    k = model.order
    A = np.zeros((n, n))
    A[:k, :k] = model.A
    B = np.zeros((n, N_MV))
    B[:k] = model.B
    C = np.zeros((N_MV, n))
    C[:, :k] = model.C
    x0 = np.zeros(n)
    x0[:k] = model.x0
    eps = 1e-3
    A[k:, k:] = eps * rng.standard_normal((n - k, n - k))
    B[k:] = eps * rng.standard_normal((n - k, N_MV))
    C[:, k:] = eps * rng.standard_normal((N_MV, n - k))
    return A, B, C, model.D.copy(), x0, model.e.copy()


def identify(train, order, *, restarts=5, seed=0, warm_start=None, block_rows=None,
             tie_feedthrough_to_B=False, max_iter=100):
    """Fit the regulatory model by free-run simulation-error minimisation.

    Parameters
    ----------
    train : SampledSeries
        Uses ``u_sp`` as model input and ``u`` as model output.
    order : int
        State dimension.
    restarts : int
        Random initialisations tried in addition to the subspace estimate
        (and ``warm_start`` when given); the lowest-cost result is kept.
    warm_start : StateSpaceModel, optional
        A lower-order fit on the same data, embedded as an extra start so the
        cost cannot exceed it.

    Returns
    -------
    StateSpaceModel
        With ``K = 0``; ``e`` holds the fitted constant output offset (in
        standardised units) and ``cost`` is the mean squared standardised
        simulation error.

    Raises
    ------
    IdentificationFailed
        When no start converges to a finite cost.
    """
    order = int(order)
    if order < 1:
        raise ValueError("order must be positive")
    T = len(train)
    if T <= 10 * order:
        raise IdentificationFailed(f"training record of {T} samples is too short for order {order}")
    scaler, s, y = _standardise(train)
    rng = np.random.default_rng(seed)
    par = _Parametrisation(order, tie_feedthrough_to_B)
    tie = tie_feedthrough_to_B

    starts = []
    if block_rows is None:
        block_rows = min(max(2 * order + 2, 10), max(order + 1, T // 20))
    try:
        Us, sv = _moesp_observability(s, y, block_rows)
        if Us.shape[1] >= order:
            A, C = _ac_from_observability(Us, sv, order)
            starts.append((A, C))
    except np.linalg.LinAlgError:
        logger.debug("subspace initialisation failed", exc_info=True)
    for _ in range(restarts):
        A = _random_stable(rng, order, rng.uniform(0.3, 0.95))
        C = rng.standard_normal((N_MV, order))
        starts.append((A, C))

    thetas = []
    for A, C in starts:
        B, D, x0, offset = _fit_linear_part(A, C, s, y, tie)
        thetas.append(par.pack(A, B, C, D, x0, offset))
    if warm_start is not None and warm_start.order < order and not tie:
        thetas.insert(0, par.pack(*_embed(warm_start, order, rng)))

    def residuals(theta):
        with np.errstate(all="ignore"):
            r = (_free_run(*par.unpack(theta), s) - y).ravel()
        return np.clip(np.nan_to_num(r, nan=1e6), -1e6, 1e6)

    def jacobian(theta):
        with np.errstate(all="ignore"):
            J = _simulation_jacobian(par, theta, s)
        return np.clip(np.nan_to_num(J, nan=0.0), -1e12, 1e12)

    best, best_cost = None, np.inf
    for i, theta0 in enumerate(thetas):
        res = levenberg_marquardt(residuals, jacobian, theta0, max_iter=max_iter)
        if res.status < 0:
            continue
        A = par.unpack(res.x)[0]
        stable = np.max(np.abs(np.linalg.eigvals(A))) < 1.0 + 1e-9
        cost = float(np.mean(res.fun ** 2))
        logger.debug("order %d start %d: cost %.3e after %d iterations (%s)",
                     order, i, cost, res.nit, res.message)
        if not np.isfinite(cost) or not stable:
            continue
        if cost < best_cost:
            best, best_cost = res.x, cost
    if best is None:
        raise IdentificationFailed(f"order {order}: no start reached a finite, stable fit", best_cost)
    A, B, C, D, x0, offset = par.unpack(best)
    return StateSpaceModel(
        A=A, B=B, C=C, D=D, K=np.zeros((order, N_MV)), x0=x0, e=offset,
        scaler=scaler, tie_feedthrough_to_B=tie, cost=best_cost,
    )


@dataclass
class OrderSearch:
    order: int
    costs: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)


def search_order(train, candidate_orders=(1, 2, 3, 4), improvement_threshold=0.05, **kwargs):
    """Identify every candidate order and apply the parsimony rule.

    Each order is warm-started from the previous one, so costs are
    non-increasing in order up to optimiser tolerance.
    """
    orders = list(candidate_orders)
    if not orders:
        raise ValueError("candidate_orders is empty")
    if orders != sorted(orders):
        raise ValueError("candidate_orders must be sorted ascending")
    result = OrderSearch(order=orders[0])
    prev = None
    for n in orders:
        model = identify(train, n, warm_start=prev, **kwargs)
        result.models[n] = model
        result.costs[n] = model.cost
        prev = model
    # floor against round-off: costs are MSE of standardised data (order 1)
    atol = 1e-10
    result.order = choose_parsimonious(orders, [result.costs[n] for n in orders],
                                       improvement_threshold, atol=atol)
    return result


def select_order(train, candidate_orders=(1, 2, 3, 4), improvement_threshold=0.05, **kwargs):
    return search_order(train, candidate_orders, improvement_threshold, **kwargs).order


# -- online estimation --------------------------------------------------------

@dataclass(frozen=True)
class EstimationConfig:
    N_E: int = 30


class OnlineEstimate(NamedTuple):
    x0: np.ndarray  # state at the instant following the window
    e: np.ndarray


def _window_arrays(recent):
    if hasattr(recent, "u_sp"):
        return np.asarray(recent.u, dtype=float), np.asarray(recent.u_sp, dtype=float)
    u, u_sp = recent
    return np.asarray(u, dtype=float), np.asarray(u_sp, dtype=float)


def _window_response(model, s, z, e):
    """Standardised predictions over a window started from state ``z``; also the final state."""
    x = np.asarray(z, dtype=float)
    ke = model.K @ e
    out = np.empty((s.shape[0], N_MV))
    for t in range(s.shape[0]):
        out[t] = model.C @ x + model.D @ s[t] + e
        x = model.A @ x + model.B @ s[t] + ke
    return out, x


def online_cost(model, recent, x_start, e):
    """Sum of squared standardised MV errors over the window for given start state and disturbance."""
    u, u_sp = _window_arrays(recent)
    pred, _ = _window_response(model, model.scaler.transform(u_sp), x_start, np.asarray(e, dtype=float))
    return float(np.sum((pred - model.scaler.transform(u)) ** 2))


def estimate_window(model, recent, config=EstimationConfig()):
    """Least-squares start state and disturbance for the last ``N_E`` records.

    Returns ``(x_start, e, x_next)``: the state at the first window record,
    the disturbance, and the state propagated past the last record.
    """
    u, u_sp = _window_arrays(recent)
    if config.N_E < model.order:
        raise WindowTooShort(f"N_E={config.N_E} is below the model order {model.order}")
    if u.shape[0] < config.N_E:
        raise WindowTooShort(f"need {config.N_E} records, got {u.shape[0]}")
    u, u_sp = u[-config.N_E:], u_sp[-config.N_E:]
    s, y = model.scaler.transform(u_sp), model.scaler.transform(u)
    n = model.order
    base, _ = _window_response(model, s, np.zeros(n), np.zeros(N_MV))
    cols = []
    for j in range(n + N_MV):
        unit = np.zeros(n + N_MV)
        unit[j] = 1.0
        resp, _ = _window_response(model, s, unit[:n], unit[n:])
        cols.append((resp - base).ravel())
    Phi = np.column_stack(cols)
    theta = np.linalg.lstsq(Phi, (y - base).ravel(), rcond=None)[0]
    z, e = theta[:n], theta[n:]
    _, x_next = _window_response(model, s, z, e)
    return z, e, x_next


def estimate_online(model, recent, config=EstimationConfig()):
    """Re-estimate the current state and additive disturbance from recent data.

    Parameters
    ----------
    model : StateSpaceModel
        Matrices are held fixed.
    recent : SampledSeries or (u, u_sp) pair
        The last ``config.N_E`` records are used.

    Returns
    -------
    OnlineEstimate
        ``x0`` is the state from which the next instant is predicted, so
        ``model.with_estimate(*estimate)`` is ready for :func:`simulate`.
    """
    _, e, x_next = estimate_window(model, recent, config)
    return OnlineEstimate(x_next, e)
