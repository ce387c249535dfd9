"""Independent reference implementations used by the tests.

Nothing here imports the package's numerical code; these are deliberately
plain re-derivations so a shared bug cannot hide on both sides.
"""

import itertools
import math

import numpy as np


def narx_forward(W_in, b_h, W_out, b_out, y_mean, y_scale, u_mean, u_scale, past_y, past_u, act=math.tanh):
    """Scalar-loop evaluation of the one-hidden-layer network."""
    x = []
    for row in past_y:
        x.extend((row[j] - y_mean[j]) / y_scale[j] for j in range(2))
    for row in past_u:
        x.extend((row[j] - u_mean[j]) / u_scale[j] for j in range(3))
    hidden = []
    for i in range(len(b_h)):
        s = b_h[i]
        for j, xj in enumerate(x):
            s += W_in[i][j] * xj
        hidden.append(act(s))
    out = []
    for o in range(2):
        s = b_out[o]
        for i, hi in enumerate(hidden):
            s += W_out[o][i] * hi
        out.append(s * y_scale[o] + y_mean[o])
    return out


def teacher_series(rng, T, m, n, width, init=0.5, u_std=1.0):
    """Noise-free series produced by a random NARX teacher in scaled units.

    The teacher's lagged inputs are its own outputs; ``tanh`` keeps them
    bounded whatever the weights.
    """
    d = 2 * m + 3 * n
    W_in = rng.uniform(-init, init, (width, d))
    b_h = rng.uniform(-init, init, width)
    W_out = rng.uniform(-1.0, 1.0, (2, width))
    b_out = rng.uniform(-init, init, 2)
    u = u_std * rng.standard_normal((T, 3))
    y = np.zeros((T, 2))
    for t in range(T):
        lag_y = [y[t - j] if t - j >= 0 else np.zeros(2) for j in range(1, m + 1)]
        lag_u = [u[t - j] if t - j >= 0 else np.zeros(3) for j in range(n)]
        x = np.concatenate(lag_y + lag_u)
        y[t] = W_out @ np.tanh(W_in @ x + b_h) + b_out
    return y, u, (W_in, b_h, W_out, b_out)


def arx_recursion(a, b, y_hist, u_future):
    """y_j(t) = a_j * y_j(t-1) + b_j * u_j(t), run forward from the last history sample."""
    y = np.array(y_hist[-1], dtype=float)
    out = []
    for u in u_future:
        y = a * y + b * np.asarray(u)[:2]
        out.append(y.copy())
    return np.array(out)


def median(values):
    v = sorted(values)
    k = len(v)
    return v[k // 2] if k % 2 else 0.5 * (v[k // 2 - 1] + v[k // 2])


def brute_force_supervisor(grids, score_fn, feasible_fn):
    """Exhaustive loop over the Cartesian grid: lowest feasible score, first one on ties."""
    best_val, best_lim, scores = None, None, []
    for lim in itertools.product(*grids):
        val = score_fn(lim)
        ok = feasible_fn(lim)
        scores.append((lim, val, ok))
        if ok and (best_val is None or val < best_val):
            best_val, best_lim = val, lim
    return best_lim, scores


def least_squares_slope(values):
    t = np.arange(len(values), dtype=float)
    return float(np.polyfit(t, np.asarray(values, dtype=float), 1)[0])
