"""Parsimonious model-structure choice shared by the regulatory and NARX searches."""

import numpy as np


def choose_parsimonious(candidates, costs, threshold=0.05, atol=0.0, dominates=None):
    """Pick the smallest candidate whose fit is not significantly beaten by a larger one.

    Candidate ``c`` is accepted when ``cost[c] <= (1 + threshold) * best + atol``
    where ``best`` is the lowest cost among the candidates larger than ``c``.
    Candidates with nothing larger are always accepted, so a result always
    exists. The first accepted candidate in sorted order is returned.

    Parameters
    ----------
    candidates : sequence of orderable
    costs : sequence of float
    threshold : float
        Relative improvement regarded as significant.
    atol : float
        Absolute slack, useful when costs sit at the floating point floor.
    dominates : callable, optional
        ``dominates(a, b)`` is true when ``a`` counts as larger than ``b``.
        Defaults to the plain ordering ``a > b``.
    """
    if len(candidates) == 0:
        raise ValueError("no candidates")
    if len(candidates) != len(costs):
        raise ValueError("candidates and costs differ in length")
    if dominates is None:
        def dominates(a, b):
            return a > b
    order = sorted(range(len(candidates)), key=lambda i: candidates[i])
    costs = np.asarray(costs, dtype=float)
    for i in order:
        larger = [j for j in order if j != i and dominates(candidates[j], candidates[i])]
        if not larger:
            return candidates[i]
        best = np.min(costs[larger])
        if costs[i] <= (1.0 + threshold) * best + atol:
            return candidates[i]
    raise AssertionError("unreachable: a maximal candidate is always accepted")
