"""Use the twin to choose the pressure limit that maximises predicted feed.

Run from the repository root::

    python demos/03_limit_supervisor.py

At a few instants of a test set the twin is rolled out once per candidate
pressure limit. Candidates that leave the pressure, power or MV boxes are
discarded; the rest are ranked by mean predicted feed over 2.5 minutes.
"""

import numpy as np

from _shared import test_data, trained_twin
from sagtwin import twin as tw
from sagtwin.errors import AllInfeasible

components, _ = trained_twin()
test = test_data(seed=101)
bounds = tw.Bounds(
    y_lim_grid=(np.arange(1150.0, 1351.0, 50.0), [11000.0]),
    y_box=[(500.0, 1400.0), (0.0, 14000.0)],
    u_box=[(1000.0, 3200.0), (55.0, 85.0), (7.5, 11.5)],
)
horizon = tw.HorizonConfig(N=5)

for k in (150, 400, 650, 900):
    history = test[:k]
    comp = tw.TwinComponents(components.rulebase, tw.prepare_regulatory(components.regulatory, history),
                             components.narx)
    try:
        best, table = tw.evaluate_supervisor(comp, history, bounds, horizon=horizon)
    except AllInfeasible as exc:
        print(f"k={k}: every candidate leaves the feasible region")
        table, best = exc.table, None
    print(f"\nk={k}: measured pressure {test.y[k - 1, 0]:.0f} kPa, feed {test.u[k - 1, 0]:.0f} t/h")
    for row in table:
        mark = "  <- chosen" if best is not None and np.array_equal(row.y_lim, best) else ""
        flag = "" if row.feasible else "  (infeasible)"
        print(f"  pressure limit {row.y_lim[0]:6.0f}: mean feed {-row.score:7.1f} t/h{flag}{mark}")
