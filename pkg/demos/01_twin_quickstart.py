"""Train the twin on synthetic plant data and look at its multi-step errors.

Run from the repository root::

    python demos/01_twin_quickstart.py

Steps: generate ~68 h of closed-loop data with a wandering pressure limit,
fit the regulatory and NARX models, roll the closed loop 5 steps ahead from
one instant, then score every instant of an unseen 1013-sample test set.
"""

import numpy as np

from _shared import PLANT, test_data, trained_twin
from sagtwin import twin as tw

components, _ = trained_twin()
test = test_data()

# One closed-loop prediction from k = 200: re-estimate the regulatory loop
# state on the last 30 records, then let expert -> loops -> NARX run freely.
k = 200
history = test[:k]
comp = tw.TwinComponents(components.rulebase, tw.prepare_regulatory(components.regulatory, history),
                         components.narx)
pred = tw.rollout_closed_loop(comp, history, PLANT.y_lim, tw.HorizonConfig(N=5))
print(f"\nrollout from k={k} (pressure kPa, power kW, feed t/h)")
for i, (y_hat, u_hat) in enumerate(zip(pred.y_hat, pred.u_hat)):
    y = test.y[k + i]
    print(f"  k+{i}: pressure {y_hat[0]:7.1f} (meas {y[0]:7.1f})  power {y_hat[1]:7.0f} (meas {y[1]:7.0f})"
          f"  feed {u_hat[0]:6.0f}")

# Moving-horizon rollouts over the whole test set.
y_hat, y_meas, _ = tw.collect_predictions(components, test, PLANT.y_lim, tw.HorizonConfig(N=5))
stats = tw.error_report(y_hat[:, :5], y_meas[:, :5])
print("\nproportional error by horizon (percent)")
print("  h  cv   mean    std    99% interval")
for s in stats:
    print(f"  {s.horizon}  {s.cv}  {100 * s.mean:6.3f} {100 * s.std:6.3f}   [{100 * s.p005:6.2f}, {100 * s.p995:5.2f}]")

gate = tw.quality_gate(stats, {"y1": 0.01, "y2": 0.05}, horizon=5)
print("\nquality gate at 2.5 min (pressure +-1 %, power +-5 %):", gate)
spread = np.array([s.std for s in stats if s.cv == "y1"])
print("pressure error spread grows with horizon:", bool(np.all(np.diff(spread) >= -1e-9)))
