#!/usr/bin/env python3
# Optimal fluid paths: how far the optimum unbalances the queues, by
# distribution and by load.  Each solve takes a few seconds.
import numpy as np

from fluidroute import optpath

levels = np.array([0.25, 0.5, 0.75, 0.95])

print("rho=0.7, start (1,1): total backlog x when the imbalance yhat reaches", levels)
for tag in ("uniform", "exp", "bpareto", "pareto"):
    t = optpath.solve(tag, 0.7, n_grid=801)
    tr = optpath.trace(t, (1.0, 1.0))
    xs = np.interp(levels, tr.yhat[:-1], tr.x[:-1])
    print(f"  {tag:8s} x = {np.round(xs, 4)}   cost {tr.total_cost:.4f}")

print("exp, start (1,1): imbalance once 10% of the backlog has drained")
for rho in (0.5, 0.7, 0.9):
    tr = optpath.trace(optpath.solve("exp", rho, n_grid=801), (1.0, 1.0))
    print(f"  rho {rho}: yhat = {np.interp(1.8, tr.x[::-1], tr.yhat[::-1]):.4f}")

# scale-free: doubling the start doubles the path and quadruples the cost
t = optpath.solve("exp", 0.7, n_grid=801)
a, b = optpath.trace(t, (0.6, 0.2)), optpath.trace(t, (1.2, 0.4))
print("scaling: max |x2 - 2 x1| = %.2e, cost ratio %.12f" % (np.abs(b.x - 2 * a.x).max(), b.total_cost / a.total_cost))

# constant sizes leave nothing to optimise
print("det flat-argmin fraction:", optpath.solve("det", 0.7, n_grid=401).flat_fraction)
