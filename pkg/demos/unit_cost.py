#!/usr/bin/env python3
# Cost at unit distance w(theta) for the optimum and the closed-form policies.
import math

import numpy as np

from fluidroute import optpath

rho = 0.7
t = optpath.solve("exp", rho, n_grid=801)
thetas = np.linspace(0, math.pi / 4, 9)
names = ("RND", "LWL", "STO", "MWL")
curves = {n: optpath.unit_cost_curve(n, thetas, "exp", rho)[:, 1] for n in names}
curves["OPT"] = optpath.unit_cost_curve(t, thetas)[:, 1]

print("theta[deg] " + " ".join(f"{n:>8s}" for n in curves))
for i, th in enumerate(thetas):
    print(f"{math.degrees(th):10.2f} " + " ".join(f"{curves[n][i]:8.4f}" for n in curves))
# on the diagonal every balanced policy agrees; on the axis STO and MWL coincide
