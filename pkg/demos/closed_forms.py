#!/usr/bin/env python3
# Closed-form fluid values against brute-force Euler integration of the drift.
import numpy as np

from fluidroute import euler, fluid
from fluidroute.jobsize import get_distribution

d = get_distribution("exp")
rho = 0.7
u = (1.5, 0.4)
x, y = u[0] + u[1], u[0] - u[1]

print("state", u, "rho", rho)
print("RND  closed %.8f  euler %.8f" % (fluid.v_rnd(u, rho, d), euler.euler_rnd(u, rho, d).cost))
print("STO  closed %.8f  euler %.8f" % (fluid.v_sto(x, y, d, rho), euler.sto_oracle(x, y, d, rho).cost))
print("MWL  closed %.8f  euler %.8f" % (fluid.v_mwl(*u, d, rho), euler.mwl_oracle(*u, d, rho).cost))
print("LWL  closed %.8f  euler %.8f" % (fluid.v_lwl(*u, rho), euler.lwl_oracle(*u, rho).cost))

# every size-blind split costs the same from a given state
rng = np.random.default_rng(0)
for _ in range(3):
    coeffs = (rng.uniform(0.25, 0.75), rng.uniform(0, 0.25), rng.uniform(0.5, 6), rng.uniform(0.5, 6))
    print("size-blind control", np.round(coeffs, 3), "cost %.8f" % euler.unaware_oracle(2.0, 1.0, rho, coeffs).cost)
print("formula            cost %.8f" % fluid.v_size_unaware(3.0, 1.0, rho))

# mean wait through the fluid value, E[W] = E[v(X, 0)]
print("E[W] RND via fluid value: %.6f (M/M/1 gives %.6f)" % (fluid.mean_wait_fluid(lambda a, b: fluid.v_rnd((a, b), 0.5, d), d), 2 * 0.5 / 0.5))
