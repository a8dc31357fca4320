#!/usr/bin/env python3
# (1 - rho) E[W] near rho -> 1 for the best heuristic, next to the limit
# constant 2 rho Phibar(1) E[X^2] and the fluid mean-wait identity.
from fluidroute import fluid, optpath
from fluidroute.jobsize import get_distribution
from fluidroute.policies import PolicyConfig
from fluidroute.sim import SimConfig, run
from fluidroute.validation import heavy_traffic_constant

d = get_distribution("exp")
rho = 0.95
t = optpath.solve(d, rho, n_grid=801)
st = run(SimConfig(rho=rho, policy=PolicyConfig("F_BLBH", table=t), arrivals=4_000_000, warmup=0.2, seed=8))
fluid_ew = fluid.mean_wait_fluid(lambda a, b: optpath.value_lookup(t, (a, b)), d)
print("simulated (1-rho)E[W]   %.4f +- %.4f" % ((1 - rho) * st.mean_wait, (1 - rho) * st.half_width))
print("2 rho Phibar(1) E[X^2]  %.4f" % heavy_traffic_constant("exp", rho))
print("fluid E[v(X,0)] (1-rho) %.4f" % ((1 - rho) * fluid_ew))
