#!/usr/bin/env python3
# Simulated mean waits relative to LWL with common random numbers.
# 10^6 arrivals per policy keeps this under a minute; raise it for tighter CIs.
from fluidroute import optpath
from fluidroute.policies import PolicyConfig
from fluidroute.sim import SimConfig, compare

ARRIVALS = 1_000_000
kinds = ("LWL", "RND", "DICE", "CARD", "SSLL", "F_BLB", "F_BLBH")

for rho in (0.3, 0.5, 0.8):
    table = optpath.solve("exp", rho, n_grid=801)
    cfgs = [SimConfig(rho=rho, policy=PolicyConfig(k, table=table if k.startswith("F_") else None), arrivals=ARRIVALS, seed=1) for k in kinds]
    res = compare(cfgs)
    print(f"rho {rho}: " + "  ".join(f"{k} {r.ratio_to_lwl:.3f}" for k, r in zip(kinds, res)))
