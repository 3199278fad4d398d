# Dog-ears: slow heat diffusion makes the free corners curl first.
#
# A square clamped along x1 = -1 is heated through its other three edges
# (Robin data, 50 C ambient).  Case (a) has diffusivity 0.1, case (b) 1.0, and
# both are compared at t = 1, 2.5 and 16 times kappa / sigma, the paper's snapshot times.
import numpy as np

from bilayerfold.plate import flat_state
from bilayerfold.simulation import builtin_scenario, node_near, run

for name in ("dogear_a", "dogear_b"):
    res = run(builtin_scenario(name, 4))
    m = res.mesh
    corner, mid = node_near(m, (1.0, 1.0)), node_near(m, (1.0, 0.0))
    x = flat_state(m)[:, 0, :]
    print(f"{name}: {res.steps} steps")
    for t in res.config.snapshot_times:
        sn = min(res.snapshots, key=lambda s: abs(s.time - t))
        dT = sn.theta[corner] - sn.theta[mid]
        uc = np.linalg.norm(sn.y[corner, 0] - x[corner])
        um = np.linalg.norm(sn.y[mid, 0] - x[mid])
        print(f"  t = {sn.time:7.2f}  corner - midedge temperature {dT:6.2f} C  "
              f"corner / midedge displacement {uc / um:.3f}")
