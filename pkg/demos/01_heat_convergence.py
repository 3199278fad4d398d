# Backward Euler Q1 heat solver against a manufactured solution.
#
# u(x, y, t) = exp(-t) cos(pi x / 2) cos(pi y / 2) on (-1, 1)^2 vanishes on the
# boundary, so the Dirichlet data is zero and the source follows from the PDE.
# With tau = h^2 the L2 error at t = 1 should drop by 4x per refinement.
import numpy as np

from bilayerfold.verification import heat_space_orders, heat_time_orders

hs, errs, orders = heat_space_orders((3, 4, 5, 6))
print("space convergence, tau = h^2")
for h, e in zip(hs, errs):
    print(f"  h = {h:.5f}   L2 error = {e:.3e}")
print("  observed orders:", np.round(orders, 3))

# Fixing the mesh and halving tau isolates the first order time error.
errs, orders = heat_time_orders()
print("time convergence at refinement 6")
print("  errors:", ", ".join(f"{e:.3e}" for e in errs))
print("  observed orders:", np.round(orders, 3))
