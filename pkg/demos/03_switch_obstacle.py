# A bilayer switch rolls up against a plane.
#
# A narrow hinge strip at x1 = -1 is heated through Dirichlet data that ramps to
# 100 C over 5 s.  The plate would roll past z = 0.5 but the half-space
# obstacle stops it; the penalty parameter eps controls how far the plate
# sinks into the obstacle.  Snapshots and diagnostics go to ./switch_out.
import sys

from bilayerfold.cli import main

refine = sys.argv[1] if len(sys.argv) > 1 else "4"
main(["run", "--scenario", "switch", "--refine", refine, "--tau", "8e-3",
      "--out", "switch_out"])

# The penalty sweep compares the stationary tip heights for eps = 4e-5 ... 4e-7.
# Smaller eps gives a lower tip and less penetration.
main(["sweep-epsilon", "--j-range", "5..7", "--refine", refine, "--tau", "8e-3",
      "--out", "switch_sweep"])
