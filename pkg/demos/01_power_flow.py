"""Power-flow tour: parse a network case, validate it, solve it two ways.

The Newton-Raphson solver is the production path; the Gauss-Seidel solver is
slower but shares nothing with it beyond the admittance assembly, which makes
the pair a useful cross-check for the reported losses.
"""

import numpy as np

from derband import (
    branch_losses,
    builtin_case30,
    gauss_seidel_power_flow,
    parse_case,
    solve_power_flow,
    total_losses,
    validate_case,
)

# -- a minimal hand-written 2-bus case ---------------------------------------
case2 = parse_case("""
function mpc = case2
mpc.baseMVA = 100;
mpc.bus = [
1 3 0  0 0 0 1 1.0 0 110 1 1.1 0.9;
2 1 10 4 0 0 1 1.0 0 110 1 1.1 0.9;
];
mpc.gen = [
1 0 0 999 -999 1.0 100 1 999 0;
];
mpc.branch = [
1 2 0.01 0.1 0 0 0 0 0 0 1;
];
""")
print("2-bus case:", validate_case(case2).ok and "valid" or "invalid")
sol2 = solve_power_flow(case2)
print(f"  converged in {sol2.iterations} Newton iterations, "
      f"losses {sol2.losses:.6f} MW")

# -- the embedded IEEE 30-bus case -------------------------------------------
case30 = builtin_case30()
print(f"case30: {len(case30.buses)} buses, {len(case30.branches)} branches, "
      f"{len(case30.gens)} generators")

newton = solve_power_flow(case30)
oracle = gauss_seidel_power_flow(case30)
print(f"  Newton:       {newton.iterations:4d} iterations, "
      f"losses {newton.losses:.9f} MW")
print(f"  Gauss-Seidel: {oracle.iterations:4d} iterations, "
      f"losses {oracle.losses:.9f} MW")
print(f"  cross-method loss gap: {abs(newton.losses - oracle.losses):.2e} MW")

# the same losses through a second formula: series I^2 R summed over branches
print(f"  balance vs branch dissipation: "
      f"{abs(total_losses(newton) - branch_losses(case30, newton)):.2e} MW")

worst = np.argmax(np.abs(newton.v_ang))
print(f"  largest angle: bus {case30.buses[worst].id} "
      f"at {np.rad2deg(newton.v_ang[worst]):.3f} degrees")
