"""Set-valued analysis of the discontinuous pieces of the closed loop.

The deadband map is discontinuous at the band edge; its convexification fills
the jump with the segment of both one-sided values, which is what makes
solution sets (rather than single orbits) the right object there.  The other
checkers certify, numerically, the ingredients that ergodicity arguments for
such loops lean on: preserved measures, the boundary matching of piecewise
measure densities, contraction on average of the random transition family,
and incremental stability of the controller itself.
"""

import numpy as np

from derband import SimConfig
from derband.control import ControllerKind, make_controller
from derband.filippov import (
    affine_split_map,
    binary_agent_family,
    check_average_contraction,
    check_matching_condition,
    check_measure_preservation,
    collapse_map,
    convexify,
    deadband_edge_map,
    enumerate_solutions,
    probe_incremental_iss,
    shift_map,
    uniform_measure,
)

# 1. convexified deadband edge: the jump at x = delta becomes a segment
delta = 1.0
edge = deadband_edge_map(delta)
for x in (0.5, 1.0, 2.0):
    value = convexify(edge, x)
    if value.is_singleton:
        print(f"F[phi]({x}) = {{{float(value.a[0])}}}")
    else:
        lo, hi = (float(v[0]) for v in value.endpoints())
        print(f"F[phi]({x}) = segment [{lo}, {hi}]")

# 2. solution trees through a branching point
branching = affine_split_map(0.5, 0.0, 0.5, 1.0)
sols = enumerate_solutions(branching, 0.0, k=2, per_step_cap=3)
print(f"branching example, k=2: {len(sols)} representative solutions")
for seq in sorted(sols):
    print(f"    0.0 -> {seq[0]} -> {seq[1]}")

# 3. invariant measures, statistically: the circle shift keeps the uniform
# measure, the collapse map destroys it
rng = np.random.default_rng(9)
keep = check_measure_preservation(shift_map(0.37), uniform_measure(0, 1),
                                  n_sets=5, n_samples=50_000, k=1, rng=rng)
lose = check_measure_preservation(collapse_map(0.5), uniform_measure(0, 1),
                                  n_sets=5, n_samples=50_000, k=1, rng=rng)
print(f"shift map preserves the uniform measure: {keep.passed}")
print(f"collapse map preserves it: {lose.passed}")

# 4. matching of piecewise densities at the boundary: alpha- f- = alpha+ f+
jump = affine_split_map(0.0, 1.0, 0.0, 2.0)    # values 1 below, 2 above x=0
balanced = check_matching_condition(jump, alpha_minus=2.0, alpha_plus=1.0,
                                    boundary_points=[0.0], tol=1e-9)
print(f"density ratio 2:1 balances the value jump 1:2 -> "
      f"residual {balanced.max_residual}")

# 5. contraction on average of the commitment transition family: every family
# member sends the ensemble to one fixed pattern, so the expected Lipschitz
# ratio is zero, the strongest possible contraction
maps, probs = binary_agent_family(4)
family = check_average_contraction(maps, probs, signals=[-1.0, 0.0, 1.0],
                                   sample_pairs=200,
                                   box=(np.zeros(4), np.ones(4)),
                                   rng=np.random.default_rng(2))
print(f"agent family expected ratio: {family.ratio_max}")

# 6. the controller side: leak 0.99 forgets initial conditions geometrically,
# leak 1.0 remembers them forever
for kind in (ControllerKind.LAG, ControllerKind.PI):
    ctl = make_controller(kind, kp=0.05, ki=0.01)
    probe = probe_incremental_iss(ctl, [0.0] * 300, xc_a=16.0, xc_b=0.0)
    print(f"{kind.value}: gap after 300 steps = {probe.gaps[-1]:.6g}, "
          f"verdict {probe.verdict}")
