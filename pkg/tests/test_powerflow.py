import numpy as np
import pytest

from derband.caseio import builtin_case30, parse_case, with_loads
from derband.powerflow import (
    PfOptions,
    apply_commitment,
    branch_losses,
    build_admittance,
    gauss_seidel_power_flow,
    solve_power_flow,
    total_losses,
)

TWO_BUS_TEMPLATE = """\
function mpc = case2
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1.00 0 110 1 1.1 0.9;
2 1 {p} {q} 0 0 1 1.00 0 110 1 1.1 0.9;
];
mpc.gen = [
1 0 0 999 -999 1.00 100 1 999 0;
];
mpc.branch = [
1 2 {r} {x} 0 0 0 0 {tap} 0 1;
];
"""


def two_bus(p=0.0, q=0.0, r=0.0, x=0.1, tap=0):
    return parse_case(TWO_BUS_TEMPLATE.format(p=p, q=q, r=r, x=x, tap=tap))


def test_admittance_single_branch_closed_form():
    case = two_bus()
    y = build_admittance(case).dense
    expected = -1.0 / complex(0, 0.1)
    assert y[0, 1] == pytest.approx(expected)
    assert y[1, 0] == pytest.approx(expected)
    assert y[0, 0] == pytest.approx(-expected)
    assert y[1, 1] == pytest.approx(-expected)


def test_admittance_tap_scales_from_side_diagonal():
    plain = build_admittance(two_bus()).dense
    tapped = build_admittance(two_bus(tap=2.0)).dense
    assert tapped[0, 0] == pytest.approx(plain[0, 0] / 4.0)
    assert tapped[1, 1] == pytest.approx(plain[1, 1])


def test_admittance_case30_structure():
    adm = build_admittance(builtin_case30())
    assert adm.dimension == 30
    pattern = adm.dense != 0
    assert np.array_equal(pattern, pattern.T)


def test_admittance_zero_impedance_branch_rejected():
    case = two_bus(r=0.0, x=0.0)
    with pytest.raises(ValueError, match="zero impedance"):
        build_admittance(case)


def test_two_bus_no_load_flat_solution():
    sol = solve_power_flow(two_bus())
    assert sol.converged
    assert sol.iterations <= 2
    assert sol.losses == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(sol.v_mag, 1.0)
    assert np.allclose(sol.v_ang, 0.0)


def test_two_bus_lossy_against_gauss_seidel_oracle():
    case = two_bus(p=10.0, q=0.0, r=0.01, x=0.1)
    newton = solve_power_flow(case)
    oracle = gauss_seidel_power_flow(case)
    assert newton.converged and oracle.converged
    assert abs(newton.losses - oracle.losses) < 1e-6
    assert newton.losses > 0


def test_case30_converges_fast_and_matches_oracle():
    case = builtin_case30()
    sol = solve_power_flow(case, PfOptions(tol=1e-8))
    assert sol.converged
    assert sol.iterations <= 10
    oracle = gauss_seidel_power_flow(case)
    assert oracle.converged
    assert abs(sol.losses - oracle.losses) < 1e-6
    assert sol.losses > 0


def test_loss_identity_two_routes():
    for case in (two_bus(p=10.0, r=0.01), builtin_case30()):
        sol = solve_power_flow(case)
        assert abs(total_losses(sol) - branch_losses(case, sol)) < 1e-9


def test_loss_identity_under_randomized_loads():
    base = builtin_case30()
    rng = np.random.default_rng(321)
    for _ in range(20):
        scale = dict(zip(
            (b.id for b in base.buses),
            (b.p_load * rng.uniform(0.8, 1.2) for b in base.buses),
        ))
        case = with_loads(base, scale)
        sol = solve_power_flow(case)
        assert sol.converged
        assert abs(total_losses(sol) - branch_losses(case, sol)) < 1e-9


def test_mismatch_contract_recomputed_from_scratch():
    case = builtin_case30()
    opts = PfOptions(tol=1e-8)
    sol = solve_power_flow(case, opts)
    # recompute the bus power mismatch directly from the returned voltages
    y = build_admittance(case).dense
    v = sol.v_mag * np.exp(1j * sol.v_ang)
    s = v * np.conj(y @ v) * case.base_mva
    p_sched = np.zeros(30)
    q_sched = np.zeros(30)
    index = case.bus_index()
    for bus in case.buses:
        p_sched[index[bus.id]] -= bus.p_load
        q_sched[index[bus.id]] -= bus.q_load
    for gen in case.gens:
        p_sched[index[gen.bus]] += gen.p_out
    kinds = [b.kind.name for b in case.buses]
    pv_pq = [i for i, k in enumerate(kinds) if k != "SLACK"]
    pq = [i for i, k in enumerate(kinds) if k == "PQ"]
    mis_p = np.abs(s.real[pv_pq] - p_sched[pv_pq]) / case.base_mva
    mis_q = np.abs(s.imag[pq] - q_sched[pq]) / case.base_mva
    assert max(mis_p.max(), mis_q.max()) <= opts.tol


def test_determinism_bitwise():
    case = builtin_case30()
    a = solve_power_flow(case)
    b = solve_power_flow(case)
    assert np.array_equal(a.v_mag, b.v_mag)
    assert np.array_equal(a.v_ang, b.v_ang)
    assert a.losses == b.losses


def test_losses_monotone_in_pq_load():
    losses = [
        solve_power_flow(two_bus(p=p, r=0.01, x=0.1)).losses
        for p in (5.0, 10.0, 15.0, 20.0, 25.0)
    ]
    assert all(b >= a for a, b in zip(losses, losses[1:]))


def test_non_convergence_returns_instead_of_raising():
    # far beyond the loadability limit of a single weak line
    case = two_bus(p=5000.0, q=2000.0, r=0.01, x=0.5)
    sol = solve_power_flow(case, PfOptions(max_iter=10))
    assert not sol.converged
    assert sol.iterations <= 10
    with pytest.raises(ValueError):
        total_losses(sol)


def test_slack_absorbs_imbalance():
    case = two_bus(p=10.0, r=0.01, x=0.1)
    sol = solve_power_flow(case)
    # slack injection equals load plus losses; bus 2 injection equals -load
    assert sol.p_inj[0] == pytest.approx(10.0 + sol.losses, abs=1e-6)
    assert sol.p_inj[1] == pytest.approx(-10.0, abs=1e-6)


def test_apply_commitment_zero_agents():
    case = builtin_case30()
    out = apply_commitment(case, 2, np.zeros(50, dtype=bool), 2.4388)
    assert len(out.gens) == len(case.gens) + 1
    assert out.gens[-1].p_out == 0.0
    assert out.gens[-1].bus == 2
    assert case == builtin_case30()  # original untouched


def test_apply_commitment_half_and_full():
    case = builtin_case30()
    commitments = np.zeros(50, dtype=bool)
    commitments[:25] = True
    half = apply_commitment(case, 2, commitments, 2.4388)
    assert half.gens[-1].p_out == pytest.approx(60.97, abs=1e-9)
    full = apply_commitment(case, 2, np.ones(50, dtype=bool), 2.4388)
    assert full.gens[-1].p_out == pytest.approx(121.94, abs=1e-9)


def test_apply_commitment_unknown_bus():
    with pytest.raises(ValueError, match="unknown bus"):
        apply_commitment(builtin_case30(), 99, np.ones(4, dtype=bool), 1.0)


def test_gauss_seidel_handles_pv_buses():
    # case30 has five PV buses; the oracle must hold their voltage setpoints
    sol = gauss_seidel_power_flow(builtin_case30())
    case = builtin_case30()
    index = case.bus_index()
    for gen in case.gens:
        i = index[gen.bus]
        if case.buses[i].kind.name == "PV":
            assert sol.v_mag[i] == pytest.approx(gen.v_set, abs=1e-8)
