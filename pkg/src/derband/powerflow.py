"""AC power flow on parsed cases: Newton-Raphson solver plus a deliberately
independent Gauss-Seidel solver used as a cross-method oracle in tests.

Conventions: voltages in per unit, angles in radians, powers at the interface
in MW/MVAr.  Bus ordering follows the case's bus list.  Generator reactive
limits are not enforced (the Jacobian keeps a fixed structure).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .caseio import Bus, BusKind, CaseData, Generator


@dataclass(frozen=True)
class PfOptions:
    tol: float = 1e-8        # p.u. mismatch tolerance
    max_iter: int = 50
    flat_start: bool = False

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class AdmittanceMatrix:
    dimension: int
    dense: np.ndarray        # complex (n, n)

    def entries(self):
        """Sparse view: yields (row, col, value) for structural nonzeros."""
        rows, cols = np.nonzero(self.dense)
        for i, j in zip(rows.tolist(), cols.tolist()):
            yield i, j, self.dense[i, j]


@dataclass(frozen=True)
class PfSolution:
    v_mag: np.ndarray        # p.u. per bus
    v_ang: np.ndarray        # radians per bus
    p_inj: np.ndarray        # MW per bus (generation minus load)
    q_inj: np.ndarray        # MVAr per bus
    losses: float            # MW, sum of p_inj
    iterations: int
    converged: bool
    max_mismatch: float      # p.u., recomputed at the final iterate
    failure: str | None = None   # 'singular_jacobian' when LU broke down


def build_admittance(case: CaseData) -> AdmittanceMatrix:
    """Assemble the bus admittance matrix from branches, taps, and shunts."""
    n = len(case.buses)
    index = case.bus_index()
    y = np.zeros((n, n), dtype=complex)
    for branch in case.branches:
        if not branch.status:
            continue
        if branch.r == 0.0 and branch.x == 0.0:
            raise ValueError(
                f"branch {branch.from_bus}-{branch.to_bus} has zero impedance"
            )
        f = index[branch.from_bus]
        t = index[branch.to_bus]
        ys = 1.0 / complex(branch.r, branch.x)
        bc = 1j * branch.b / 2.0
        tap = branch.tap_ratio * np.exp(1j * np.deg2rad(branch.phase_shift))
        y[f, f] += (ys + bc) / (tap * np.conj(tap))
        y[f, t] += -ys / np.conj(tap)
        y[t, f] += -ys / tap
        y[t, t] += ys + bc
    for bus in case.buses:
        i = index[bus.id]
        y[i, i] += complex(bus.shunt_g, bus.shunt_b) / case.base_mva
    return AdmittanceMatrix(dimension=n, dense=y)


def _bus_types(case: CaseData) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kinds = [bus.kind for bus in case.buses]
    slack = np.array([i for i, k in enumerate(kinds) if k is BusKind.SLACK], dtype=int)
    pv = np.array([i for i, k in enumerate(kinds) if k is BusKind.PV], dtype=int)
    pq = np.array([i for i, k in enumerate(kinds) if k is BusKind.PQ], dtype=int)
    return slack, pv, pq


def _injections_pu(case: CaseData) -> tuple[np.ndarray, np.ndarray, dict[int, float]]:
    """Scheduled (P, Q) net injections in p.u., and PV/slack setpoints."""
    n = len(case.buses)
    index = case.bus_index()
    p = np.zeros(n)
    q = np.zeros(n)
    vset: dict[int, float] = {}
    for bus in case.buses:
        i = index[bus.id]
        p[i] -= bus.p_load / case.base_mva
        q[i] -= bus.q_load / case.base_mva
    for gen in case.gens:
        if not gen.status:
            continue
        i = index[gen.bus]
        p[i] += gen.p_out / case.base_mva
        q[i] += gen.q_out / case.base_mva
        vset.setdefault(i, gen.v_set)
    return p, q, vset


def _start_voltage(case: CaseData, opts: PfOptions,
                   vset: dict[int, float]) -> np.ndarray:
    n = len(case.buses)
    if opts.flat_start:
        vm = np.ones(n)
        va = np.zeros(n)
    else:
        vm = np.array([bus.v_mag for bus in case.buses], dtype=float)
        va = np.deg2rad([bus.v_ang for bus in case.buses])
    slack, pv, _ = _bus_types(case)
    for i in np.concatenate([slack, pv]):
        if int(i) in vset:
            vm[int(i)] = vset[int(i)]
    return vm * np.exp(1j * va)


def _mismatch(y: np.ndarray, v: np.ndarray, p_spec: np.ndarray,
              q_spec: np.ndarray, pvpq: np.ndarray, pq: np.ndarray) -> np.ndarray:
    s = v * np.conj(y @ v)
    return np.concatenate([s.real[pvpq] - p_spec[pvpq], s.imag[pq] - q_spec[pq]])


def _jacobian(y: np.ndarray, v: np.ndarray, pvpq: np.ndarray,
              pq: np.ndarray) -> np.ndarray:
    # dS/dtheta and dS/d|V| in polar coordinates, dense.
    ibus = y @ v
    dv = np.diag(v)
    di = np.diag(ibus)
    de = np.diag(v / np.abs(v))
    ds_dth = 1j * dv @ np.conj(di - y @ dv)
    ds_dvm = dv @ np.conj(y @ de) + np.conj(di) @ de
    j11 = ds_dth.real[np.ix_(pvpq, pvpq)]
    j12 = ds_dvm.real[np.ix_(pvpq, pq)]
    j21 = ds_dth.imag[np.ix_(pq, pvpq)]
    j22 = ds_dvm.imag[np.ix_(pq, pq)]
    return np.block([[j11, j12], [j21, j22]])


def solve_power_flow(case: CaseData, opts: PfOptions = PfOptions(),
                     v_start: np.ndarray | None = None) -> PfSolution:
    """Newton-Raphson power flow in polar coordinates.

    Never raises on a failed solve: the returned solution carries
    ``converged=False`` with the last iterate, and ``failure`` set when the
    Jacobian went singular.  ``v_start`` (complex per-bus voltages) warm-starts
    the iteration, overriding the flat/case start.
    """
    y = build_admittance(case).dense
    slack, pv, pq = _bus_types(case)
    if slack.size == 0:
        raise ValueError("case has no slack bus")
    pvpq = np.concatenate([pv, pq])
    p_spec, q_spec, vset = _injections_pu(case)

    if v_start is not None:
        v = v_start.astype(complex).copy()
    else:
        v = _start_voltage(case, opts, vset)
    vm = np.abs(v)
    va = np.angle(v)

    npvpq = pvpq.size
    failure = None
    f = _mismatch(y, v, p_spec, q_spec, pvpq, pq)
    iterations = 0
    converged = bool(np.max(np.abs(f), initial=0.0) <= opts.tol)
    while not converged and iterations < opts.max_iter:
        jac = _jacobian(y, v, pvpq, pq)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            failure = "singular_jacobian"
            break
        iterations += 1
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        f = _mismatch(y, v, p_spec, q_spec, pvpq, pq)
        converged = bool(np.max(np.abs(f), initial=0.0) <= opts.tol)

    return _finish(case, y, v, iterations, converged, f, failure)


def _finish(case: CaseData, y: np.ndarray, v: np.ndarray, iterations: int,
            converged: bool, f: np.ndarray, failure: str | None) -> PfSolution:
    s = v * np.conj(y @ v) * case.base_mva
    return PfSolution(
        v_mag=np.abs(v),
        v_ang=np.angle(v),
        p_inj=s.real,
        q_inj=s.imag,
        losses=float(np.sum(s.real)),
        iterations=iterations,
        converged=converged,
        max_mismatch=float(np.max(np.abs(f), initial=0.0)),
        failure=failure,
    )


def gauss_seidel_power_flow(case: CaseData, tol: float = 1e-10,
                            max_iter: int = 100_000) -> PfSolution:
    """Gauss-Seidel power flow: the slow, structurally independent oracle.

    Shares nothing with the Newton path beyond the admittance assembly; used
    to cross-check losses to tight tolerances.
    """
    y = build_admittance(case).dense
    slack, pv, pq = _bus_types(case)
    if slack.size == 0:
        raise ValueError("case has no slack bus")
    pvpq = np.concatenate([pv, pq])
    p_spec, q_spec, vset = _injections_pu(case)
    v = _start_voltage(case, PfOptions(tol=tol, max_iter=max_iter), vset)
    pv_set = set(pv.tolist())

    f = _mismatch(y, v, p_spec, q_spec, pvpq, pq)
    iterations = 0
    converged = bool(np.max(np.abs(f), initial=0.0) <= tol)
    while not converged and iterations < max_iter:
        iterations += 1
        for i in pvpq.tolist():
            if i in pv_set:
                q_calc = (v[i] * np.conj(y[i] @ v)).imag
                s = complex(p_spec[i], q_calc)
            else:
                s = complex(p_spec[i], q_spec[i])
            sigma = y[i] @ v - y[i, i] * v[i]
            v_new = (np.conj(s / v[i]) - sigma) / y[i, i]
            if i in pv_set:
                v_new = vset.get(i, abs(v[i])) * v_new / abs(v_new)
            v[i] = v_new
        f = _mismatch(y, v, p_spec, q_spec, pvpq, pq)
        converged = bool(np.max(np.abs(f), initial=0.0) <= tol)

    return _finish(case, y, v, iterations, converged, f, None)


def total_losses(sol: PfSolution) -> float:
    """Network active losses in MW: generation minus load over all buses."""
    if not sol.converged:
        raise ValueError("losses requested on a non-converged solution")
    return sol.losses


def branch_losses(case: CaseData, sol: PfSolution) -> float:
    """Series-resistance dissipation summed over in-service branches, in MW.

    Independent second route for the loss identity: equals
    ``generation - load`` whenever shunts carry no conductance.
    """
    index = case.bus_index()
    v = sol.v_mag * np.exp(1j * sol.v_ang)
    total = 0.0
    for branch in case.branches:
        if not branch.status:
            continue
        f = index[branch.from_bus]
        t = index[branch.to_bus]
        ys = 1.0 / complex(branch.r, branch.x)
        tap = branch.tap_ratio * np.exp(1j * np.deg2rad(branch.phase_shift))
        i_series = (v[f] / tap - v[t]) * ys
        total += float(np.abs(i_series) ** 2 * branch.r)
    return total * case.base_mva


def apply_commitment(case: CaseData, placement_bus: int,
                     commitments: np.ndarray, capacity: float) -> CaseData:
    """Copy of ``case`` with one extra generator at ``placement_bus`` whose
    output is ``capacity`` times the number of committed agents."""
    index = case.bus_index()
    if placement_bus not in index:
        raise ValueError(f"unknown bus {placement_bus}")
    committed = int(np.count_nonzero(commitments))
    n_agents = len(commitments)
    v_set = next(
        (g.v_set for g in case.gens if g.bus == placement_bus and g.status),
        case.buses[index[placement_bus]].v_mag,
    )
    extra = Generator(
        bus=placement_bus,
        p_out=capacity * committed,
        q_out=0.0,
        q_max=0.0,
        q_min=0.0,
        v_set=v_set,
        status=True,
        p_max=capacity * n_agents,
        p_min=0.0,
    )
    return replace(case, gens=case.gens + (extra,))
