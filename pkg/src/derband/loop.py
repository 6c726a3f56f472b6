"""Closed-loop engine: agents -> network backend -> filter -> error ->
controller -> agents, over a horizon, with seeded repetitions.

Step order within one iteration k (1-based):
  1. aggregate p(k) from the commitments sampled at k-1;
  2. filter p_hat(k) = (p(k) + p(k-1))/2 + losses from the latest backend run;
  3. e(k) = r - p_hat(k);
  4. controller update with deadband freeze;
  5. sample new commitments from the emitted signal;
  6. evaluate the backend (power flow or identity) for the next step's losses.

Seeding: a repetition's stream seed is a documented 64-bit mix of the master
seed and the repetition index.  All initial-controller-state labels within a
repetition share that stream, so label pairs are coupled through common
random numbers; distribution distances between labels then measure controller
memory, not fresh sampling noise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import powerflow as pf
from .agents import AgentParams, draw_commitments, make_ensemble
from .caseio import CaseData
from .control import LEAK, ControllerKind

_MASK64 = (1 << 64) - 1

#: Label names assigned to initial controller states, in order.
STATE_LABELS = "ABCDEFGH"


def splitmix64(z: int) -> int:
    """One SplitMix64 output step; the documented seed-mixing primitive."""
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def subseed(master_seed: int, repetition: int) -> int:
    """Stream seed for one repetition: splitmix64(master ^ splitmix64(rep+1)).

    Shared by all initial-state labels of the repetition (common random
    numbers across labels).
    """
    return splitmix64((master_seed & _MASK64) ^ splitmix64(repetition + 1))


@dataclass(frozen=True)
class SimConfig:
    n_agents: int = 20
    backend: str = "lossless"            # 'lossless' or 'ac'
    case: CaseData | None = None         # required for the 'ac' backend
    placement_bus: int = 2
    reference_mode: str = "half_capacity"  # 'fixed' | 'half_capacity' | 'case_plus_losses'
    reference_value: float = 60.97       # MW; base value for fixed / case_plus_losses
    capacity: float | None = None        # MW per agent; None derives 2r/N
    horizon: int = 20_000
    controller_kind: ControllerKind = ControllerKind.LAG
    kp: float | None = None              # None -> 0.5/r
    ki: float | None = None              # None -> 0.1/r
    deadband_fraction: float = 0.0       # delta = fraction * r
    # None -> (0, r); entries may be floats or the literal token 'r'
    initial_states: tuple[float | str, ...] | None = None
    initial_pi: float = 0.0
    xi: float = 1.0
    x01: float = 0.0
    x02: float = 0.0
    seed: int = 12345
    repetitions: int = 1
    pf_tol: float = 1e-8
    pf_max_iter: int = 50
    record_commitments: bool = False

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.n_agents < 2 or self.n_agents % 2 != 0:
            raise ValueError("n_agents must be even and at least 2")
        if self.backend not in ("lossless", "ac"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "ac" and self.case is None:
            raise ValueError("the ac backend requires a case")
        if self.reference_mode not in ("fixed", "half_capacity", "case_plus_losses"):
            raise ValueError(f"unknown reference_mode {self.reference_mode!r}")
        if self.deadband_fraction < 0:
            raise ValueError("deadband_fraction must be nonnegative")
        if self.initial_states is not None:
            for state in self.initial_states:
                if isinstance(state, str) and state != "r":
                    raise ValueError(
                        f"initial state {state!r} is neither a number nor 'r'"
                    )


@dataclass(frozen=True)
class ResolvedLoop:
    r: float
    capacity: float
    kp: float
    ki: float
    leak: float
    deadband: float          # MW
    initial_states: tuple[float, ...]
    losses0: float


@dataclass
class Trajectory:
    k: np.ndarray            # step index, 1..horizon
    p: np.ndarray            # aggregate output, MW
    p_hat: np.ndarray        # filtered output, MW
    e: np.ndarray            # error, MW
    pi: np.ndarray           # control signal
    x_c: np.ndarray          # controller state after the step
    losses: np.ndarray       # losses used inside the filter at this step, MW
    committed: np.ndarray    # committed agents after this step's sampling
    seed: int
    config_digest: str
    label: str = "A"
    repetition: int = 0
    x_c0: float = 0.0
    r: float = 0.0
    valid: bool = True
    failed_step: int | None = None
    commitments: np.ndarray | None = None   # (steps, n_agents) when recorded

    def __len__(self) -> int:
        return len(self.k)

    def to_csv(self, path) -> None:
        # repr of Python floats round-trips exactly, so equal arrays give
        # byte-identical files
        cols = [self.p, self.p_hat, self.e, self.pi, self.x_c, self.losses]
        with open(path, "w", newline="") as fh:
            fh.write("k,p,p_hat,e,pi,x_c,losses,committed\n")
            for i in range(len(self.k)):
                values = ",".join(repr(float(c[i])) for c in cols)
                fh.write(f"{self.k[i]},{values},{self.committed[i]}\n")


@dataclass
class RunSet:
    config: SimConfig
    resolved: ResolvedLoop
    labels: tuple[str, ...]
    trajectories: dict[tuple[int, str], Trajectory] = field(default_factory=dict)

    def by_label(self, label: str) -> list[Trajectory]:
        return [t for (rep, lab), t in sorted(self.trajectories.items()) if lab == label]


def _derived_capacity(cfg: SimConfig, r_base: float) -> float:
    if cfg.capacity is not None:
        return cfg.capacity
    return 2.0 * r_base / cfg.n_agents


class _AcBackend:
    """Warm-started Newton power flow around a fixed base case.

    Only the agent injection at the placement bus changes between steps, so
    the admittance matrix, scheduled injections, and bus partition are built
    once; the solve matches ``apply_commitment`` + ``solve_power_flow``
    bit for bit.
    """

    def __init__(self, case: CaseData, placement_bus: int, tol: float, max_iter: int):
        self.case = case
        self.tol = tol
        self.max_iter = max_iter
        self.y = pf.build_admittance(case).dense
        self.slack, self.pv, self.pq = pf._bus_types(case)
        if self.slack.size == 0:
            raise ValueError("case has no slack bus")
        self.pvpq = np.concatenate([self.pv, self.pq])
        self.p_base, self.q_base, self.vset = pf._injections_pu(case)
        self.bus_i = case.bus_index()[placement_bus]
        self.v = pf._start_voltage(case, pf.PfOptions(tol=tol, max_iter=max_iter), self.vset)

    def losses(self, injection_mw: float) -> float | None:
        """Solve with ``injection_mw`` added at the placement bus; returns the
        losses in MW, or None when Newton fails (caller aborts the run)."""
        p_spec = self.p_base.copy()
        p_spec[self.bus_i] += injection_mw / self.case.base_mva
        v = self.v
        vm = np.abs(v)
        va = np.angle(v)
        f = pf._mismatch(self.y, v, p_spec, self.q_base, self.pvpq, self.pq)
        iterations = 0
        npvpq = self.pvpq.size
        converged = bool(np.max(np.abs(f), initial=0.0) <= self.tol)
        while not converged and iterations < self.max_iter:
            jac = pf._jacobian(self.y, v, self.pvpq, self.pq)
            try:
                dx = np.linalg.solve(jac, -f)
            except np.linalg.LinAlgError:
                return None
            iterations += 1
            va[self.pvpq] += dx[:npvpq]
            vm[self.pq] += dx[npvpq:]
            v = vm * np.exp(1j * va)
            f = pf._mismatch(self.y, v, p_spec, self.q_base, self.pvpq, self.pq)
            converged = bool(np.max(np.abs(f), initial=0.0) <= self.tol)
        if not converged:
            return None
        self.v = v  # warm start for the next step
        s = v * np.conj(self.y @ v) * self.case.base_mva
        return float(np.sum(s.real))


def resolve_loop(cfg: SimConfig) -> ResolvedLoop:
    """Fix r, per-agent capacity, gains, and deadband width for a config.

    For the case_plus_losses mode this runs the initial power flow once:
    r = reference_value + losses at k=0, calibrated once and then constant.
    """
    if cfg.reference_mode == "half_capacity":
        capacity = cfg.capacity if cfg.capacity is not None else 1.0
        r_base = cfg.n_agents * capacity / 2.0
    else:
        r_base = cfg.reference_value
        capacity = _derived_capacity(cfg, r_base)

    losses0 = 0.0
    if cfg.backend == "ac":
        committed0 = cfg.n_agents // 2
        backend = _AcBackend(cfg.case, cfg.placement_bus, cfg.pf_tol, cfg.pf_max_iter)
        losses0_or_none = backend.losses(capacity * committed0)
        if losses0_or_none is None:
            raise RuntimeError("initial power flow did not converge")
        losses0 = losses0_or_none

    r = r_base + losses0 if cfg.reference_mode == "case_plus_losses" else r_base
    kp = cfg.kp if cfg.kp is not None else 0.5 / r
    ki = cfg.ki if cfg.ki is not None else 0.1 / r
    if cfg.initial_states is None:
        states = (0.0, r)
    else:
        states = tuple(r if s == "r" else float(s) for s in cfg.initial_states)
    return ResolvedLoop(
        r=r,
        capacity=capacity,
        kp=kp,
        ki=ki,
        leak=LEAK[cfg.controller_kind],
        deadband=cfg.deadband_fraction * r,
        initial_states=tuple(states),
        losses0=losses0,
    )


def _digest(cfg: SimConfig, rs: ResolvedLoop) -> str:
    text = repr((cfg.n_agents, cfg.backend, cfg.placement_bus, cfg.reference_mode,
                 rs.r, rs.capacity, rs.kp, rs.ki, rs.leak, rs.deadband,
                 cfg.horizon, cfg.xi, cfg.x01, cfg.x02, cfg.initial_pi))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def run_closed_loop(
    cfg: SimConfig,
    seed: int,
    x_c0: float,
    label: str = "A",
    repetition: int = 0,
    resolved: ResolvedLoop | None = None,
    prob_fn: Callable[[AgentParams, float], float] | None = None,
) -> Trajectory:
    """One seeded closed-loop run; returns the full per-step record."""
    rs = resolved if resolved is not None else resolve_loop(cfg)
    horizon = cfg.horizon
    rng = np.random.default_rng(seed)

    ensemble = make_ensemble(cfg.n_agents, capacity=rs.capacity,
                             xi=cfg.xi, x01=cfg.x01, x02=cfg.x02)
    p_off, p_scl = ensemble._p_offset, ensemble._p_scale
    xi_arr, x0_arr = ensemble._xi, ensemble._x0
    committed_arr = ensemble.commitments
    backend = None
    if cfg.backend == "ac":
        backend = _AcBackend(cfg.case, cfg.placement_bus, cfg.pf_tol, cfg.pf_max_iter)

    kp, ki, leak, delta, r = rs.kp, rs.ki, rs.leak, rs.deadband, rs.r
    capacity = rs.capacity
    x_c = float(x_c0)
    last_pi = float(cfg.initial_pi)
    count = int(committed_arr.sum())
    prev_p = capacity * count
    losses_prev = rs.losses0

    col_p = np.empty(horizon)
    col_phat = np.empty(horizon)
    col_e = np.empty(horizon)
    col_pi = np.empty(horizon)
    col_xc = np.empty(horizon)
    col_losses = np.empty(horizon)
    col_committed = np.empty(horizon, dtype=np.int64)
    commit_matrix = (
        np.empty((horizon, cfg.n_agents), dtype=bool) if cfg.record_commitments else None
    )

    valid = True
    failed_step = None
    steps = horizon
    for i in range(horizon):
        # mirrors filter_step / error / controller_step on local floats;
        # drift between the two is pinned by the step-composition tests
        p = capacity * count
        p_hat = 0.5 * (p + prev_p) + losses_prev
        e = r - p_hat
        if abs(e) >= delta:
            x_c = leak * x_c + e
            pi = kp * e + ki * x_c
        else:
            pi = last_pi
        if prob_fn is None:
            committed_arr = draw_commitments(p_off, p_scl, xi_arr, x0_arr, pi, rng)
        else:
            probs = np.array([prob_fn(par, pi) for par in ensemble.params])
            committed_arr = rng.random(cfg.n_agents) < probs
        count = int(np.count_nonzero(committed_arr))
        if backend is not None:
            losses_next = backend.losses(capacity * count)
            if losses_next is None:
                valid = False
                failed_step = i + 1
                steps = i
                break
        else:
            losses_next = 0.0
        col_p[i] = p
        col_phat[i] = p_hat
        col_e[i] = e
        col_pi[i] = pi
        col_xc[i] = x_c
        col_losses[i] = losses_prev
        col_committed[i] = count
        if commit_matrix is not None:
            commit_matrix[i] = committed_arr
        prev_p = p
        losses_prev = losses_next
        last_pi = pi

    return Trajectory(
        k=np.arange(1, steps + 1, dtype=np.int64),
        p=col_p[:steps],
        p_hat=col_phat[:steps],
        e=col_e[:steps],
        pi=col_pi[:steps],
        x_c=col_xc[:steps],
        losses=col_losses[:steps],
        committed=col_committed[:steps],
        seed=seed,
        config_digest=_digest(cfg, rs),
        label=label,
        repetition=repetition,
        x_c0=float(x_c0),
        r=rs.r,
        valid=valid,
        failed_step=failed_step,
        commitments=commit_matrix[:steps] if commit_matrix is not None else None,
    )


def run_ensemble_experiment(cfg: SimConfig) -> RunSet:
    """All (repetition, initial-state) runs for a config.

    Repetition j uses stream seed ``subseed(cfg.seed, j)``; the configured
    initial controller states run against identical streams.  Per-run
    failures are kept in the set without aborting siblings.
    """
    rs = resolve_loop(cfg)
    labels = tuple(STATE_LABELS[i] for i in range(len(rs.initial_states)))
    runset = RunSet(config=cfg, resolved=rs, labels=labels)
    for rep in range(cfg.repetitions):
        stream_seed = subseed(cfg.seed, rep)
        for label, x0 in zip(labels, rs.initial_states):
            runset.trajectories[(rep, label)] = run_closed_loop(
                cfg, stream_seed, x0, label=label, repetition=rep, resolved=rs
            )
    return runset
