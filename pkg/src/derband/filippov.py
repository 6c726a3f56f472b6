"""Set-valued machinery for piecewise-smooth discrete dynamics.

A :class:`PiecewiseMap` holds two smooth branches separated by a scalar event
function h with a regular zero level set (codimension 1).  The convexified
value at a point is the branch value away from the boundary and the segment
between the two one-sided values on it.  On top of that sit enumeration of
inclusion solutions, statistical invariant-measure checks, the
boundary-matching condition for piecewise-scaled measures, a
contraction-on-average estimator for random map families, and an empirical
incremental-stability probe for controller instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .control import ControllerState, controller_step


Point = float | np.ndarray


@dataclass(frozen=True)
class SetValue:
    """Either a single point or the closed segment between two points."""

    a: np.ndarray
    b: np.ndarray | None = None

    @classmethod
    def point(cls, x) -> "SetValue":
        return cls(a=np.atleast_1d(np.asarray(x, dtype=float)))

    @classmethod
    def segment(cls, lo, hi) -> "SetValue":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if np.array_equal(lo, hi):
            return cls(a=lo)
        return cls(a=lo, b=hi)

    @property
    def is_singleton(self) -> bool:
        return self.b is None

    def endpoints(self) -> tuple[np.ndarray, ...]:
        return (self.a,) if self.b is None else (self.a, self.b)

    def sample(self, count: int) -> list[np.ndarray]:
        """Endpoints plus uniformly spaced interior points, ``count`` total."""
        if self.b is None:
            return [self.a]
        if count < 2:
            raise ValueError("segment sampling needs at least 2 points")
        ts = np.linspace(0.0, 1.0, count)
        return [self.a + t * (self.b - self.a) for t in ts]

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.b is None:
            return bool(np.allclose(x, self.a, atol=tol))
        d = self.b - self.a
        denom = float(d @ d)
        t = float((x - self.a) @ d) / denom
        if t < -tol or t > 1 + tol:
            return False
        return bool(np.allclose(self.a + t * d, x, atol=tol))


@dataclass(frozen=True)
class PiecewiseMap:
    """Two smooth branches split by the sign of a scalar event function."""

    branch_minus: Callable[[np.ndarray], np.ndarray]   # used where h < 0
    branch_plus: Callable[[np.ndarray], np.ndarray]    # used where h > 0
    event_fn: Callable[[np.ndarray], float]
    event_grad: Callable[[np.ndarray], np.ndarray]
    boundary_tol: float = 1e-12    # relative; scaled by max(1, |x|)

    def _eval(self, fn, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(np.asarray(fn(x if x.size > 1 else float(x[0])), dtype=float))

    def on_boundary(self, x: np.ndarray) -> bool:
        scale = max(1.0, float(np.max(np.abs(x))))
        return abs(float(self.event_fn(x if x.size > 1 else float(x[0])))) <= self.boundary_tol * scale

    def side(self, x: np.ndarray) -> int:
        """-1 below the boundary strip, +1 above, 0 inside it."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        h = float(self.event_fn(x if x.size > 1 else float(x[0])))
        scale = max(1.0, float(np.max(np.abs(x))))
        if h < -self.boundary_tol * scale:
            return -1
        if h > self.boundary_tol * scale:
            return 1
        return 0


def convexify(pmap: PiecewiseMap, x: Point) -> SetValue:
    """Convexified value at x: the active branch value off the boundary, the
    closed segment between the two one-sided values on it."""
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    side = pmap.side(xv)
    if side < 0:
        return SetValue.point(pmap._eval(pmap.branch_minus, xv))
    if side > 0:
        return SetValue.point(pmap._eval(pmap.branch_plus, xv))
    lo = pmap._eval(pmap.branch_minus, xv)
    hi = pmap._eval(pmap.branch_plus, xv)
    return SetValue.segment(lo, hi)


def _as_key(x: np.ndarray) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(x))


def enumerate_solutions(
    pmap: PiecewiseMap,
    x0: Point,
    k: int,
    per_step_cap: int,
    max_nodes: int = 100_000,
) -> set[tuple]:
    """Breadth-first representatives of the inclusion solutions of length k.

    Singleton values propagate one child; segment values propagate
    ``per_step_cap`` representatives (endpoints plus uniform interior points).
    Returns the set of state sequences (x(1), ..., x(k)); scalar states are
    plain floats inside the tuples.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if per_step_cap < 2:
        raise ValueError("per_step_cap must be at least 2")
    x0v = np.atleast_1d(np.asarray(x0, dtype=float))
    scalar = x0v.size == 1

    def pack(x: np.ndarray):
        return float(x[0]) if scalar else _as_key(x)

    frontier: list[tuple[tuple, np.ndarray]] = [((), x0v)]
    nodes = 1
    for _ in range(k):
        next_frontier: list[tuple[tuple, np.ndarray]] = []
        seen: set[tuple] = set()
        for prefix, x in frontier:
            value = convexify(pmap, x)
            children = (
                [value.a] if value.is_singleton else value.sample(per_step_cap)
            )
            for child in children:
                seq = prefix + (pack(child),)
                if seq in seen:
                    continue
                seen.add(seq)
                next_frontier.append((seq, child))
                nodes += 1
                if nodes > max_nodes:
                    raise RuntimeError(f"solution tree exceeded {max_nodes} nodes")
        frontier = next_frontier
    return {prefix for prefix, _ in frontier}


@dataclass(frozen=True)
class MeasureSpec:
    """A probability measure on a box, with sampler and density evaluator."""

    lo: float
    hi: float
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    density: Callable[[np.ndarray], np.ndarray]

    def validate(self, quad_tol: float = 1e-6) -> None:
        """Check density nonnegativity on a grid and unit mass by quadrature."""
        grid = np.linspace(self.lo, self.hi, 2001)
        dens = np.asarray(self.density(grid), dtype=float)
        if np.any(dens < 0):
            raise ValueError("density takes negative values")
        mass, _ = integrate.quad(lambda t: float(self.density(np.array([t]))[0]),
                                 self.lo, self.hi, limit=200)
        if abs(mass - 1.0) > quad_tol:
            raise ValueError(f"density integrates to {mass}, not 1")


def uniform_measure(lo: float, hi: float) -> MeasureSpec:
    width = hi - lo
    return MeasureSpec(
        lo=lo,
        hi=hi,
        sampler=lambda rng, n: rng.uniform(lo, hi, n),
        density=lambda x: np.where((x >= lo) & (x <= hi), 1.0 / width, 0.0),
    )


def piecewise_scaled(base: MeasureSpec, alpha_minus: float, alpha_plus: float,
                     event_fn: Callable[[np.ndarray], np.ndarray]) -> MeasureSpec:
    """Measure with density proportional to alpha-(x) on {h<0} and alpha+ on
    {h>0}, normalized back to unit mass; sampling is by rejection."""
    if alpha_minus < 0 or alpha_plus < 0:
        raise ValueError("scaling constants must be nonnegative")

    def raw(x):
        x = np.asarray(x, dtype=float)
        h = np.asarray(event_fn(x), dtype=float)
        return np.where(h < 0, alpha_minus, alpha_plus) * base.density(x)

    mass, _ = integrate.quad(lambda t: float(raw(np.array([t]))[0]),
                             base.lo, base.hi, limit=200)
    if mass <= 0:
        raise ValueError("scaled density has zero mass")
    bound = max(alpha_minus, alpha_plus) / mass

    def density(x):
        return raw(x) / mass

    def sampler(rng, n):
        out = np.empty(n)
        filled = 0
        while filled < n:
            cand = base.sampler(rng, 2 * (n - filled))
            accept = rng.random(cand.size) * bound * base.density(cand) <= density(cand)
            take = cand[accept][: n - filled]
            out[filled:filled + take.size] = take
            filled += take.size
        return out

    return MeasureSpec(lo=base.lo, hi=base.hi, sampler=sampler, density=density)


@dataclass
class SetCheckRecord:
    set_lo: float
    set_hi: float
    mu_set: float
    mu_image: float
    band: float            # 3-sigma combined binomial band
    passed: bool


@dataclass
class MeasurePreservationReport:
    records: list[SetCheckRecord] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.records) and all(r.passed for r in self.records)


def _forward_image_points(pmap: PiecewiseMap, points: np.ndarray, k: int,
                          branch_cap: int = 3, point_cap: int = 100_000) -> np.ndarray:
    cloud = points
    for _ in range(k):
        nxt: list[float] = []
        for x in cloud:
            value = convexify(pmap, float(x))
            if value.is_singleton:
                nxt.append(float(value.a[0]))
            else:
                nxt.extend(float(p[0]) for p in value.sample(branch_cap))
        cloud = np.unique(np.asarray(nxt))
        if cloud.size > point_cap:
            raise RuntimeError("image cloud exceeded the point cap")
    return cloud


def _intervals_from_points(points: np.ndarray) -> list[tuple[float, float]]:
    """Cover a 1-d point cloud by intervals, splitting at unusually large gaps."""
    points = np.sort(points)
    if points.size == 1:
        return [(points[0], points[0])]
    gaps = np.diff(points)
    typical = np.median(gaps) if gaps.size else 0.0
    cut = max(10.0 * typical, 1e-9)
    pieces = []
    start = points[0]
    prev = points[0]
    for value in points[1:]:
        if value - prev > cut:
            pieces.append((start, prev))
            start = value
        prev = value
    pieces.append((start, prev))
    # widen each piece by half the typical spacing so membership tests do not
    # miss mass between adjacent orbit samples
    pad = typical / 2.0
    return [(lo - pad, hi + pad) for lo, hi in pieces]


def check_measure_preservation(
    pmap: PiecewiseMap,
    measure: MeasureSpec,
    n_sets: int,
    n_samples: int,
    k: int,
    rng: np.random.Generator,
    orbit_points: int = 2048,
) -> MeasurePreservationReport:
    """Monte-Carlo check that forward reachable sets keep their measure.

    For ``n_sets`` random sub-intervals A, compares a sampled estimate of
    mu(A) against a sampled estimate of mu(S(A)(k)), where the reachable set
    is covered by intervals built from forward orbits with boundary
    branching.  The pass band per set is 3 combined binomial sigmas; scalar
    state spaces only.
    """
    report = MeasurePreservationReport()
    width = measure.hi - measure.lo
    for _ in range(n_sets):
        a, b = np.sort(rng.uniform(measure.lo, measure.hi, 2))
        if b - a < 0.05 * width:   # avoid degenerate slivers
            b = min(measure.hi, a + 0.05 * width)
        grid = np.linspace(a, b, orbit_points)
        image = _forward_image_points(pmap, grid, k)
        pieces = _intervals_from_points(image)

        draws = measure.sampler(rng, n_samples)
        in_set = (draws >= a) & (draws <= b)
        in_image = np.zeros(draws.size, dtype=bool)
        for lo, hi in pieces:
            in_image |= (draws >= lo) & (draws <= hi)

        mu_set = float(in_set.mean())
        mu_image = float(in_image.mean())
        if mu_set == 0.0:
            raise RuntimeError("sampler degeneracy: mu(A) estimated as 0")
        sig = math.sqrt(
            mu_set * (1 - mu_set) / n_samples + mu_image * (1 - mu_image) / n_samples
        )
        band = 3.0 * sig
        report.records.append(SetCheckRecord(
            set_lo=float(a), set_hi=float(b),
            mu_set=mu_set, mu_image=mu_image,
            band=band, passed=abs(mu_set - mu_image) <= band,
        ))
    return report


@dataclass
class MatchingRecord:
    point: tuple[float, ...]
    residual: float


@dataclass
class MatchingReport:
    records: list[MatchingRecord]
    tol: float

    @property
    def max_residual(self) -> float:
        return max(r.residual for r in self.records)

    @property
    def passed(self) -> bool:
        return all(r.residual <= self.tol for r in self.records)


def check_matching_condition(
    pmap: PiecewiseMap,
    alpha_minus: float,
    alpha_plus: float,
    boundary_points: Sequence[Point],
    tol: float,
) -> MatchingReport:
    """Boundary-sampling check of the piecewise-measure matching condition:
    alpha+ * grad h(x) . branch_plus(x) == alpha- * grad h(x) . branch_minus(x)
    at every supplied boundary point."""
    records = []
    for x in boundary_points:
        xv = np.atleast_1d(np.asarray(x, dtype=float))
        if not pmap.on_boundary(xv):
            raise ValueError(f"point {x!r} is not on the event boundary")
        grad = np.atleast_1d(np.asarray(
            pmap.event_grad(xv if xv.size > 1 else float(xv[0])), dtype=float))
        f_plus = pmap._eval(pmap.branch_plus, xv)
        f_minus = pmap._eval(pmap.branch_minus, xv)
        residual = abs(alpha_plus * float(grad @ f_plus)
                       - alpha_minus * float(grad @ f_minus))
        records.append(MatchingRecord(point=_as_key(xv), residual=residual))
    return MatchingReport(records=records, tol=tol)


@dataclass
class ContractionReport:
    ratio_max: float
    margin: float
    n_pairs: int

    @property
    def passed(self) -> bool:
        return self.ratio_max < 1.0 - self.margin


def check_average_contraction(
    maps: Sequence[Callable[[np.ndarray], np.ndarray]],
    probs: Callable[[float], np.ndarray],
    signals: Sequence[float],
    sample_pairs: int,
    box: tuple[np.ndarray, np.ndarray],
    rng: np.random.Generator,
    margin: float = 0.0,
) -> ContractionReport:
    """Estimate the worst expected one-step Lipschitz ratio of a random map
    family over sampled state pairs and the given signals.

    probs(signal) must sum to 1 (checked to 1e-12).  Coincident sample pairs
    are redrawn, never divided by.
    """
    lo = np.atleast_1d(np.asarray(box[0], dtype=float))
    hi = np.atleast_1d(np.asarray(box[1], dtype=float))
    weights = [np.asarray(probs(s), dtype=float) for s in signals]
    for s, w in zip(signals, weights):
        if len(w) != len(maps):
            raise ValueError("probs(signal) length must match the map family")
        if abs(float(w.sum()) - 1.0) > 1e-12:
            raise ValueError(f"probabilities at signal {s} sum to {w.sum()}")

    worst = 0.0
    drawn = 0
    while drawn < sample_pairs:
        x = rng.uniform(lo, hi)
        y = rng.uniform(lo, hi)
        if np.array_equal(x, y):
            continue
        drawn += 1
        dist = float(np.linalg.norm(x - y))
        ratios = np.array([
            float(np.linalg.norm(
                np.atleast_1d(np.asarray(f(x), dtype=float))
                - np.atleast_1d(np.asarray(f(y), dtype=float))
            )) / dist
            for f in maps
        ])
        for w in weights:
            worst = max(worst, float(w @ ratios))
    return ContractionReport(ratio_max=worst, margin=margin, n_pairs=sample_pairs)


@dataclass
class IssProbeReport:
    gaps: np.ndarray           # d(j) = |x_c^A(j) - x_c^B(j)|, j = 0..m
    rho: float | None          # fitted geometric rate
    verdict: str               # 'contractive' | 'non-contractive' | 'inconclusive'

    @property
    def contractive(self) -> bool:
        return self.verdict == "contractive"


def probe_incremental_iss(
    controller: ControllerState,
    input_seq: Sequence[float],
    xc_a: float,
    xc_b: float,
    tol: float = 1e-9,
) -> IssProbeReport:
    """Empirical incremental-stability probe for a controller instance.

    Runs two copies from different initial states on one shared input
    sequence (deadband disabled so every step updates) and classifies the
    state-gap trace: geometric decay with fitted rate < 1 is 'contractive',
    a gap pinned at d(0) is 'non-contractive'.
    """
    d0 = abs(xc_a - xc_b)
    if d0 == 0.0:
        raise ValueError("degenerate probe: initial states coincide")
    a = replace(controller, x_c=xc_a, deadband=0.0)
    b = replace(controller, x_c=xc_b, deadband=0.0)
    gaps = [d0]
    for e in input_seq:
        _, a = controller_step(a, float(e))
        _, b = controller_step(b, float(e))
        gaps.append(abs(a.x_c - b.x_c))
    gaps = np.asarray(gaps)
    m = len(gaps) - 1

    if np.max(np.abs(gaps - d0)) <= tol * d0:
        return IssProbeReport(gaps=gaps, rho=None, verdict="non-contractive")

    positive = gaps > 0
    if np.count_nonzero(positive) >= 2:
        js = np.nonzero(positive)[0]
        slope = np.polyfit(js, np.log(gaps[js]), 1)[0]
        rho = float(np.exp(slope))
    else:
        rho = 0.0
    if rho < 1.0 and gaps[m] <= d0 * rho ** m * (1.0 + max(tol, 1e-6)) + tol:
        return IssProbeReport(gaps=gaps, rho=rho, verdict="contractive")
    return IssProbeReport(gaps=gaps, rho=rho, verdict="inconclusive")


# ---------------------------------------------------------------------------
# preset registry: named maps and families used by scenario files and tests

def deadband_edge_map(delta: float) -> PiecewiseMap:
    """Right edge of the deadband map: 0 inside the band, identity outside;
    event boundary at x = delta."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return PiecewiseMap(
        branch_minus=lambda x: 0.0,
        branch_plus=lambda x: x,
        event_fn=lambda x: x - delta,
        event_grad=lambda x: 1.0,
    )


def affine_split_map(a_minus: float, b_minus: float,
                     a_plus: float, b_plus: float) -> PiecewiseMap:
    """Two affine branches a*x + b split at x = 0."""
    return PiecewiseMap(
        branch_minus=lambda x: a_minus * x + b_minus,
        branch_plus=lambda x: a_plus * x + b_plus,
        event_fn=lambda x: x,
        event_grad=lambda x: 1.0,
    )


def shift_map(c: float) -> PiecewiseMap:
    """x -> x + c (mod 1) on [0, 1), written piecewise with the wrap at
    x = 1 - c; preserves the uniform measure."""
    if not 0 < c < 1:
        raise ValueError("c must lie strictly inside (0, 1)")
    return PiecewiseMap(
        branch_minus=lambda x: x + c,
        branch_plus=lambda x: x + c - 1.0,
        event_fn=lambda x: x - (1.0 - c),
        event_grad=lambda x: 1.0,
    )


def collapse_map(target: float) -> PiecewiseMap:
    """Sends every state to one point; visibly destroys any diffuse measure."""
    return PiecewiseMap(
        branch_minus=lambda x: target,
        branch_plus=lambda x: target,
        event_fn=lambda x: x - target,
        event_grad=lambda x: 1.0,
    )


def binary_agent_family(
    n_agents: int, xi: float = 1.0, x01: float = 0.0, x02: float = 0.0
) -> tuple[list[Callable[[np.ndarray], np.ndarray]], Callable[[float], np.ndarray]]:
    """The binary-commitment transition family on {0,1}^n: each family member
    sends any current state to one fixed commitment pattern, so all maps are
    constant.  Returns (maps, probs) for the average-contraction checker.

    Agent i < n/2 commits with the rising logistic probability, the rest with
    the falling one; member probabilities are the independence products.
    """
    from .agents import AgentKind, AgentParams, commitment_probability

    if n_agents < 2 or n_agents % 2 != 0:
        raise ValueError("n_agents must be even and at least 2")
    if n_agents > 16:
        raise ValueError("family size 2**n explodes past n_agents = 16")
    half = n_agents // 2
    params = [
        AgentParams(kind=AgentKind.G1 if i < half else AgentKind.G2,
                    xi=xi, x0=x01 if i < half else x02)
        for i in range(n_agents)
    ]
    patterns = [
        np.array([(m >> i) & 1 for i in range(n_agents)], dtype=float)
        for m in range(2 ** n_agents)
    ]
    maps = [
        (lambda pattern: (lambda x: pattern))(pattern) for pattern in patterns
    ]

    def probs(pi: float) -> np.ndarray:
        on = np.array([commitment_probability(p, pi) for p in params])
        out = np.empty(len(patterns))
        for m, pattern in enumerate(patterns):
            out[m] = float(np.prod(np.where(pattern > 0, on, 1.0 - on)))
        return out

    return maps, probs
