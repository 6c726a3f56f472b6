"""Long-run statistics over closed-loop runs: predictability and fairness
averages, the squared 2-Wasserstein quantile integral between empirical
distributions, and mixing-time estimation as a function of deadband.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .loop import RunSet, SimConfig, run_ensemble_experiment


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Sorted sample values of a scalar observable across repetitions."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("need a 1-d sample with at least 2 values")
        object.__setattr__(self, "values", np.sort(values))

    @property
    def count(self) -> int:
        return int(self.values.size)


def long_run_average(series: Sequence[float]) -> float:
    """Mean over the full horizon, (1/(k+1)) * sum of series(0..k)."""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("series is empty")
    return float(series.mean())


def running_average(series: Sequence[float]) -> np.ndarray:
    """Trace of partial means; the final entry equals long_run_average."""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("series is empty")
    return np.cumsum(series) / np.arange(1, series.size + 1)


def fairness_gap(per_agent_averages: Mapping[str, Sequence[float]]) -> float:
    """Largest within-group spread of long-run averages.

    Groups hold parameter-identical agents (same kind), whose limits should
    coincide; agents of different kinds are not comparable and live in
    different groups.
    """
    worst = 0.0
    for group, values in per_agent_averages.items():
        values = np.asarray(values, dtype=float)
        if values.size < 2:
            raise ValueError(f"group {group!r} needs at least 2 agents")
        worst = max(worst, float(values.max() - values.min()))
    return worst


def wasserstein2_sq(a: EmpiricalDistribution, b: EmpiricalDistribution) -> float:
    """Squared quantile-integral distance between two empirical distributions.

    Computes the integral over q in [0, 1] of |F_a^{-1}(q) - F_b^{-1}(q)|^2
    exactly.  With equal counts n this reduces to the mean of squared
    differences of sorted samples; unequal counts use the piecewise-constant
    quantile functions directly.
    """
    av, bv = a.values, b.values
    n, m = a.count, b.count
    if n == m:
        return float(np.mean((av - bv) ** 2))
    # merge the quantile breakpoints i/n and j/m; both inverses are constant
    # on each merged sub-interval
    cuts = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    widths = np.diff(np.concatenate([[0.0], cuts]))
    mids = cuts - widths / 2
    ia = np.minimum((mids * n).astype(int), n - 1)
    ib = np.minimum((mids * m).astype(int), m - 1)
    return float(np.sum(widths * (av[ia] - bv[ib]) ** 2))


@dataclass
class MixingReport:
    deadband_fraction: float
    mixing_time: int | None            # step index, or None when never mixed
    delta_ref: dict[str, float]        # pair label -> W at k=1
    traces: dict[str, np.ndarray]      # pair label -> W per step
    threshold_fraction: float
    horizon: int
    degenerate_pairs: tuple[str, ...] = ()

    @property
    def mixed(self) -> bool:
        return self.mixing_time is not None

    @property
    def delta_ref_value(self) -> float:
        """Scalar delta for reporting: the single pair's value, else the min."""
        return min(self.delta_ref.values())


def _label_samples(runset: RunSet) -> tuple[dict[str, np.ndarray], int]:
    """x_c matrices (reps, steps) per label, dropping repetitions in which any
    label's run failed so sample counts stay equal."""
    labels = runset.labels
    reps = runset.config.repetitions
    good = [
        rep for rep in range(reps)
        if all(runset.trajectories[(rep, lab)].valid for lab in labels)
    ]
    if len(good) < 2:
        raise ValueError("need at least 2 valid repetitions per label")
    steps = min(
        len(runset.trajectories[(rep, lab)]) for rep in good for lab in labels
    )
    out = {
        lab: np.stack([runset.trajectories[(rep, lab)].x_c[:steps] for rep in good])
        for lab in labels
    }
    return out, steps


def mixing_time(runset: RunSet, threshold_fraction: float = 0.01) -> MixingReport:
    """Smallest step k at which every pair of initial-state labels has
    W(x_c distributions at k) <= threshold_fraction * Delta, where Delta is
    that pair's W at k = 1.

    Distributions are empirical across repetitions at fixed k.  Pairs whose
    Delta is zero are flagged as degenerate; for them the criterion
    degenerates to requiring W = 0, which is not divided by.
    """
    if len(runset.labels) < 2:
        raise ValueError("need at least 2 initial-state labels")
    samples, steps = _label_samples(runset)
    sorted_by_label = {lab: np.sort(mat, axis=0) for lab, mat in samples.items()}

    traces: dict[str, np.ndarray] = {}
    delta_ref: dict[str, float] = {}
    degenerate = []
    labels = runset.labels
    ok = np.ones(steps, dtype=bool)
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            pair = f"{labels[i]}|{labels[j]}"
            w = np.mean(
                (sorted_by_label[labels[i]] - sorted_by_label[labels[j]]) ** 2, axis=0
            )
            traces[pair] = w
            delta = float(w[0])
            delta_ref[pair] = delta
            if delta == 0.0:
                degenerate.append(pair)
            ok &= w <= threshold_fraction * delta

    hits = np.nonzero(ok)[0]
    mix = int(hits[0]) + 1 if hits.size else None
    return MixingReport(
        deadband_fraction=runset.config.deadband_fraction,
        mixing_time=mix,
        delta_ref=delta_ref,
        traces=traces,
        threshold_fraction=threshold_fraction,
        horizon=steps,
        degenerate_pairs=tuple(degenerate),
    )


def mixing_sweep(
    cfg: SimConfig,
    deadband_fractions: Sequence[float],
    threshold_fraction: float = 0.01,
) -> list[MixingReport]:
    """One mixing report per deadband fraction.

    Every fraction reuses the same master seed, hence the same per-repetition
    stream schedule; the sweep isolates the deadband's effect from sampling
    variation.
    """
    reports = []
    for fraction in deadband_fractions:
        runset = run_ensemble_experiment(replace(cfg, deadband_fraction=fraction))
        reports.append(mixing_time(runset, threshold_fraction=threshold_fraction))
    return reports


def write_mixing_csv(reports: Sequence[MixingReport], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("deadband_fraction,mixing_time,delta_ref\n")
        for rep in reports:
            mix = rep.mixing_time if rep.mixing_time is not None else "not_mixed"
            fh.write(f"{repr(float(rep.deadband_fraction))},{mix},"
                     f"{repr(float(rep.delta_ref_value))}\n")


def write_wasserstein_trace_csv(reports: Sequence[MixingReport], path) -> None:
    """Rows k,pair,W; with several reports the pair carries the deadband
    fraction prefix so a sweep stays one flat file."""
    with open(path, "w", newline="") as fh:
        fh.write("k,pair,W\n")
        for rep in reports:
            for pair, trace in sorted(rep.traces.items()):
                tag = (pair if len(reports) == 1
                       else f"{float(rep.deadband_fraction)}:{pair}")
                for k, w in enumerate(trace, start=1):
                    fh.write(f"{k},{tag},{repr(float(w))}\n")
