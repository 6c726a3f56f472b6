"""Stochastic DER ensemble: logistic commitment probabilities and sampling.

Two response populations: G1 agents become more likely to commit as the
broadcast signal rises, G2 agents less likely.  Both probabilities are
bounded away from 0 and 1 for every signal value.  Agents draw their next
binary commitment independently given the signal, in ascending agent order
from a single per-run stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np


class AgentKind(Enum):
    G1 = "G1"   # commitment probability increases with the signal
    G2 = "G2"   # commitment probability decreases with the signal


@dataclass(frozen=True)
class AgentParams:
    kind: AgentKind
    xi: float = 1.0          # signal gain
    x0: float = 0.0          # logistic offset
    capacity: float = 1.0    # MW contributed when committed

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValueError("capacity must be positive")
        if not np.isfinite(self.xi):
            raise ValueError("xi must be finite")


# logistic argument clip; exp(60) is far past double saturation of the ratio
_Z_CLIP = 60.0


def _logistic(z: float | np.ndarray) -> float | np.ndarray:
    z = np.minimum(np.maximum(z, -_Z_CLIP), _Z_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def commitment_probability(params: AgentParams, pi: float) -> float:
    """Probability that the agent is committed at the next step.

    G1: 0.02 + 0.95 * logistic(xi*pi + x0), with limits 0.02 and 0.97.
    G2: 0.98 - 0.95 * logistic(xi*pi + x0), with limits 0.98 and 0.03.
    """
    s = _logistic(params.xi * pi + params.x0)
    if params.kind is AgentKind.G1:
        return float(0.02 + 0.95 * s)
    return float(0.98 - 0.95 * s)


class EnsembleState:
    """Per-agent binary commitments plus per-agent response parameters.

    Parameter arrays are cached once per parameter tuple so that stepping the
    ensemble inside a long simulation stays cheap.
    """

    __slots__ = ("commitments", "params", "_p_offset", "_p_scale", "_xi",
                 "_x0", "_capacity")

    def __init__(self, commitments: np.ndarray, params: tuple[AgentParams, ...]):
        commitments = np.asarray(commitments, dtype=bool)
        if len(commitments) != len(params):
            raise ValueError("commitments and params lengths differ")
        n = len(params)
        if n < 2 or n % 2 != 0:
            raise ValueError("ensemble size must be even and at least 2")
        self.commitments = commitments
        self.params = params
        # G1 probability is 0.02 + 0.95*s, G2 is 0.98 - 0.95*s: encode the
        # kind as an affine image of the shared logistic value s
        self._p_offset = np.array(
            [0.02 if p.kind is AgentKind.G1 else 0.98 for p in params])
        self._p_scale = np.array(
            [0.95 if p.kind is AgentKind.G1 else -0.95 for p in params])
        self._xi = np.array([p.xi for p in params])
        self._x0 = np.array([p.x0 for p in params])
        self._capacity = np.array([p.capacity for p in params])

    @property
    def n_agents(self) -> int:
        return len(self.params)

    def with_commitments(self, commitments: np.ndarray) -> "EnsembleState":
        new = object.__new__(EnsembleState)
        new.commitments = np.asarray(commitments, dtype=bool)
        new.params = self.params
        new._p_offset = self._p_offset
        new._p_scale = self._p_scale
        new._xi = self._xi
        new._x0 = self._x0
        new._capacity = self._capacity
        return new

    def probabilities(self, pi: float) -> np.ndarray:
        """Vectorized commitment probabilities for all agents at signal pi."""
        return _probabilities(self._p_offset, self._p_scale, self._xi, self._x0, pi)


def _probabilities(offset: np.ndarray, scale: np.ndarray, xi: np.ndarray,
                   x0: np.ndarray, pi: float) -> np.ndarray:
    s = _logistic(xi * pi + x0)
    return offset + scale * s


def draw_commitments(offset: np.ndarray, scale: np.ndarray, xi: np.ndarray,
                     x0: np.ndarray, pi: float,
                     rng: np.random.Generator) -> np.ndarray:
    """One sampling step on raw parameter arrays: one uniform per agent in
    ascending agent order, compared against the logistic probabilities.

    This is the single sampling primitive; :func:`sample_commitments` and the
    closed-loop engine both route through it so seeded streams agree.
    """
    return rng.random(len(offset)) < _probabilities(offset, scale, xi, x0, pi)


def sample_commitments(
    state: EnsembleState,
    pi: float,
    rng: np.random.Generator,
    prob_fn: Callable[[AgentParams, float], float] | None = None,
) -> EnsembleState:
    """Draw the next commitment state; one uniform per agent, ascending order.

    ``prob_fn`` overrides the logistic response per agent (test hook for
    degenerate samplers); the draw order and count are unchanged so streams
    stay aligned.
    """
    if prob_fn is None:
        return state.with_commitments(
            draw_commitments(state._p_offset, state._p_scale,
                             state._xi, state._x0, pi, rng)
        )
    probs = np.array([prob_fn(p, pi) for p in state.params])
    u = rng.random(state.n_agents)
    return state.with_commitments(u < probs)


def ensemble_output(state: EnsembleState) -> float:
    """Aggregate power of committed agents, in MW."""
    return float(state._capacity @ state.commitments)


def make_ensemble(n_agents: int, capacity: float = 1.0, xi: float = 1.0,
                  x01: float = 0.0, x02: float = 0.0) -> EnsembleState:
    """Standard split ensemble: first half G1 starting OFF, second half G2
    starting ON (so the initial aggregate is half the installed capacity)."""
    if n_agents < 2 or n_agents % 2 != 0:
        raise ValueError("n_agents must be even and at least 2")
    half = n_agents // 2
    params = tuple(
        AgentParams(kind=AgentKind.G1, xi=xi, x0=x01, capacity=capacity)
        for _ in range(half)
    ) + tuple(
        AgentParams(kind=AgentKind.G2, xi=xi, x0=x02, capacity=capacity)
        for _ in range(half)
    )
    commitments = np.zeros(n_agents, dtype=bool)
    commitments[half:] = True
    return EnsembleState(commitments, params)
