"""Filter and controller step functions, plus the standalone deadband map.

The filter averages the last two aggregate outputs and adds the network
losses.  The controller is a discrete PI regulator or its lag approximant
(integrator leak 0.99); while the error is inside the deadband the emitted
signal and the internal state are both frozen.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum


class ControllerKind(Enum):
    PI = "pi"
    LAG = "lag"


LEAK = {ControllerKind.PI: 1.0, ControllerKind.LAG: 0.99}


@dataclass(frozen=True)
class FilterState:
    prev_p: float            # the p(k-1) memory cell, MW


@dataclass(frozen=True)
class ControllerState:
    kind: ControllerKind
    kp: float
    ki: float
    leak: float
    x_c: float = 0.0
    last_pi: float = 0.0
    deadband: float = 0.0    # MW

    def __post_init__(self):
        if self.leak != LEAK[self.kind]:
            raise ValueError(
                f"{self.kind.value} controller requires leak {LEAK[self.kind]}, "
                f"got {self.leak}"
            )
        if self.deadband < 0:
            raise ValueError("deadband must be nonnegative")


def make_controller(kind: ControllerKind, kp: float, ki: float,
                    deadband: float = 0.0, x_c: float = 0.0,
                    last_pi: float = 0.0) -> ControllerState:
    return ControllerState(kind=kind, kp=kp, ki=ki, leak=LEAK[kind],
                           x_c=x_c, last_pi=last_pi, deadband=deadband)


def filter_step(fs: FilterState, p: float, losses: float) -> tuple[float, FilterState]:
    """Moving average of the current and previous aggregate plus losses."""
    p_hat = 0.5 * (p + fs.prev_p) + losses
    return p_hat, FilterState(prev_p=p)


def error(r: float, p_hat: float) -> float:
    return r - p_hat


def controller_step(cs: ControllerState, e: float) -> tuple[float, ControllerState]:
    """One controller update.

    Outside the deadband (|e| >= delta) the integrator advances,
    x_c <- leak*x_c + e, and the signal is kp*e + ki*x_c_new.  Inside it,
    both the signal and the integrator are frozen bit-exactly.
    """
    if abs(e) >= cs.deadband:
        x_new = cs.leak * cs.x_c + e
        pi = cs.kp * e + cs.ki * x_new
        return pi, replace(cs, x_c=x_new, last_pi=pi)
    return cs.last_pi, replace(cs, last_pi=cs.last_pi)


def deadband_phi(x: float, delta: float) -> float:
    """Deadband map: passes x through when |x| >= delta, else 0."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    return x if abs(x) >= delta else 0.0
