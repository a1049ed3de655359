"""Wing-rock roll dynamics with a fixed-gain PD controller.

    x1' = x2
    x2' = Delta(x) + L * delta_a,     Delta(x) = phi(x)' theta(t),  L = 1

with phi(x) = [1, x1, x2, |x1| x2, |x2| x1, x1^3]. The aileron command is
delta_a = kp (r - x1) - kd x2, held constant over each integration step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

N_PARAMS = 6
AILERON_EFFECTIVENESS = 1.0

THETA_NOMINAL = (0.8, 0.2314, 0.6918, -0.6245, 0.0095, 0.0214)
THETA_SHIFTED = (0.88, 0.2198, 0.6295, 1.1856, 0.0114, 0.0208)

# segment boundaries are compared with this slack so that k * dt lands on them
_TIME_EPS = 1e-9


class PlantDivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class PlantState:
    x1: float
    x2: float
    t: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


@dataclass(frozen=True)
class SquareWave:
    """offset + amplitude for the first half of each period, offset - amplitude
    for the second; settles to ``offset`` from ``active_until`` onwards."""

    amplitude: float = 0.5
    period: float = 10.0
    active_until: float = math.inf
    offset: float = 0.0

    def __call__(self, t: float) -> float:
        if t >= self.active_until - _TIME_EPS:
            return self.offset
        phase = math.fmod(t + _TIME_EPS, self.period)
        return self.offset + (self.amplitude if phase < 0.5 * self.period else -self.amplitude)


@dataclass(frozen=True)
class ControllerGains:
    kp: float = 1.5
    kd: float = 1.3
    reference: SquareWave = field(default_factory=SquareWave)


@dataclass
class PlantSchedule:
    theta_segments: list[tuple[float, np.ndarray]] = field(
        default_factory=lambda: [(0.0, np.array(THETA_NOMINAL))]
    )
    noise_start: float = math.inf
    noise_variance: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        self.theta_segments = [(float(t0), np.asarray(th, dtype=float)) for t0, th in self.theta_segments]
        if not self.theta_segments:
            raise ValueError("schedule needs at least one parameter segment")
        starts = [t0 for t0, _ in self.theta_segments]
        if starts[0] != 0.0:
            raise ValueError("first parameter segment must start at t = 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment start times must be strictly increasing")
        if self.noise_variance < 0.0:
            raise ValueError("noise variance must be non-negative")

    def theta_at(self, t: float) -> np.ndarray:
        current = self.theta_segments[0][1]
        for start, theta in self.theta_segments[1:]:
            if t >= start - _TIME_EPS:
                current = theta
            else:
                break
        return current

    def noisy_at(self, t: float) -> bool:
        return self.noise_variance > 0.0 and t >= self.noise_start - _TIME_EPS

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def _xy(x) -> tuple[float, float]:
    if isinstance(x, PlantState):
        return x.x1, x.x2
    x1, x2 = x
    return float(x1), float(x2)


def regressor(x) -> np.ndarray:
    x1, x2 = _xy(x)
    return np.array([1.0, x1, x2, abs(x1) * x2, abs(x2) * x1, x1**3])


def true_uncertainty(x, theta: Sequence[float]) -> float:
    return float(regressor(x) @ np.asarray(theta, dtype=float))


def aileron(x, r: float, gains: ControllerGains) -> float:
    x1, x2 = _xy(x)
    return gains.kp * (r - x1) - gains.kd * x2


def _rhs(x1: float, x2: float, theta: np.ndarray, delta_a: float) -> tuple[float, float]:
    delta = (
        theta[0]
        + theta[1] * x1
        + theta[2] * x2
        + theta[3] * abs(x1) * x2
        + theta[4] * abs(x2) * x1
        + theta[5] * x1 * x1 * x1
    )
    return x2, delta + AILERON_EFFECTIVENESS * delta_a


def integrate_step(x: PlantState, theta, delta_a: float, dt: float) -> PlantState:
    """Classical RK4 step with theta and delta_a held over [t, t + dt]."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    th = np.asarray(theta, dtype=float)
    x1, x2 = x.x1, x.x2
    k1a, k1b = _rhs(x1, x2, th, delta_a)
    k2a, k2b = _rhs(x1 + 0.5 * dt * k1a, x2 + 0.5 * dt * k1b, th, delta_a)
    k3a, k3b = _rhs(x1 + 0.5 * dt * k2a, x2 + 0.5 * dt * k2b, th, delta_a)
    k4a, k4b = _rhs(x1 + dt * k3a, x2 + dt * k3b, th, delta_a)
    n1 = x1 + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
    n2 = x2 + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
    if not (math.isfinite(n1) and math.isfinite(n2)):
        raise PlantDivergenceError(f"plant state diverged at t = {x.t + dt:.4f}")
    return PlantState(n1, n2, x.t + dt)


def measure(x, theta, t: float, sched: PlantSchedule, rng: np.random.Generator) -> float:
    """y = Delta(x) plus N(0, variance) noise once the noise window has opened.

    The generator is only drawn from inside the noise window, so the noise
    sequence depends on the seed alone.
    """
    y = true_uncertainty(x, theta)
    if sched.noisy_at(t):
        y += float(rng.normal(0.0, math.sqrt(sched.noise_variance)))
    return y
