"""Reference plants and data generators."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PendulumParams:
    """``d/dt (theta, omega) = (omega, g sin(theta) + beta omega + u)``.

    With this sign convention ``theta = 0`` is the upright (unstable)
    equilibrium and ``theta = pi`` the hanging one; ``beta < 0`` dissipates
    energy.
    """

    g: float = 9.81
    beta: float = 0.0
    dt: float = 0.02

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def pendulum_derivative(params: PendulumParams, s, u=0.0) -> np.ndarray:
    """Vectorized over trailing axes: ``s`` may be (2,) or (2, K)."""
    s = np.asarray(s, dtype=float)
    th, om = s[0], s[1]
    return np.stack([om, params.g * np.sin(th) + params.beta * om + u])


def rk4_step(f: Callable, s, dt: float):
    k1 = f(s)
    k2 = f(s + 0.5 * dt * k1)
    k3 = f(s + 0.5 * dt * k2)
    k4 = f(s + dt * k3)
    return s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class IntegrationResult:
    states: np.ndarray  # (steps+1, ...) or shorter if truncated
    finite: bool


def integrate_rk4(derivative: Callable, s0, dt: float, steps: int
                  ) -> IntegrationResult:
    """Classical fourth-order Runge-Kutta.

    ``derivative(s)`` may act on a batch; the result stacks states along a
    new leading axis. Integration stops at the first non-finite state, which
    is excluded, and ``finite`` is set to False.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = np.asarray(s0, dtype=float)
    out = np.empty((steps + 1,) + s.shape)
    out[0] = s
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            s = rk4_step(derivative, s, dt)
            if not np.all(np.isfinite(s)):
                log.warning("non-finite state after %d steps; truncating", k + 1)
                return IntegrationResult(out[:k + 1], False)
            out[k + 1] = s
    return IntegrationResult(out, True)


def simulate_pendulum(params: PendulumParams, s0, steps: int, dt=None, u=0.0):
    """Constant-input pendulum trajectory; returns an (steps+1, 2[, K]) array."""
    dt = params.dt if dt is None else dt
    res = integrate_rk4(lambda s: pendulum_derivative(params, s, u), s0, dt, steps)
    return res.states


def sample_uniform(rng: np.random.Generator, ranges: Sequence[Tuple[float, float]],
                   n: int) -> np.ndarray:
    """``n`` samples, one column per ``(low, high)`` range; shape (n, len(ranges))."""
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)
    return lo + (hi - lo) * rng.random((n, len(ranges)))


def sample_training_set(params: PendulumParams, n: int,
                        ranges: Sequence[Tuple[float, float]] = ((-np.pi, np.pi), (-1.0, 1.0)),
                        dt: Optional[float] = None, seed: int = 0,
                        input_range: Optional[Tuple[float, float]] = None):
    """One-step pairs from uniformly sampled initial conditions.

    Returns ``(pre, post, u)`` with shapes (n, 2), (n, 2) and (n, 1) or None.
    Inputs, when requested, are held constant over the step.
    """
    dt = params.dt if dt is None else dt
    rng = np.random.default_rng(seed)
    pre = sample_uniform(rng, ranges, n)
    u = None
    if input_range is not None:
        u = sample_uniform(rng, [input_range], n)
    f = lambda s: pendulum_derivative(params, s, 0.0 if u is None else u[:, 0])
    post = rk4_step(f, pre.T, dt).T
    return pre, post, u


@dataclass(frozen=True)
class RandomDataSpec:
    W: int
    P: int
    seed: int = 0
    x_range: Tuple[float, float] = (0.0, 10.0)
    y_range: Tuple[float, float] = (0.0, 20.0)

    def __post_init__(self):
        if self.W < 1 or self.P < 1:
            raise ValueError("W and P must be positive")


def random_snapshots(spec: RandomDataSpec):
    """Seeded uniform ``X`` and ``Y`` of shape (W, P)."""
    rng = np.random.default_rng(spec.seed)
    X = rng.uniform(*spec.x_range, size=(spec.W, spec.P))
    Y = rng.uniform(*spec.y_range, size=(spec.W, spec.P))
    return X, Y
