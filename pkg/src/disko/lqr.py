"""Discrete-time LQR on the lifted Koopman state."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from .basis import BasisDictionary
from .edmd import KoopmanModel, NumericalError, spectral_radius

log = logging.getLogger(__name__)


class NotStabilizableError(NumericalError):
    """Riccati iteration did not converge with these weights."""


@dataclass(frozen=True)
class LQRWeights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        if not np.allclose(Q, Q.T, atol=1e-12) or not np.allclose(R, R.T, atol=1e-12):
            raise ValueError("Q and R must be symmetric")
        if Q.size and np.linalg.eigvalsh(Q).min() < -1e-10:
            raise ValueError("Q must be positive semidefinite")
        if R.size and np.linalg.eigvalsh(R).min() < 1e-12:
            raise ValueError("R must be positive definite")

    @classmethod
    def lifted(cls, q_state: Sequence[float], r: Sequence[float],
               n_state_terms: int) -> "LQRWeights":
        """Diagonal state weights embedded in the leading block of ``Q``.

        The first observables are the state coordinates, so penalizing them
        reproduces the state-space cost; the remaining entries are zero.
        """
        q = np.asarray(q_state, dtype=float).ravel()
        if q.size > n_state_terms:
            raise ValueError("more state weights than observables")
        Q = np.zeros((n_state_terms, n_state_terms))
        Q[np.arange(q.size), np.arange(q.size)] = q
        return cls(Q, np.diag(np.asarray(r, dtype=float).ravel()))


@dataclass(frozen=True)
class FeedbackLaw:
    """``u = -K (Psi(s) - Psi(s_des))``; ``K`` may be a per-step sequence."""

    K: Union[np.ndarray, tuple]
    psi_des: np.ndarray

    @property
    def is_sequence(self) -> bool:
        return isinstance(self.K, tuple)

    def gain(self, k: int = 0) -> np.ndarray:
        if self.is_sequence:
            return self.K[min(k, len(self.K) - 1)]
        return self.K

    def control(self, psi, k: int = 0) -> np.ndarray:
        return -self.gain(k) @ (np.asarray(psi, dtype=float) - self.psi_des)


def _check(A, B, weights: LQRWeights):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if weights.Q.shape != A.shape:
        raise ValueError(f"Q is {weights.Q.shape}, expected {A.shape}")
    if weights.R.shape != (B.shape[1], B.shape[1]):
        raise ValueError(f"R is {weights.R.shape}, expected {(B.shape[1],) * 2}")
    return A, B


def _gain(A, B, R, P):
    if B.shape[1] == 0:
        return np.zeros((0, A.shape[0]))
    BtP = B.T @ P
    return np.linalg.solve(R + BtP @ B, BtP @ A)


def _riccati_step(A, B, Q, R, P):
    K = _gain(A, B, R, P)
    Pn = Q + A.T @ P @ (A - B @ K)
    return 0.5 * (Pn + Pn.T), K


def riccati_residual(A, B, weights: LQRWeights, P) -> float:
    """Relative residual of ``P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA``."""
    Pn, _ = _riccati_step(A, B, weights.Q, weights.R, P)
    return float(np.linalg.norm(Pn - P) / max(np.linalg.norm(P), 1e-300))


def solve_infinite_lqr(A, B, weights: LQRWeights, tol: float = 1e-10,
                       max_iter: int = 10000, psi_des=None):
    """Infinite-horizon gain by fixed-point iteration of the Riccati map.

    Returns
    -------
    FeedbackLaw, ndarray
        The law (``K = (R + B'PB)^-1 B'PA``) and the cost matrix ``P``.

    Raises
    ------
    NotStabilizableError
        If the iteration diverges or does not settle within ``max_iter``.
    """
    A, B = _check(A, B, weights)
    Q, R = weights.Q, weights.R
    P = Q.copy()
    for it in range(max_iter):
        Pn, _ = _riccati_step(A, B, Q, R, P)
        if not np.all(np.isfinite(Pn)):
            raise NotStabilizableError("Riccati iteration diverged")
        diff = np.linalg.norm(Pn - P)
        P = Pn
        if diff <= tol * max(np.linalg.norm(P), np.finfo(float).tiny):
            break
    else:
        raise NotStabilizableError(
            f"Riccati iteration did not converge in {max_iter} steps")
    K = _gain(A, B, R, P)
    rho = spectral_radius(A - B @ K)
    if rho >= 1:
        raise NotStabilizableError(f"closed loop spectral radius {rho:.4g} >= 1")
    log.debug("Riccati converged after %d iterations, closed loop rho %.4g",
              it + 1, rho)
    des = np.zeros(A.shape[0]) if psi_des is None else np.asarray(psi_des, float)
    return FeedbackLaw(K, des), P


def solve_finite_lqr(A, B, weights: LQRWeights, n: int, terminal=None,
                     psi_des=None) -> FeedbackLaw:
    """Time-varying gains ``K_0..K_{n-1}`` by backward Riccati recursion.

    ``terminal`` defaults to zero.
    """
    if n < 1:
        raise ValueError("horizon must be at least 1")
    A, B = _check(A, B, weights)
    P = np.zeros_like(A) if terminal is None else np.atleast_2d(terminal).astype(float)
    if P.shape != A.shape:
        raise ValueError("terminal weight has wrong shape")
    gains: List[np.ndarray] = []
    for _ in range(n):
        P, K = _riccati_step(A, B, weights.Q, weights.R, P)
        gains.append(K)
    gains.reverse()
    des = np.zeros(A.shape[0]) if psi_des is None else np.asarray(psi_des, float)
    return FeedbackLaw(tuple(gains), des)


def closed_loop_step(model: KoopmanModel, law: FeedbackLaw, s,
                     dictionary: Optional[BasisDictionary] = None, k: int = 0):
    """Control for state ``s`` and the model's one-step prediction.

    Returns ``(u, psi_next)`` where ``u`` is the raw input. The law acts on
    the lifted input; with the default identity input lifting they coincide.
    """
    d = dictionary or model.dictionary
    psi = d.evaluate_state(np.asarray(s, dtype=float)) if d is not None \
        else np.asarray(s, dtype=float)
    u = law.control(psi, k)
    return u, model.step(psi, u)
