"""Stable least-squares fitting through the factorization A = S^-1 O C S.

A square matrix has spectral radius at most ``rho`` exactly when it can be
written as ``S^-1 O C S`` with ``S`` invertible, ``O`` orthogonal and ``C``
symmetric positive semidefinite with eigenvalues in ``[0, rho]``. The
objective ``0.5 ||Y - A X - B U||_F^2`` is minimized over ``(S, O, C, B)``
by projected gradient descent; every iterate is feasible, so the returned
``A`` is stable no matter when the iteration stops.

Only the accumulators ``G, Amat, X_U, Y_U, U_U`` enter the gradients, with
``V = Amat - A G - B X_U^T``::

    grad_S = S^-T (V A^T - A^T V)
    grad_O = -S^-T V S^T C^T
    grad_C = -O^T S^-T V S^T
    grad_B = -Y_U + A X_U + B U_U
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import List, Optional, TextIO, Tuple

import numpy as np
from scipy import linalg

from .basis import BasisDictionary
from .edmd import (KoopmanModel, NumericalError, fit_least_squares, pinv,
                   reconstruction_error, spectral_radius)
from .snapshots import AccumulatorSet

log = logging.getLogger(__name__)


@dataclass
class SOCConfig:
    """Optimizer settings.

    ``rho`` bounds the spectral radius of the fitted ``A``. ``restarts`` is
    the total number of runs; runs after the first start from the initial
    factors perturbed by seeded Gaussian noise of size ``restart_scale``.
    ``max_seconds`` optionally caps the wall time of each run.
    """

    rho: float = 1.0
    max_iter: int = 20000
    step_init: float = 1e-3
    max_halvings: int = 50
    rel_tol: float = 1e-9
    restarts: int = 1
    seed: int = 0
    init: str = "lyapunov"
    init_margin: float = 0.99
    momentum: bool = True
    patience: int = 10
    max_cond: float = 1e12
    min_step: float = 1e-12
    restart_scale: float = 1e-2
    max_seconds: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        for name in ("max_iter", "max_halvings", "restarts", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.step_init <= 0 or self.rel_tol < 0:
            raise ValueError("step_init must be positive and rel_tol >= 0")
        if self.init not in ("lyapunov", "polar"):
            raise ValueError(f"unknown init {self.init!r}")
        if not 0 < self.init_margin < 1:
            raise ValueError("init_margin must lie in (0, 1)")


@dataclass
class SOCState:
    S: np.ndarray
    O: np.ndarray
    C: np.ndarray
    B: np.ndarray
    objective: float = math.nan
    iter: int = 0
    step: float = 0.0
    history: List[float] = field(default_factory=list)
    reason: str = ""
    momentum_restarts: int = 0
    initial_objective: float = math.nan

    @property
    def A(self) -> np.ndarray:
        return compose(self.S, self.O, self.C)


def compose(S, O, C) -> np.ndarray:
    """``S^-1 O C S``."""
    return np.linalg.solve(S, O @ C @ S)


def project_orthogonal(O) -> np.ndarray:
    """Nearest orthogonal matrix: the polar factor ``U V^T``."""
    try:
        U, _, Vt = np.linalg.svd(O)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed: {exc}") from None
    return U @ Vt


def project_contraction(C, rho: float = 1.0) -> np.ndarray:
    """Symmetrize and clamp eigenvalues to ``[0, rho]``."""
    Cs = 0.5 * (C + C.T)
    try:
        w, V = np.linalg.eigh(Cs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigh failed: {exc}") from None
    out = (V * np.clip(w, 0.0, rho)) @ V.T
    return 0.5 * (out + out.T)


def project_factors(O, C, rho: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    return project_orthogonal(O), project_contraction(C, rho)


def _objective(S, O, C, B, acc: AccumulatorSet) -> float:
    return reconstruction_error(compose(S, O, C), B, acc)


def _trial_objective(S, O, C, B, acc: AccumulatorSet, max_cond: float):
    """Objective at a trial point, or None if ``cond(S)`` exceeds ``max_cond``.

    One SVD of ``S`` serves both the conditioning guard and the inverse.
    """
    U, sv, Vt = np.linalg.svd(S)
    if sv[-1] <= 0 or sv[0] > max_cond * sv[-1]:
        return None
    A = ((Vt.T / sv) @ U.T) @ (O @ C @ S)
    AX = A @ acc.X_U
    val = (acc.trYY - 2 * np.vdot(A, acc.Amat) - 2 * np.vdot(B, acc.Y_U)
           + np.vdot(A @ acc.G, A) + 2 * np.vdot(AX, B)
           + np.vdot(B @ acc.U_U, B))
    return 0.5 * float(val)


def _gradients(S, O, C, B, acc: AccumulatorSet):
    try:
        Si = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        raise NumericalError("S is singular") from None
    A = Si @ O @ C @ S
    V = acc.Amat - A @ acc.G - B @ acc.X_U.T
    SiT = Si.T
    gS = SiT @ (V @ A.T - A.T @ V)
    gO = -SiT @ V @ S.T @ C.T
    gC = -O.T @ SiT @ V @ S.T
    gB = -acc.Y_U + A @ acc.X_U + B @ acc.U_U
    return gS, gO, gC, gB


def soc_gradients(state: SOCState, acc: AccumulatorSet):
    """Gradients of the objective with respect to ``(S, O, C, B)``."""
    return _gradients(state.S, state.O, state.C, state.B, acc)


def _best_B(A, acc: AccumulatorSet) -> np.ndarray:
    if acc.n_input_terms == 0:
        return np.zeros((A.shape[0], 0))
    return (acc.Y_U - A @ acc.X_U) @ pinv(acc.U_U)


def _sym_sqrt(P) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _normalize(S) -> Tuple[np.ndarray, float]:
    c = math.sqrt(S.shape[0]) / np.linalg.norm(S)
    return S * c, c


def initial_factors(A_target, config: SOCConfig):
    """Feasible factors whose product is close to ``A_target``.

    ``lyapunov``: shrink ``A_target`` into the open ``rho``-disc if needed,
    then take ``S = P^(1/2)`` with ``P`` the discrete Lyapunov solution for
    ``A/rho``, which makes ``S A S^-1`` a strict ``rho``-contraction whose
    polar factors reproduce ``A`` exactly. ``polar``: ``S = I`` and the polar
    factors of ``A_target`` with ``C`` clamped.
    """
    A_target = np.atleast_2d(A_target)
    n = A_target.shape[0]
    rho = config.rho
    if config.init == "lyapunov":
        r = spectral_radius(A_target)
        A0 = A_target
        if r >= rho * (1 - 1e-6):
            A0 = A_target * (config.init_margin * rho / r)
        P = linalg.solve_discrete_lyapunov((A0 / rho).T, np.eye(n))
        S = _sym_sqrt(P)
        if np.linalg.cond(S) <= config.max_cond:
            S, _ = _normalize(S)
            M = S @ A0 @ np.linalg.inv(S)
            U, sv, Vt = np.linalg.svd(M)
            O = U @ Vt
            C = project_contraction((Vt.T * sv) @ Vt, rho)
            return S, O, C
        log.info("Lyapunov initialization ill-conditioned; using polar")
    U, sv, Vt = np.linalg.svd(A_target)
    return np.eye(n), U @ Vt, project_contraction((Vt.T * sv) @ Vt, rho)


def _perturb(S, O, C, rng, scale, rho):
    n = S.shape[0]
    S2 = S + scale * rng.standard_normal((n, n)) * np.linalg.norm(S) / math.sqrt(n)
    O2 = project_orthogonal(O + scale * rng.standard_normal((n, n)))
    C2 = project_contraction(C + scale * rng.standard_normal((n, n)), rho)
    return S2, O2, C2


def _descend(acc, S, O, C, B, config: SOCConfig, diagnostics=None) -> SOCState:
    rho = config.rho
    S, _ = _normalize(S)
    f = _objective(S, O, C, B, acc)
    state = SOCState(S, O, C, B, f, 0, config.step_init, [f],
                     initial_objective=f)
    Sp, Op, Cp, Bp = S, O, C, B
    step = config.step_init
    alpha, fresh, stall = 0.5, True, 0
    reason = "max_iter"
    it = 0
    t0 = time.perf_counter()
    for it in range(1, config.max_iter + 1):
        if config.max_seconds is not None and \
                time.perf_counter() - t0 > config.max_seconds:
            reason = "timeout"
            break
        if f <= 0.0:
            reason = "zero_objective"
            break
        if fresh or not config.momentum:
            beta, alpha = 0.0, 0.5
        else:
            a2 = alpha * alpha
            new = 0.5 * (math.sqrt(a2 * a2 + 4 * a2) - a2)
            beta = alpha * (1 - alpha) / (a2 + new)
            alpha = new
        YS = S + beta * (S - Sp)
        YO = O + beta * (O - Op)
        YC = C + beta * (C - Cp)
        YB = B + beta * (B - Bp)
        try:
            gS, gO, gC, gB = _gradients(YS, YO, YC, YB, acc)
        except NumericalError:
            if beta == 0.0:
                raise
            fresh = True
            continue
        step_before = step
        accepted = False
        for _ in range(config.max_halvings):
            if step < config.min_step:
                break
            S2 = YS - step * gS
            O2, C2 = project_factors(YO - step * gO, YC - step * gC, rho)
            B2 = YB - step * gB
            f2 = _trial_objective(S2, O2, C2, B2, acc, config.max_cond)
            if f2 is not None and f2 < f:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if beta > 0.0:
                # momentum overshot: retry from the current iterate
                fresh = True
                step = step_before
                state.momentum_restarts += 1
                continue
            reason = "step_underflow" if step < config.min_step else "no_descent"
            break
        fresh = False
        rel = (f - f2) / max(abs(f), np.finfo(float).tiny)
        S2, c = _normalize(S2)
        Sp, Op, Cp, Bp = S * c, O, C, B
        S, O, C, B, f = S2, O2, C2, B2, f2
        state.history.append(f)
        if diagnostics is not None:
            diagnostics.writerow([it, repr(f), repr(step),
                                  repr(spectral_radius(compose(S, O, C)))])
        step *= 2.0
        stall = stall + 1 if rel < config.rel_tol else 0
        if stall >= config.patience:
            reason = "rel_tol"
            break
    state.S, state.O, state.C, state.B = S, O, C, B
    state.objective, state.iter, state.step, state.reason = f, it, step, reason
    return state


def fit_stable(acc: AccumulatorSet, config: Optional[SOCConfig] = None,
               init: Optional[KoopmanModel] = None, dt: Optional[float] = None,
               dictionary: Optional[BasisDictionary] = None,
               diagnostics: Optional[TextIO] = None):
    """Fit ``(A, B)`` with ``spectral_radius(A) <= rho``.

    Parameters
    ----------
    acc : AccumulatorSet
        Must contain at least one pair.
    config : SOCConfig, optional
    init : KoopmanModel, optional
        Starting model; defaults to the least-squares fit.
    diagnostics : text stream, optional
        Receives a per-iteration CSV ``iter,objective,step,spectral_radius``.

    Returns
    -------
    KoopmanModel, SOCState
        The state of the best run.
    """
    config = config or SOCConfig()
    if acc.count < 1:
        raise ValueError("cannot fit an empty accumulator set")
    if init is None:
        init = fit_least_squares(acc, dt if dt is not None else 1.0, dictionary)
    dt = init.dt if dt is None else dt
    dictionary = dictionary if dictionary is not None else init.dictionary
    writer = None
    if diagnostics is not None:
        writer = csv.writer(diagnostics)
        writer.writerow(["iter", "objective", "step", "spectral_radius"])

    S0, O0, C0 = initial_factors(init.A, config)
    rng = np.random.default_rng(config.seed)
    best = None
    for run in range(config.restarts):
        S, O, C = S0, O0, C0
        if run:
            for _ in range(10):
                S, O, C = _perturb(S0, O0, C0, rng, config.restart_scale,
                                   config.rho)
                if np.linalg.cond(S) <= config.max_cond:
                    break
            else:
                raise NumericalError("could not find an invertible perturbed S")
        if init.n_input_terms == acc.n_input_terms and run == 0 \
                and np.allclose(compose(S, O, C), init.A, atol=1e-12):
            B = init.B.copy()
        else:
            B = _best_B(compose(S, O, C), acc)
        state = _descend(acc, S, O, C, B, config, writer)
        log.info("SOC run %d: objective %.6g after %d iterations (%s)",
                 run, state.objective, state.iter, state.reason)
        if best is None or state.objective < best.objective:
            best = state
    model = KoopmanModel(best.A, best.B, dt, dictionary)
    return model, best


def project_nearest_stable(K_star, config: Optional[SOCConfig] = None
                           ) -> np.ndarray:
    """Stable matrix near ``K_star`` in Frobenius norm.

    Runs the same optimizer on ``X = I, Y = K_star`` so the objective is
    ``0.5 ||K_star - A||_F^2``; this ignores the data and serves as the
    project-then-evaluate baseline.
    """
    K = np.atleast_2d(np.asarray(K_star, dtype=float))
    n = K.shape[0]
    acc = AccumulatorSet.from_matrices(np.eye(n), K)
    init = KoopmanModel(K, np.zeros((n, 0)))
    model, _ = fit_stable(acc, config, init=init)
    return model.A


def with_rho(config: SOCConfig, rho: float) -> SOCConfig:
    return replace(config, rho=rho)
