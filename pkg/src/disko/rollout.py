"""Multi-step prediction, local/global error decomposition and the error bound."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .edmd import KoopmanModel, NumericalError, Stability, _clusters

log = logging.getLogger(__name__)

NORMS = ("spectral", "frobenius")


class LogarithmError(NumericalError):
    """The principal matrix logarithm does not exist for this spectrum."""


@dataclass
class RolloutResult:
    basis: np.ndarray   # (n+1, W_s)
    states: np.ndarray  # (n+1, N)
    dt: float

    @property
    def horizon(self) -> int:
        return self.basis.shape[0] - 1

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.basis.shape[0])


def _state_dim(model: KoopmanModel, state_dim: Optional[int]) -> int:
    if state_dim is not None:
        return state_dim
    if model.dictionary is not None:
        return model.dictionary.state_dim
    return model.n_state_terms


def rollout(model: KoopmanModel, psi0, inputs=None, n: int = 1,
            state_dim: Optional[int] = None) -> RolloutResult:
    """Iterate ``psi_{k+1} = A psi_k + B u_k`` for ``k = 0..n-1``.

    ``inputs`` are lifted input vectors (``W_u`` each); missing inputs are
    zero. The predicted state is read off the first ``N`` observables.
    """
    psi = np.asarray(psi0, dtype=float).ravel()
    if psi.size != model.n_state_terms:
        raise ValueError(f"psi0 has {psi.size} entries, model expects "
                         f"{model.n_state_terms}")
    if n < 0:
        raise ValueError("horizon must be non-negative")
    U = None
    if inputs is not None and model.n_input_terms:
        U = np.asarray(inputs, dtype=float).reshape(-1, model.n_input_terms)
        if U.shape[0] < n:
            raise ValueError(f"{U.shape[0]} inputs for horizon {n}")
    out = np.empty((n + 1, psi.size))
    out[0] = psi
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            nxt = model.A @ out[k]
            if U is not None:
                nxt = nxt + model.B @ U[k]
            out[k + 1] = nxt
    N = _state_dim(model, state_dim)
    return RolloutResult(out, out[:, :N].copy(), model.dt)


def _opnorm(A, norm: str) -> float:
    if norm == "spectral":
        return float(np.linalg.norm(A, 2))
    if norm == "frobenius":
        return float(np.linalg.norm(A, "fro"))
    raise ValueError(f"unknown norm {norm!r}; choose from {NORMS}")


def error_bound(model, e_max_norm: float, n: int, norm: str = "spectral"
                ) -> np.ndarray:
    """``bound(k) = e_max * sum_{i<k} ||A||^i`` for ``k = 1..n``."""
    A = model.A if isinstance(model, KoopmanModel) else np.atleast_2d(model)
    if e_max_norm < 0:
        raise ValueError("e_max_norm must be non-negative")
    a = _opnorm(A, norm)
    powers = a ** np.arange(n)
    return e_max_norm * np.cumsum(powers)


@dataclass
class ErrorProfile:
    local: np.ndarray       # (n, W_s), e_1..e_n
    global_: np.ndarray     # (n, W_s), E_1..E_n
    bound: np.ndarray       # (n,)
    norm: str
    identity_residual: float

    @property
    def local_norms(self) -> np.ndarray:
        return np.linalg.norm(self.local, axis=1)

    @property
    def global_norms(self) -> np.ndarray:
        return np.linalg.norm(self.global_, axis=1)

    @property
    def e_max(self) -> float:
        return float(self.local_norms.max()) if len(self.local) else 0.0


def error_profile(model: KoopmanModel, true_basis, inputs=None,
                  norm: str = "spectral") -> ErrorProfile:
    """Local and global errors of ``model`` along a measured trajectory.

    Parameters
    ----------
    true_basis : array_like, shape (n+1, W_s)
        Lifted measurements ``Psi(s(t0 + k dt))``.
    inputs : array_like, shape (n, W_u), optional

    Notes
    -----
    ``E_n = sum_{i=0}^{n-1} A^i e_{n-i}`` is recomputed by direct summation;
    the worst relative discrepancy is stored in ``identity_residual``.
    """
    Psi = np.atleast_2d(np.asarray(true_basis, dtype=float))
    if Psi.shape[0] < 2:
        raise ValueError("need at least two samples")
    n = Psi.shape[0] - 1
    A = model.A
    Bu = np.zeros((n, A.shape[0]))
    if inputs is not None and model.n_input_terms:
        U = np.asarray(inputs, dtype=float).reshape(-1, model.n_input_terms)
        Bu = U[:n] @ model.B.T
    e = Psi[1:] - Psi[:-1] @ A.T - Bu
    pred = Psi[0].copy()
    E = np.empty_like(e)
    for k in range(n):
        pred = A @ pred + Bu[k]
        E[k] = Psi[k + 1] - pred
    # direct summation check of the global-error law
    resid = 0.0
    for k in range(1, n + 1):
        acc = np.zeros(A.shape[0])
        P = np.eye(A.shape[0])
        for i in range(k):
            acc += P @ e[k - 1 - i]
            P = P @ A
        resid = max(resid, float(np.linalg.norm(E[k - 1] - acc)
                                 / (1 + np.linalg.norm(E[k - 1]))))
    e_max = float(np.linalg.norm(e, axis=1).max())
    bound = error_bound(A, e_max, n, norm)
    if norm == "spectral":
        _transient_warning(A)
    return ErrorProfile(e, E, bound, norm, resid)


def _transient_warning(A):
    r = np.max(np.abs(np.linalg.eigvals(A)))
    s = np.linalg.norm(A, 2)
    if r <= 1 + 1e-8 and s > 1:
        log.warning("||A||_2 = %.4g exceeds 1 although the spectral radius is "
                    "%.4g; errors may grow transiently", s, r)


def to_continuous(model, dt: Optional[float] = None, tol: float = 1e-10):
    """Continuous generator ``log(A) / dt`` from the principal logarithm.

    Raises
    ------
    LogarithmError
        If ``A`` has an eigenvalue on the closed negative real axis; callers
        should use the discrete Lyapunov path instead.
    """
    if isinstance(model, KoopmanModel):
        A, dt = model.A, model.dt if dt is None else dt
    else:
        A = np.atleast_2d(np.asarray(model, dtype=float))
    if dt is None or dt <= 0:
        raise ValueError("dt must be positive")
    lam = np.linalg.eigvals(A)
    bad = (lam.real <= tol) & (np.abs(lam.imag) <= tol)
    if np.any(bad):
        raise LogarithmError(
            f"eigenvalue {lam[bad][0]:.3g} on the closed negative real axis; "
            "use the discrete Lyapunov path")
    L = linalg.logm(A)
    if np.iscomplexobj(L):
        if np.max(np.abs(L.imag)) > 1e-8 * max(1.0, np.max(np.abs(L.real))):
            raise LogarithmError("matrix logarithm is not real")
        L = L.real
    K = L / dt
    err = np.linalg.norm(linalg.expm(K * dt) - A)
    if err > 1e-6 * max(np.linalg.norm(A), np.finfo(float).tiny):
        raise NumericalError(f"exp(log(A)) mismatch {err:.3g}")
    return K


def classify_continuous(K, tol: float = 1e-8):
    """Hurwitz-based class: unstable iff some ``Re > tol`` or a defective
    repeated eigenvalue sits on the imaginary axis."""
    K = np.atleast_2d(K)
    lam = np.linalg.eigvals(K)
    if np.all(lam.real < -tol):
        return Stability.ASYMPTOTIC, lam
    if np.any(lam.real > tol):
        return Stability.UNSTABLE, lam
    axis = lam[np.abs(lam.real) <= tol]
    n = K.shape[0]
    rank_tol = 1e-6 * max(1.0, float(np.linalg.norm(K, 2)))
    for g in _clusters(axis, 1e-6):
        if len(g) > 1:
            s = np.linalg.svd(K - axis[g].mean() * np.eye(n), compute_uv=False)
            if np.sum(s <= rank_tol) < len(g):
                return Stability.UNSTABLE, lam
    return Stability.MARGINAL, lam


def write_rollout_csv(fh, result: RolloutResult,
                      profile: Optional[ErrorProfile] = None):
    """Columns ``step, t, s0.., e_norm, E_norm, bound``."""
    w = csv.writer(fh)
    N = result.states.shape[1]
    w.writerow(["step", "t"] + [f"s{i}" for i in range(N)]
               + ["e_norm", "E_norm", "bound"])
    for k in range(result.basis.shape[0]):
        row = [k, repr(float(result.t[k]))]
        row += [repr(float(v)) for v in result.states[k]]
        if profile is not None and 0 < k <= len(profile.bound):
            row += [repr(float(profile.local_norms[k - 1])),
                    repr(float(profile.global_norms[k - 1])),
                    repr(float(profile.bound[k - 1]))]
        else:
            row += ["", "", ""] if k else ["0.0", "0.0", "0.0"]
        w.writerow(row)
