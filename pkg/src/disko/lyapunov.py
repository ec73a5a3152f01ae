"""Quadratic Lyapunov candidates ``V = Psi' P Psi`` and sample-wise validity.

With ``Kc`` Hurwitz and ``P`` solving ``Kc' P + P Kc + Q = 0``, the
derivative of ``V`` along the true flow ``dPsi/dt = Kc Psi + eps(Psi)`` is
negative wherever ``||eps|| / ||Psi|| <= lambda_min(Q) / (2 lambda_max(P))``.
Each measured sample is tested against that ratio.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import BasisDictionary, check_equilibrium_consistency
from .edmd import KoopmanModel, NumericalError, spectral_radius
from .rollout import LogarithmError, to_continuous

log = logging.getLogger(__name__)

PSI_FLOOR = 1e-12


class LyapunovError(NumericalError):
    """No positive definite solution exists for the requested equation."""


def _check_square(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got {M.shape}")
    return M


def _solve_vec(M, Q):
    n = Q.shape[0]
    try:
        p = np.linalg.solve(M, -Q.reshape(-1))
    except np.linalg.LinAlgError:
        raise LyapunovError("singular Kronecker system") from None
    P = p.reshape(n, n)
    return 0.5 * (P + P.T)


def solve_lyapunov(K, Q) -> np.ndarray:
    """Solve ``K' P + P K + Q = 0`` through the Kronecker-sum linear system.

    With row-major vectorization ``vec(K' P) = (K' kron I) vec(P)`` and
    ``vec(P K) = (I kron K') vec(P)``.
    """
    K = _check_square(K, "K")
    Q = _check_square(Q, "Q")
    if Q.shape != K.shape:
        raise ValueError("K and Q differ in shape")
    lam = np.linalg.eigvals(K)
    if np.any(lam.real >= 0):
        raise LyapunovError(
            f"operator is not Hurwitz (max real part {lam.real.max():.3g})")
    n = K.shape[0]
    eye = np.eye(n)
    M = np.kron(K.T, eye) + np.kron(eye, K.T)
    return _solve_vec(M, Q)


def solve_discrete_lyapunov(A, Q) -> np.ndarray:
    """Solve ``A' P A - P + Q = 0``; requires spectral radius below one."""
    A = _check_square(A, "A")
    Q = _check_square(Q, "Q")
    r = spectral_radius(A)
    if r >= 1:
        raise LyapunovError(f"spectral radius {r:.6g} is not below 1")
    n = A.shape[0]
    M = np.kron(A.T, A.T) - np.eye(n * n)
    return _solve_vec(M, Q)


def lyapunov_residual(K, P, Q, discrete: bool = False) -> float:
    if discrete:
        R = K.T @ P @ K - P + Q
    else:
        R = K.T @ P + P @ K + Q
    return float(np.linalg.norm(R))


def alpha_upper(P, Q) -> float:
    """``lambda_min(Q) / (2 lambda_max(P))``."""
    return float(np.linalg.eigvalsh(Q).min() / (2 * np.linalg.eigvalsh(P).max()))


@dataclass
class LyapunovCertificate:
    P: np.ndarray
    Q: np.ndarray
    alpha_upper: float
    path: str
    t: np.ndarray
    V: np.ndarray
    dV: np.ndarray
    eps_norm: np.ndarray
    psi_norm: np.ndarray
    alpha_lower: np.ndarray
    valid: np.ndarray
    residual: float
    equilibrium_consistent: Optional[bool] = None
    operator: Optional[np.ndarray] = field(default=None, repr=False)
    estimator: str = "discrete"

    @property
    def valid_suffix(self) -> int:
        """Number of trailing samples that are all valid."""
        bad = np.flatnonzero(~self.valid)
        return len(self.valid) if bad.size == 0 else len(self.valid) - 1 - bad[-1]

    @property
    def suffix_start(self) -> Optional[float]:
        n = self.valid_suffix
        return float(self.t[len(self.t) - n]) if n else None

    @property
    def suffix_decreasing(self) -> bool:
        n = self.valid_suffix
        if n < 2:
            return False
        return bool(np.all(np.diff(self.V[-n:]) < 0))

    @property
    def fraction_valid(self) -> float:
        return float(np.mean(self.valid)) if len(self.valid) else 0.0


def certify_trajectory(model: KoopmanModel, states, dt: Optional[float] = None,
                       Q=None, P=None, inputs=None,
                       dictionary: Optional[BasisDictionary] = None,
                       path: str = "continuous", equilibria=None,
                       residual: str = "forward") -> LyapunovCertificate:
    """Evaluate the Lyapunov validity condition along a measured trajectory.

    Parameters
    ----------
    model : KoopmanModel
        Stable discrete model; its generator ``log(A)/dt`` is used on the
        continuous path.
    states : array_like, shape (T, N)
        Regularly sampled states, ``T >= 3``.
    Q : array_like, optional
        Defaults to the identity.
    P : array_like, optional
        Precomputed Lyapunov solution; solved for when omitted.
    path : {"continuous", "discrete"}
        ``continuous`` falls back to ``discrete`` when the logarithm is not
        admissible.
    equilibria : sequence of states, optional
        Checked for ``Psi(s*) = 0`` to cover the equilibrium condition.
    residual : {"forward", "hold"}
        Estimator of the continuous residual (ignored on the discrete path).

    Notes
    -----
    ``forward`` uses ``eps_k = (Psi_{k+1} - Psi_k)/dt - Kc Psi_k``, which
    carries an O(dt) bias even for exactly linear data. ``hold`` assumes
    ``eps`` constant over each step, giving
    ``eps_k = (A - I)^-1 Kc (Psi_{k+1} - A Psi_k)``, exact for linear data.
    Discrete residuals are ``Psi_{k+1} - A Psi_k - B u_k``. ``dV`` uses
    central differences.
    """
    d = dictionary or model.dictionary
    S = np.atleast_2d(np.asarray(states, dtype=float))
    if S.shape[0] < 3:
        raise ValueError("trajectory needs at least 3 samples")
    dt = model.dt if dt is None else dt
    Psi = (d.evaluate_state(S.T).T if d is not None else S)
    W = Psi.shape[1]
    Q = np.eye(W) if Q is None else _check_square(Q, "Q")
    if path not in ("continuous", "discrete"):
        raise ValueError(f"unknown path {path!r}")
    if residual not in ("forward", "hold"):
        raise ValueError(f"unknown residual estimator {residual!r}")

    operator = None
    if path == "continuous":
        try:
            operator = to_continuous(model.A, dt)
            if np.any(np.linalg.eigvals(operator).real >= 0):
                raise LyapunovError("generator is not Hurwitz")
        except (LogarithmError, LyapunovError) as exc:
            log.warning("continuous path unavailable (%s); using discrete path",
                        exc)
            path = "discrete"
    if P is None:
        P = solve_lyapunov(operator, Q) if path == "continuous" \
            else solve_discrete_lyapunov(model.A, Q)
    P = _check_square(P, "P")
    if path == "continuous":
        lyap_res = lyapunov_residual(operator, P, Q)
        if residual == "forward":
            eps = (Psi[1:] - Psi[:-1]) / dt - Psi[:-1] @ operator.T
        else:
            A = model.A
            M = np.linalg.solve(A - np.eye(W), operator)
            eps = (Psi[1:] - Psi[:-1] @ A.T) @ M.T
    else:
        lyap_res = lyapunov_residual(model.A, P, Q, discrete=True)
        eps = Psi[1:] - Psi[:-1] @ model.A.T
        if inputs is not None and model.n_input_terms:
            U = np.asarray(inputs, dtype=float).reshape(-1, d.input_dim if d else
                                                        model.n_input_terms)
            Ul = d.evaluate_input(U.T).T if d is not None else U
            eps = eps - Ul[:len(eps)] @ model.B.T

    V_all = np.einsum("ki,ij,kj->k", Psi, P, Psi)
    dV_all = np.gradient(V_all, dt)
    n = eps.shape[0]
    eps_norm = np.linalg.norm(eps, axis=1)
    psi_norm = np.linalg.norm(Psi[:n], axis=1)
    a_low = eps_norm / np.maximum(psi_norm, PSI_FLOOR)
    a_up = alpha_upper(P, Q)
    eq_ok = None
    if equilibria is not None and d is not None:
        eq_ok = all(r.all_vanish for r in
                    check_equilibrium_consistency(d, equilibria))
    return LyapunovCertificate(
        P=P, Q=Q, alpha_upper=a_up, path=path, t=dt * np.arange(n),
        V=V_all[:n], dV=dV_all[:n], eps_norm=eps_norm, psi_norm=psi_norm,
        alpha_lower=a_low, valid=a_low <= a_up, residual=lyap_res,
        equilibrium_consistent=eq_ok, operator=operator,
        estimator=residual if path == "continuous" else "discrete")


def write_certificate_csv(fh, cert: LyapunovCertificate):
    """Per-sample rows followed by a ``#``-prefixed summary block."""
    w = csv.writer(fh)
    w.writerow(["t", "V", "dV", "eps_norm", "psi_norm", "alpha_lower",
                "alpha_upper", "valid"])
    for k in range(len(cert.t)):
        w.writerow([repr(float(cert.t[k])), repr(float(cert.V[k])),
                    repr(float(cert.dV[k])), repr(float(cert.eps_norm[k])),
                    repr(float(cert.psi_norm[k])),
                    repr(float(cert.alpha_lower[k])),
                    repr(cert.alpha_upper), int(cert.valid[k])])
    fh.write(f"# path = {cert.path}\n")
    fh.write(f"# estimator = {cert.estimator}\n")
    fh.write(f"# lyapunov_residual = {cert.residual!r}\n")
    fh.write(f"# valid_fraction = {cert.fraction_valid!r}\n")
    fh.write(f"# valid_suffix_samples = {cert.valid_suffix}\n")
    fh.write(f"# valid_suffix_start = {cert.suffix_start}\n")
    fh.write(f"# suffix_V_decreasing = {cert.suffix_decreasing}\n")
    if cert.equilibrium_consistent is not None:
        fh.write(f"# equilibrium_consistent = {cert.equilibrium_consistent}\n")
