"""Least-squares Koopman fitting and discrete-time stability classification."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .basis import BasisDictionary
from .snapshots import AccumulatorSet, SnapshotSet

log = logging.getLogger(__name__)

DEFAULT_TOL_CLASS = 1e-8


class NumericalError(RuntimeError):
    """Raised when a numerical routine fails to produce a usable result."""


class Stability(str, enum.Enum):
    ASYMPTOTIC = "asymptotically-stable"
    MARGINAL = "marginally-stable"
    UNSTABLE = "unstable"

    @property
    def is_stable(self) -> bool:
        return self is not Stability.UNSTABLE


def pinv(M: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudoinverse with cutoff ``s_max * max(shape) * eps``."""
    M = np.atleast_2d(M)
    if M.size == 0:
        return M.T.copy()
    return np.linalg.pinv(M, rcond=max(M.shape) * np.finfo(float).eps)


def spectral_radius(A: np.ndarray) -> float:
    A = np.atleast_2d(A)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def _eigvals(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue solver failed: {exc}") from None


def _is_defective(A: np.ndarray, lam: complex, multiplicity: int) -> bool:
    n = A.shape[0]
    s = np.linalg.svd(A - lam * np.eye(n), compute_uv=False)
    rank_tol = 1e-6 * max(1.0, float(np.linalg.norm(A, 2)))
    geometric = int(np.sum(s <= rank_tol))
    return geometric < multiplicity


def _clusters(values: np.ndarray, tol: float):
    """Group nearly equal complex numbers; returns lists of indices."""
    groups = []
    for i, v in enumerate(values):
        for g in groups:
            if abs(values[g[0]] - v) <= tol:
                g.append(i)
                break
        else:
            groups.append([i])
    return groups


def classify_stability(A, tol_class: float = DEFAULT_TOL_CLASS
                       ) -> Tuple[Stability, np.ndarray]:
    """Discrete-time stability class and spectrum of ``A``.

    Asymptotically stable iff every ``|lambda| < 1 - tol``; unstable iff some
    ``|lambda| > 1 + tol`` or a repeated unit-modulus eigenvalue is defective
    (Jordan block larger than one); marginally stable otherwise.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    lam = _eigvals(A)
    mod = np.abs(lam)
    if np.all(mod < 1 - tol_class):
        return Stability.ASYMPTOTIC, lam
    if np.any(mod > 1 + tol_class):
        return Stability.UNSTABLE, lam
    on_circle = np.flatnonzero(np.abs(mod - 1) <= tol_class)
    # defective blocks split eigenvalues by ~sqrt(eps), hence the loose grouping
    for g in _clusters(lam[on_circle], 1e-6):
        if len(g) > 1:
            center = lam[on_circle][g].mean()
            if _is_defective(A, center, len(g)):
                return Stability.UNSTABLE, lam
    return Stability.MARGINAL, lam


@dataclass
class KoopmanModel:
    """Discrete-time lifted model ``psi+ = A psi + B u``."""

    A: np.ndarray
    B: np.ndarray
    dt: float = 1.0
    dictionary: Optional[BasisDictionary] = None
    tol_class: float = DEFAULT_TOL_CLASS
    stability_class: Stability = field(init=False)
    eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        ws = self.A.shape[0]
        B = np.asarray(self.B if self.B is not None else np.zeros((ws, 0)),
                       dtype=float)
        self.B = B.reshape(ws, -1) if B.size else np.zeros((ws, 0))
        if self.A.shape != (ws, ws):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.dictionary is not None:
            d = self.dictionary
            if d.n_state_terms != ws or (self.B.shape[1] and
                                         d.n_input_terms != self.B.shape[1]):
                raise ValueError("model dimensions do not match dictionary")
        self.stability_class, self.eigenvalues = classify_stability(
            self.A, self.tol_class)

    @property
    def n_state_terms(self) -> int:
        return self.A.shape[0]

    @property
    def n_input_terms(self) -> int:
        return self.B.shape[1]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.eigenvalues)))

    def step(self, psi, u=None) -> np.ndarray:
        out = self.A @ np.asarray(psi, dtype=float)
        if u is not None and self.n_input_terms:
            out = out + self.B @ np.asarray(u, dtype=float)
        return out


def fit_least_squares(acc: AccumulatorSet, dt: float = 1.0,
                      dictionary: Optional[BasisDictionary] = None,
                      tol_class: float = DEFAULT_TOL_CLASS) -> KoopmanModel:
    """Minimum-norm minimizer of ``0.5 ||Y - A X - B U||_F^2``.

    Solves the normal equations of the stacked regressor ``[X; U]``::

        [A B] = [Amat Y_U] pinv([[G, X_U], [X_U^T, U_U]])
    """
    if acc.count < 1:
        raise ValueError("cannot fit an empty accumulator set")
    ws = acc.n_state_terms
    gram = np.block([[acc.G, acc.X_U], [acc.X_U.T, acc.U_U]])
    rhs = np.hstack([acc.Amat, acc.Y_U])
    AB = rhs @ pinv(gram)
    return KoopmanModel(AB[:, :ws], AB[:, ws:], dt, dictionary, tol_class)


def _as_B(A, B, wu):
    if B is None or np.size(B) == 0:
        return np.zeros((A.shape[0], wu))
    return np.asarray(B, dtype=float).reshape(A.shape[0], -1)


def reconstruction_error(A, B, data: Union[SnapshotSet, AccumulatorSet]) -> float:
    """``0.5 ||Y - A X - B U||_F^2`` from snapshots or from accumulators.

    The accumulator route uses the trace expansion

        0.5 [tr(YY^T) - 2 tr(A Amat^T) - 2 tr(B Y_U^T) + tr(A G A^T)
             + 2 tr(A X_U B^T) + tr(B U_U B^T)]

    which needs the running scalar ``tr(Y Y^T)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if isinstance(data, SnapshotSet):
        B = _as_B(A, B, data.U.shape[0])
        R = data.Y - A @ data.X - B @ data.U
        return 0.5 * float(np.sum(R * R))
    acc = data
    if acc.trYY is None:
        raise ValueError("accumulator set lacks tr(Y Y^T); cannot report objective")
    B = _as_B(A, B, acc.n_input_terms)
    AG = A @ acc.G
    val = (acc.trYY - 2 * np.sum(A * acc.Amat) - 2 * np.sum(B * acc.Y_U)
           + np.sum(AG * A) + 2 * np.sum((A @ acc.X_U) * B)
           + np.sum((B @ acc.U_U) * B))
    return 0.5 * float(val)


def column_sum_error(A, B, snap: SnapshotSet) -> float:
    """Same objective as a sum of per-pair squared residual norms."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = _as_B(A, B, snap.U.shape[0])
    total = 0.0
    for k in range(snap.P):
        r = snap.Y[:, k] - A @ snap.X[:, k] - B @ snap.U[:, k]
        total += 0.5 * float(r @ r)
    return total


# -- model text container ---------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _matrix_block(name: str, M: np.ndarray):
    M = np.atleast_2d(M)
    rows, cols = M.shape
    out = [f"[{name} {rows} {cols}]"]
    for r in range(rows):
        out.append(" ".join(_fmt(v) for v in M[r]))
    return out


def model_to_text(model: KoopmanModel, extra: Optional[dict] = None) -> str:
    """Serialize to the plain-text model container.

    ``extra`` maps block names to matrices (e.g. ``{"K_LQR": K}``) or to
    scalars, which are written as metadata.
    """
    lines = ["# disko model", f"dt = {_fmt(model.dt)}",
             f"stability = {model.stability_class.value}"]
    mats = {}
    for k, v in (extra or {}).items():
        if np.ndim(v) == 0:
            lines.append(f"{k} = {v}")
        else:
            mats[k] = np.asarray(v, dtype=float)
    d = model.dictionary
    if d is not None:
        lines.append(f"state_dim = {d.state_dim}")
        lines.append(f"input_dim = {d.input_dim}")
        lines.append("[state_terms]")
        lines += d.state_labels
        if d.input_terms:
            lines.append("[input_terms]")
            lines += d.input_labels
    lines += _matrix_block("A", model.A)
    lines += _matrix_block("B", model.B)
    for k, v in mats.items():
        lines += _matrix_block(k, np.atleast_2d(v))
    return "\n".join(lines) + "\n"


def model_from_text(text: str):
    """Inverse of :func:`model_to_text`; returns ``(model, extras)``."""
    meta, blocks, terms = {}, {}, {"state_terms": [], "input_terms": []}
    section, rows_left, cur = None, 0, None
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            parts = line.strip("[]").split()
            if len(parts) == 3:
                name, r, c = parts[0], int(parts[1]), int(parts[2])
                cur = np.zeros((r, c))
                blocks[name] = cur
                section, rows_left = ("matrix", name), r
            else:
                section = ("terms", parts[0])
            continue
        if section and section[0] == "matrix":
            if rows_left <= 0:
                raise ValueError(f"too many rows in block {section[1]}")
            vals = [float(v) for v in line.split()]
            r = cur.shape[0] - rows_left
            if len(vals) != cur.shape[1]:
                raise ValueError(f"row {r} of {section[1]} has {len(vals)} values")
            cur[r] = vals
            rows_left -= 1
        elif section and section[0] == "terms":
            terms[section[1]].append(line)
        else:
            k, _, v = line.partition("=")
            meta[k.strip()] = v.strip()
    if "A" not in blocks:
        raise ValueError("model file has no A block")
    dictionary = None
    if terms["state_terms"]:
        dictionary = BasisDictionary.from_labels(
            terms["state_terms"], int(meta["state_dim"]),
            int(meta.get("input_dim", 0)), terms["input_terms"] or None)
    B = blocks.get("B", np.zeros((blocks["A"].shape[0], 0)))
    model = KoopmanModel(blocks["A"], B, float(meta.get("dt", 1.0)), dictionary)
    extras = {k: v for k, v in blocks.items() if k not in ("A", "B")}
    extras.update({k: v for k, v in meta.items()
                   if k not in ("dt", "stability", "state_dim", "input_dim")})
    return model, extras


def save_model(path, model: KoopmanModel, extra: Optional[dict] = None):
    with open(path, "w") as fh:
        fh.write(model_to_text(model, extra))


def load_model(path):
    with open(path) as fh:
        return model_from_text(fh.read())
