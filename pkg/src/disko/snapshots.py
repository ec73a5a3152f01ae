"""Snapshot matrices and their streaming accumulators.

Columns of ``X`` are lifted states, columns of ``Y`` the lifted states one
``dt`` later and columns of ``U`` the lifted inputs applied in between. All
fitting only needs the Gram-type products

    G = X X^T,  Amat = Y X^T,  X_U = X U^T,  Y_U = Y U^T,  U_U = U U^T

plus the scalar ``tr(Y Y^T)`` for reporting objective values, so these are
kept as running sums and the full matrices are optional.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basis import BasisDictionary


class SnapshotError(ValueError):
    pass


@dataclass
class AccumulatorSet:
    """Running sums over ingested snapshot pairs."""

    G: np.ndarray
    Amat: np.ndarray
    X_U: np.ndarray
    Y_U: np.ndarray
    U_U: np.ndarray
    trYY: float = 0.0
    count: int = 0

    @classmethod
    def empty(cls, n_state_terms: int, n_input_terms: int = 0):
        ws, wu = n_state_terms, n_input_terms
        return cls(np.zeros((ws, ws)), np.zeros((ws, ws)), np.zeros((ws, wu)),
                   np.zeros((ws, wu)), np.zeros((wu, wu)))

    @classmethod
    def from_matrices(cls, X, Y, U=None):
        """Batch construction from full snapshot matrices."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        if X.shape != Y.shape:
            raise SnapshotError(f"X {X.shape} and Y {Y.shape} differ")
        if U is None:
            U = np.zeros((0, X.shape[1]))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        if U.shape[1] != X.shape[1]:
            raise SnapshotError(f"U has {U.shape[1]} columns, expected {X.shape[1]}")
        return cls(X @ X.T, Y @ X.T, X @ U.T, Y @ U.T, U @ U.T,
                   float(np.sum(Y * Y)), X.shape[1])

    @property
    def n_state_terms(self) -> int:
        return self.G.shape[0]

    @property
    def n_input_terms(self) -> int:
        return self.U_U.shape[0]

    def copy(self) -> "AccumulatorSet":
        return AccumulatorSet(self.G.copy(), self.Amat.copy(), self.X_U.copy(),
                              self.Y_U.copy(), self.U_U.copy(), self.trYY,
                              self.count)

    def ingest(self, psi_pre, psi_post, psi_u=None) -> "AccumulatorSet":
        """Add one pair in place (rank-one updates) and return self."""
        x = np.asarray(psi_pre, dtype=float).ravel()
        y = np.asarray(psi_post, dtype=float).ravel()
        u = (np.zeros(0) if psi_u is None
             else np.asarray(psi_u, dtype=float).ravel())
        ws, wu = self.n_state_terms, self.n_input_terms
        if x.size != ws or y.size != ws or u.size != wu:
            raise SnapshotError(
                f"pair sizes ({x.size}, {y.size}, {u.size}) do not match "
                f"({ws}, {ws}, {wu})")
        self.G += np.outer(x, x)
        self.Amat += np.outer(y, x)
        if wu:
            self.X_U += np.outer(x, u)
            self.Y_U += np.outer(y, u)
            self.U_U += np.outer(u, u)
        self.trYY += float(y @ y)
        self.count += 1
        return self

    def ingest_batch(self, X, Y, U=None) -> "AccumulatorSet":
        """Add many pairs at once; equal to repeated :meth:`ingest`."""
        other = AccumulatorSet.from_matrices(X, Y, U)
        if other.G.shape != self.G.shape or other.U_U.shape != self.U_U.shape:
            raise SnapshotError("batch dimensions do not match accumulators")
        self.G += other.G
        self.Amat += other.Amat
        self.X_U += other.X_U
        self.Y_U += other.Y_U
        self.U_U += other.U_U
        self.trYY += other.trYY
        self.count += other.count
        return self


@dataclass
class SnapshotSet:
    """Full snapshot matrices with their time step."""

    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    dt: float

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.U is None:
            self.U = np.zeros((0, self.X.shape[1]))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        if self.U.size == 0 and self.U.shape[1] != self.X.shape[1]:
            self.U = self.U.reshape(0, self.X.shape[1])
        if self.X.shape != self.Y.shape:
            raise SnapshotError(f"X {self.X.shape} and Y {self.Y.shape} differ")
        if self.U.shape[1] != self.X.shape[1]:
            raise SnapshotError("U column count differs from X")

    @property
    def P(self) -> int:
        return self.X.shape[1]

    def accumulators(self) -> AccumulatorSet:
        return AccumulatorSet.from_matrices(self.X, self.Y, self.U)


def ingest_pair(acc: AccumulatorSet, snap: Optional[SnapshotSet], psi_pre,
                psi_post, psi_u=None):
    """Update accumulators and, when given, append the pair to ``snap``."""
    acc.ingest(psi_pre, psi_post, psi_u)
    if snap is not None:
        u = np.zeros(0) if psi_u is None else np.ravel(psi_u).astype(float)
        snap.X = np.hstack([snap.X, np.reshape(psi_pre, (-1, 1))])
        snap.Y = np.hstack([snap.Y, np.reshape(psi_post, (-1, 1))])
        snap.U = np.hstack([snap.U, u.reshape(-1, 1)])
    return acc, snap


def build_from_trajectory(dictionary: BasisDictionary, states, inputs=None,
                          dt: float = 1.0):
    """Lift a sampled trajectory into snapshot pairs.

    Parameters
    ----------
    states : array_like, shape (T, N)
        Samples ``s(t0 + k dt)``.
    inputs : array_like, shape (T - 1, M) or longer, optional
        Input held between samples ``k`` and ``k + 1``.

    Returns
    -------
    SnapshotSet, AccumulatorSet
    """
    S = np.asarray(states, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    if S.shape[0] < 2:
        raise SnapshotError(f"need at least two states, got {S.shape[0]}")
    P = S.shape[0] - 1
    Psi = dictionary.evaluate_state(S.T)
    X, Y = Psi[:, :-1], Psi[:, 1:]
    if dictionary.input_dim:
        if inputs is None:
            raise SnapshotError("dictionary has inputs but none were given")
        Uraw = np.asarray(inputs, dtype=float)
        if Uraw.ndim == 1:
            Uraw = Uraw[:, None]
        if Uraw.shape[0] < P:
            raise SnapshotError(
                f"{Uraw.shape[0]} inputs for {P} transitions")
        U = dictionary.evaluate_input(Uraw[:P].T)
    else:
        U = np.zeros((0, P))
    snap = SnapshotSet(X, Y, U, dt)
    return snap, snap.accumulators()


def build_from_pairs(dictionary: BasisDictionary, pre, post, inputs=None,
                     dt: float = 1.0):
    """Lift independent one-step pairs ``(pre[k], post[k])``."""
    pre = np.asarray(pre, dtype=float)
    post = np.asarray(post, dtype=float)
    if pre.shape != post.shape:
        raise SnapshotError("pre and post state arrays differ in shape")
    X = dictionary.evaluate_state(pre.T)
    Y = dictionary.evaluate_state(post.T)
    if dictionary.input_dim:
        U = dictionary.evaluate_input(np.asarray(inputs, dtype=float).reshape(
            pre.shape[0], -1).T)
    else:
        U = np.zeros((0, pre.shape[0]))
    snap = SnapshotSet(X, Y, U, dt)
    return snap, snap.accumulators()


# -- CSV trajectories -------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    states: np.ndarray  # (T, N)
    inputs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0


def write_trajectory_csv(path_or_buf, t, states, inputs=None):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    T, N = states.shape
    if inputs is None:
        inputs = np.zeros((T, 0))
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    M = inputs.shape[1]
    if inputs.shape[0] not in (T, T - 1):
        raise SnapshotError("inputs must have T or T-1 rows")
    header = ["t"] + [f"s{i}" for i in range(N)] + [f"u{j}" for j in range(M)]
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(T):
            u = inputs[k] if k < inputs.shape[0] else np.zeros(M)
            w.writerow([repr(float(t[k]))] + [repr(float(v)) for v in states[k]]
                       + [repr(float(v)) for v in u])
    finally:
        if own:
            fh.close()


def read_trajectory_csv(path_or_buf, dt: Optional[float] = None,
                        rtol: float = 1e-9) -> Trajectory:
    """Read the ``t,s0..,u0..`` format, validating uniform spacing."""
    if isinstance(path_or_buf, str) and "\n" in path_or_buf:
        fh = io.StringIO(path_or_buf)
        own = False
    elif hasattr(path_or_buf, "read"):
        fh, own = path_or_buf, False
    else:
        fh, own = open(path_or_buf, newline=""), True
    try:
        rows = list(csv.reader(fh))
    finally:
        if own:
            fh.close()
    if not rows:
        raise SnapshotError("trajectory file is empty (0 rows)")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t":
        raise SnapshotError(f"first column must be 't', got {header[:1]}")
    s_cols = [i for i, h in enumerate(header) if h.startswith("s")]
    u_cols = [i for i, h in enumerate(header) if h.startswith("u")]
    for expect, cols, p in ((s_cols, s_cols, "s"), (u_cols, u_cols, "u")):
        names = [header[i] for i in cols]
        if names != [f"{p}{k}" for k in range(len(cols))]:
            raise SnapshotError(f"columns {names} are not {p}0..{p}{len(cols)-1}")
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    if not body:
        raise SnapshotError("trajectory file has 0 data rows")
    try:
        data = np.array([[float(c) for c in r] for r in body])
    except ValueError as exc:
        raise SnapshotError(f"malformed number: {exc}") from None
    if data.shape[1] != len(header):
        raise SnapshotError("row length does not match header")
    t = data[:, 0]
    if len(t) > 1:
        steps = np.diff(t)
        ref = dt if dt is not None else steps[0]
        if np.any(steps <= 0):
            raise SnapshotError("time column must be strictly increasing")
        if np.any(np.abs(steps - ref) > rtol * abs(ref) + 1e-12 * np.abs(t[1:])):
            raise SnapshotError(f"time spacing is not uniform at dt={ref}")
    return Trajectory(t, data[:, s_cols], data[:, u_cols])
