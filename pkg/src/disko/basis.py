"""Observable dictionaries over state and input.

A dictionary is an ordered list of scalar observables. The first ``N``
state observables are always the raw coordinates ``x0 .. x{N-1}`` so that
predicted states can be read straight off a lifted vector.

Terms are described by short text labels such as ``sin(x0)*x1^2``; the
grammar is

    term   := factor ('*' factor)*
    factor := atom ('^' INT)?
    atom   := VAR | 'sin(' VAR ')' | 'cos(' VAR ')' | '@' NAME
    VAR    := 'x' INT  (state)  |  'u' INT  (input)

``@NAME`` refers to a function registered with :func:`register_observable`.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_VANISH_TOL = 1e-12

_REGISTRY: Dict[str, Callable[[np.ndarray], np.ndarray]] = {}

_ATOM_RE = re.compile(
    r"^(?:(?P<fn>sin|cos)\((?P<fvar>[xu])(?P<fidx>\d+)\)"
    r"|(?P<var>[xu])(?P<idx>\d+)"
    r"|@(?P<name>[A-Za-z_][A-Za-z0-9_]*))"
    r"(?:\^(?P<pow>\d+))?$"
)


class DictionaryError(ValueError):
    """Raised for malformed labels, dimension mismatches and empty results."""


def register_observable(name: str, func: Callable[[np.ndarray], np.ndarray]):
    """Register a custom observable usable in labels as ``@name``.

    ``func`` receives the coordinate array of shape ``(N, ...)`` and must
    return an array of the trailing shape.
    """
    if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
        raise DictionaryError(f"invalid observable name {name!r}")
    _REGISTRY[name] = func


def registered_observables() -> List[str]:
    return sorted(_REGISTRY)


@dataclass(frozen=True)
class Factor:
    kind: str  # 'var', 'sin', 'cos' or 'custom'
    index: int = -1
    power: int = 1
    name: str = ""

    def label(self, prefix: str) -> str:
        if self.kind == "var":
            base = f"{prefix}{self.index}"
        elif self.kind == "custom":
            base = f"@{self.name}"
        else:
            base = f"{self.kind}({prefix}{self.index})"
        return base if self.power == 1 else f"{base}^{self.power}"

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "var":
            v = z[self.index]
        elif self.kind == "sin":
            v = np.sin(z[self.index])
        elif self.kind == "cos":
            v = np.cos(z[self.index])
        else:
            try:
                func = _REGISTRY[self.name]
            except KeyError:
                raise DictionaryError(
                    f"observable @{self.name} is not registered") from None
            v = np.asarray(func(z), dtype=float)
        return v if self.power == 1 else v ** self.power


@dataclass(frozen=True)
class ObservableTerm:
    """Product of factors over one variable vector (state or input)."""

    factors: Tuple[Factor, ...]
    prefix: str = "x"

    @property
    def label(self) -> str:
        return "*".join(f.label(self.prefix) for f in self.factors)

    @property
    def max_index(self) -> int:
        return max((f.index for f in self.factors), default=-1)

    @property
    def coordinate(self) -> Optional[int]:
        """Coordinate index if this term is a bare projection, else None."""
        if len(self.factors) == 1:
            f = self.factors[0]
            if f.kind == "var" and f.power == 1:
                return f.index
        return None

    def __call__(self, z: np.ndarray) -> np.ndarray:
        out = self.factors[0].evaluate(z)
        for f in self.factors[1:]:
            out = out * f.evaluate(z)
        return out

    def __str__(self) -> str:
        return self.label


def parse_term(label: str, prefix: str = "x") -> ObservableTerm:
    """Parse a term label; ``prefix`` selects ``x`` (state) or ``u`` (input)."""
    text = label.replace(" ", "")
    if not text:
        raise DictionaryError("empty term label")
    factors = []
    for part in text.split("*"):
        m = _ATOM_RE.match(part)
        if m is None:
            raise DictionaryError(f"cannot parse factor {part!r} in {label!r}")
        power = int(m["pow"]) if m["pow"] else 1
        if power < 1:
            raise DictionaryError(f"power must be positive in {label!r}")
        if m["name"]:
            factors.append(Factor("custom", power=power, name=m["name"]))
            continue
        var = m["var"] or m["fvar"]
        if var != prefix:
            raise DictionaryError(
                f"{label!r} uses variable {var!r}, expected {prefix!r}")
        idx = int(m["idx"] if m["idx"] is not None else m["fidx"])
        kind = m["fn"] or "var"
        factors.append(Factor(kind, index=idx, power=power))
    return ObservableTerm(tuple(factors), prefix)


def coordinate_terms(n: int, prefix: str = "x") -> List[ObservableTerm]:
    return [ObservableTerm((Factor("var", i),), prefix) for i in range(n)]


@dataclass(frozen=True)
class BasisDictionary:
    """State observables ``Psi_s`` and input observables ``Psi_u``.

    Attributes
    ----------
    state_terms : tuple of ObservableTerm
        Length ``W_s``; the first ``state_dim`` entries are ``x0..x{N-1}``.
    input_terms : tuple of ObservableTerm
        Length ``W_u``; defaults to the identity on the input.
    state_dim, input_dim : int
        ``N`` and ``M``. ``input_dim`` may be 0 for autonomous systems.
    """

    state_terms: Tuple[ObservableTerm, ...]
    input_terms: Tuple[ObservableTerm, ...] = field(default=())
    state_dim: int = 0
    input_dim: int = 0

    def __post_init__(self):
        n = self.state_dim
        if n < 1:
            raise DictionaryError("state_dim must be positive")
        if len(self.state_terms) < n:
            raise DictionaryError("dictionary shorter than the state dimension")
        for i, t in enumerate(self.state_terms[:n]):
            if t.coordinate != i:
                raise DictionaryError(
                    f"state term {i} must be x{i}, got {t.label!r}")
        for t in self.state_terms:
            if t.prefix != "x" or t.max_index >= n:
                raise DictionaryError(f"term {t.label!r} does not fit N={n}")
        for t in self.input_terms:
            if t.prefix != "u" or t.max_index >= self.input_dim:
                raise DictionaryError(
                    f"input term {t.label!r} does not fit M={self.input_dim}")
        if self.input_dim and not self.input_terms:
            raise DictionaryError("input_dim > 0 but no input terms")

    @classmethod
    def from_labels(cls, state_labels: Sequence[str], state_dim: int,
                    input_dim: int = 0,
                    input_labels: Optional[Sequence[str]] = None):
        """Build from text labels. Missing leading coordinates are not added."""
        st = tuple(parse_term(s, "x") for s in state_labels)
        if input_labels is None:
            it = tuple(coordinate_terms(input_dim, "u"))
        else:
            it = tuple(parse_term(s, "u") for s in input_labels)
        return cls(st, it, state_dim, input_dim)

    @property
    def n_state_terms(self) -> int:
        return len(self.state_terms)

    @property
    def n_input_terms(self) -> int:
        return len(self.input_terms)

    @property
    def size(self) -> int:
        return self.n_state_terms + self.n_input_terms

    @property
    def state_labels(self) -> List[str]:
        return [t.label for t in self.state_terms]

    @property
    def input_labels(self) -> List[str]:
        return [t.label for t in self.input_terms]

    def to_text(self) -> str:
        """One label per line; input terms follow a ``[input]`` marker."""
        lines = [f"# state_dim = {self.state_dim}",
                 f"# input_dim = {self.input_dim}"]
        lines += self.state_labels
        if self.input_terms:
            lines.append("[input]")
            lines += self.input_labels
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str):
        state, inputs, dims = [], [], {}
        target = state
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = re.match(r"#\s*(state_dim|input_dim)\s*=\s*(\d+)", line)
                if m:
                    dims[m[1]] = int(m[2])
                continue
            if line == "[input]":
                target = inputs
                continue
            target.append(line)
        n = dims.get("state_dim")
        if n is None:
            # leading bare coordinates define N
            n = 0
            while n < len(state) and state[n].replace(" ", "") == f"x{n}":
                n += 1
        m = dims.get("input_dim", 0 if not inputs else None)
        if m is None:
            m = 1 + max(parse_term(s, "u").max_index for s in inputs)
        return cls.from_labels(state, n, m, inputs if inputs else None)

    def evaluate_state(self, s) -> np.ndarray:
        """Evaluate ``Psi_s``; ``s`` is ``(N,)`` or ``(N, T)`` column-wise."""
        z = np.asarray(s, dtype=float)
        if z.shape[0] != self.state_dim:
            raise DictionaryError(
                f"state has length {z.shape[0]}, expected {self.state_dim}")
        out = np.empty((self.n_state_terms,) + z.shape[1:])
        for i, t in enumerate(self.state_terms):
            out[i] = t(z)
        # coordinates are copied verbatim
        out[: self.state_dim] = z
        return out

    def evaluate_input(self, u) -> np.ndarray:
        z = np.asarray(u, dtype=float)
        if self.input_dim == 0:
            return np.zeros((0,) + z.shape[1:])
        if z.shape[0] != self.input_dim:
            raise DictionaryError(
                f"input has length {z.shape[0]}, expected {self.input_dim}")
        out = np.empty((self.n_input_terms,) + z.shape[1:])
        for i, t in enumerate(self.input_terms):
            out[i] = t(z)
        return out

    def without(self, indices) -> "BasisDictionary":
        drop = set(indices)
        kept = tuple(t for i, t in enumerate(self.state_terms) if i not in drop)
        n = self.state_dim
        if any(i < n for i in drop):
            # removing a coordinate breaks the leading-state convention, so
            # the reduced dictionary keeps only non-coordinate semantics
            return _ReducedDictionary(kept, self.input_terms, n, self.input_dim)
        return BasisDictionary(kept, self.input_terms, n, self.input_dim)


class _ReducedDictionary(BasisDictionary):
    """Dictionary produced by filtering that may lack some coordinates."""

    def __post_init__(self):
        if not self.state_terms:
            raise DictionaryError("dictionary is empty after filtering")

    def evaluate_state(self, s) -> np.ndarray:
        z = np.asarray(s, dtype=float)
        if z.shape[0] != self.state_dim:
            raise DictionaryError(
                f"state has length {z.shape[0]}, expected {self.state_dim}")
        out = np.empty((self.n_state_terms,) + z.shape[1:])
        for i, t in enumerate(self.state_terms):
            out[i] = t(z)
        return out


def evaluate_state_basis(dictionary: BasisDictionary, s) -> np.ndarray:
    return dictionary.evaluate_state(s)


@dataclass
class EquilibriumReport:
    equilibrium: np.ndarray
    all_vanish: bool
    nonvanishing_indices: List[int]
    values: np.ndarray


def check_equilibrium_consistency(dictionary: BasisDictionary, equilibria,
                                  tol: float = DEFAULT_VANISH_TOL):
    """Report which observables fail to vanish at each equilibrium.

    An equilibrium of the state dynamics maps to an equilibrium of the lifted
    linear dynamics only when every observable is zero there.
    """
    reports = []
    for se in equilibria:
        se = np.asarray(se, dtype=float)
        vals = dictionary.evaluate_state(se)
        bad = [int(i) for i in np.flatnonzero(np.abs(vals) > tol)]
        reports.append(EquilibriumReport(se, not bad, bad, vals))
    return reports


@dataclass
class FilterResult:
    dictionary: BasisDictionary
    removed: List[int]
    rationale: List[str]
    flagged_states: List[int] = field(default_factory=list)


def filter_redundant_terms(dictionary: BasisDictionary, equilibria,
                           tol: float = DEFAULT_VANISH_TOL,
                           allow_state_removal: bool = False) -> FilterResult:
    """Drop observables that are forced to zero weight by an equilibrium.

    If at some equilibrium exactly one observable ``g_k`` is nonzero, an
    exact linear model must map ``g_k(s_e)`` to zero, so every column entry
    multiplying ``g_k`` is zero and the term carries no information. The
    term is removed and the scan repeats until no equilibrium isolates a
    single nonvanishing term.

    Coordinate terms (index < N) are only flagged unless
    ``allow_state_removal`` is set. ``removed`` holds indices into the
    original dictionary.
    """
    alive = list(range(dictionary.n_state_terms))
    removed, rationale, flagged = [], [], []
    eqs = [np.asarray(e, dtype=float) for e in equilibria]
    values = [dictionary.evaluate_state(e) for e in eqs]
    changed = True
    while changed:
        changed = False
        for se, vals in zip(eqs, values):
            nz = [i for i in alive if abs(vals[i]) > tol]
            if len(nz) != 1:
                continue
            k = nz[0]
            label = dictionary.state_terms[k].label
            if k < dictionary.state_dim and not allow_state_removal:
                if k not in flagged:
                    flagged.append(k)
                    log.info("coordinate %s is redundant at %s (kept)",
                             label, se.tolist())
                continue
            alive.remove(k)
            removed.append(k)
            rationale.append(
                f"{label} is the only nonvanishing term at "
                f"s_e={se.tolist()} (value {vals[k]:.6g})")
            changed = True
            break
    if not alive:
        raise DictionaryError("dictionary is empty after filtering")
    return FilterResult(dictionary.without(removed), removed, rationale,
                        flagged)


PENDULUM_6 = ("x0", "x1", "sin(x0)", "cos(x0)*x1", "sin(x0)*cos(x0)",
              "sin(x0)*x1^2")
PENDULUM_LQR_8 = ("x0", "x1", "x0^2", "x1^2", "sin(x0)", "sin(x1)",
                  "sin(x0)*x1", "sin(x1)*x0")


def pendulum_dictionary(input_dim: int = 0) -> BasisDictionary:
    """Six-term dictionary used for the uncontrolled pendulum."""
    return BasisDictionary.from_labels(PENDULUM_6, 2, input_dim)


def pendulum_lqr_dictionary(input_dim: int = 1) -> BasisDictionary:
    """Eight-term dictionary used for pendulum LQR and certification."""
    return BasisDictionary.from_labels(PENDULUM_LQR_8, 2, input_dim)
