"""Non-commutative polynomial algebra over operator variables.

Variables are bounded-operator symbols; words (monomials) are ordered
letter sequences, so ``X1*X2 != X2*X1``.  Each variable is either
Hermitian (self-adjoint) or carries an explicit adjoint-partner id, and
the involution ``w -> w†`` reverses a word while swapping partners.
Polynomials are sparse real-coefficient term maps in graded-lex order.

Everything here is immutable after construction and safe to share
across threads; no commutation rewriting is ever applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "Variable",
    "VariableSet",
    "Word",
    "Polynomial",
    "word_concat",
    "word_involution",
]


@dataclass(frozen=True)
class Variable:
    """One operator symbol.

    ``adjoint_id`` equals ``id`` for Hermitian variables and points to the
    partner symbol otherwise.
    """

    id: int
    label: str
    hermitian: bool = True
    adjoint_id: int | None = None

    def __post_init__(self):
        if self.adjoint_id is None:
            object.__setattr__(self, "adjoint_id", self.id)
        if self.hermitian and self.adjoint_id != self.id:
            raise ValueError(f"hermitian variable {self.label} cannot have a distinct adjoint")


@dataclass(frozen=True)
class Word:
    """A monomial: an ordered tuple of variable ids; ``()`` is the identity."""

    letters: tuple[int, ...] = ()

    @property
    def degree(self) -> int:
        return len(self.letters)

    def __mul__(self, other: "Word") -> "Word":
        return Word(self.letters + other.letters)

    def sort_key(self) -> tuple[int, tuple[int, ...]]:
        """Graded-lex key: shorter words first, then lexicographic."""
        return (len(self.letters), self.letters)

    def __str__(self) -> str:
        return "*".join(f"x{i}" for i in self.letters) if self.letters else "1"


IDENTITY = Word()


def word_concat(a: Word, b: Word) -> Word:
    """Concatenate two words; degrees add, order is preserved."""
    return Word(a.letters + b.letters)


class VariableSet:
    """A dense, ordered collection of operator variables.

    Construct via :meth:`hermitian` for self-adjoint symbols or
    :meth:`with_adjoints` for general ones, where variable ``i`` gets an
    adjoint partner with id ``n + i``.
    """

    def __init__(self, variables: list[Variable]):
        ids = [v.id for v in variables]
        if ids != list(range(len(variables))):
            raise ValueError("variable ids must be dense 0..n-1 in order")
        for v in variables:
            if not (0 <= v.adjoint_id < len(variables)):
                raise ValueError(f"adjoint id {v.adjoint_id} of {v.label} out of range")
            if variables[v.adjoint_id].adjoint_id != v.id:
                raise ValueError(f"adjoint pairing of {v.label} is not an involution")
        self.variables = tuple(variables)
        self._adjoint = tuple(v.adjoint_id for v in variables)

    @classmethod
    def hermitian(cls, labels: Iterable[str]) -> "VariableSet":
        return cls([Variable(i, lab) for i, lab in enumerate(labels)])

    @classmethod
    def with_adjoints(cls, labels: Iterable[str]) -> "VariableSet":
        """Non-Hermitian set: for n labels, ids n..2n-1 are the adjoints."""
        labels = list(labels)
        n = len(labels)
        vs = [Variable(i, lab, hermitian=False, adjoint_id=n + i) for i, lab in enumerate(labels)]
        vs += [Variable(n + i, lab + "*", hermitian=False, adjoint_id=i) for i, lab in enumerate(labels)]
        return cls(vs)

    def __len__(self) -> int:
        return len(self.variables)

    @property
    def all_hermitian(self) -> bool:
        return all(v.hermitian for v in self.variables)

    def label(self, i: int) -> str:
        return self.variables[i].label

    def involution(self, w: Word) -> Word:
        """Adjoint word: reversed letters with adjoint partners swapped."""
        return Word(tuple(self._adjoint[i] for i in reversed(w.letters)))

    def moment_class(self, w: Word) -> Word:
        """Canonical representative of {w, w†} under graded-lex order."""
        wd = self.involution(w)
        return w if w.letters <= wd.letters else wd

    # -- polynomial constructors ------------------------------------------

    def one(self) -> "Polynomial":
        return Polynomial(self, {IDENTITY: 1.0})

    def symbol(self, i: int) -> "Polynomial":
        return Polynomial(self, {Word((i,)): 1.0})

    def symbols(self) -> list["Polynomial"]:
        return [self.symbol(i) for i in range(len(self))]

    def render_word(self, w: Word) -> str:
        return "*".join(self.label(i) for i in w.letters) if w.letters else "1"


class Polynomial:
    """Sparse non-commutative polynomial with real coefficients.

    Terms map canonical :class:`Word` objects to nonzero floats; the zero
    polynomial has no terms and degree 0 by convention.  Arithmetic obeys
    ring axioms except commutativity of ``*``, and ``adjoint`` is an
    anti-homomorphism: ``(f*g)† = g†*f†``.
    """

    __slots__ = ("vs", "terms")

    def __init__(self, vs: VariableSet, terms: Mapping[Word, float] | None = None):
        self.vs = vs
        self.terms: dict[Word, float] = {}
        if terms:
            for w, c in terms.items():
                c = float(c)
                if c != 0.0:
                    self.terms[w] = c

    # -- basic queries ------------------------------------------------------

    @property
    def degree(self) -> int:
        return max((w.degree for w in self.terms), default=0)

    def coefficient(self, w: Word) -> float:
        return self.terms.get(w, 0.0)

    def is_zero(self) -> bool:
        return not self.terms

    def is_hermitian(self) -> bool:
        """True when coefficients are invariant under the involution."""
        for w, c in self.terms.items():
            if abs(self.terms.get(self.vs.involution(w), 0.0) - c) > 0.0:
                return False
        return True

    def words(self) -> list[Word]:
        return sorted(self.terms, key=Word.sort_key)

    # -- ring operations ----------------------------------------------------

    def _check_compatible(self, other: "Polynomial"):
        if other.vs is not self.vs:
            raise ValueError("polynomials over different variable sets")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial(self.vs, {IDENTITY: float(other)})
        self._check_compatible(other)
        out = dict(self.terms)
        for w, c in other.terms.items():
            s = out.get(w, 0.0) + c
            if s == 0.0:
                out.pop(w, None)
            else:
                out[w] = s
        return Polynomial(self.vs, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.vs, {w: -c for w, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, Polynomial) else -float(other))

    def __rsub__(self, other):
        return (-self) + float(other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Polynomial(self.vs, {w: c * float(other) for w, c in self.terms.items()})
        self._check_compatible(other)
        out: dict[Word, float] = {}
        for wa, ca in self.terms.items():
            for wb, cb in other.terms.items():
                w = wa * wb
                s = out.get(w, 0.0) + ca * cb
                if s == 0.0:
                    out.pop(w, None)
                else:
                    out[w] = s
        return Polynomial(self.vs, out)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return self * other
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("exponent must be a non-negative integer")
        out = self.vs.one()
        for _ in range(k):
            out = out * self
        return out

    def adjoint(self) -> "Polynomial":
        return Polynomial(self.vs, {self.vs.involution(w): c for w, c in self.terms.items()})

    def __eq__(self, other) -> bool:
        return isinstance(other, Polynomial) and other.vs is self.vs and other.terms == self.terms

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, assignment: Mapping[int, np.ndarray], phi: np.ndarray) -> float:
        """Return ``<phi, p(X) phi>`` for an explicit matrix assignment.

        ``assignment`` maps primary variable ids to square matrices of one
        common dimension; adjoint-partner ids resolve to the transpose.
        Intended as a ground-truth oracle for tests, not a fast path.
        """
        phi = np.asarray(phi, dtype=float)
        d = phi.shape[0]
        mats: dict[int, np.ndarray] = {}
        for i, v in enumerate(self.vs.variables):
            if i in assignment:
                mats[i] = np.asarray(assignment[i], dtype=float)
            elif v.adjoint_id in assignment:
                mats[i] = np.asarray(assignment[v.adjoint_id], dtype=float).T
            else:
                raise ValueError(f"no matrix assigned to variable {v.label}")
            if mats[i].shape != (d, d):
                raise ValueError(f"matrix for {v.label} has shape {mats[i].shape}, expected ({d}, {d})")
        total = 0.0
        for w, c in self.terms.items():
            vec = phi
            for i in reversed(w.letters):
                vec = mats[i] @ vec
            total += c * float(phi @ vec)
        return total

    def evaluate_scalar(self, values: Mapping[int, float]) -> float:
        """Evaluate at a scalar point (1x1 operators); order is immaterial."""
        total = 0.0
        for w, c in self.terms.items():
            term = c
            for i in w.letters:
                term *= values[i]
            total += term
        return total

    # -- rendering ----------------------------------------------------------

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for w in self.words():
            c = self.terms[w]
            mono = self.vs.render_word(w)
            body = f"{abs(c)!r}" if w.degree == 0 else f"{abs(c)!r}*{mono}"
            if not parts:
                parts.append(body if c > 0 else f"-{body}")
            else:
                parts.append(f"{'+' if c > 0 else '-'} {body}")
        return " ".join(parts)

    def __repr__(self) -> str:
        return f"Polynomial({self})"


def word_involution(vs: VariableSet, w: Word) -> Word:
    """Module-level alias for :meth:`VariableSet.involution`."""
    return vs.involution(w)
