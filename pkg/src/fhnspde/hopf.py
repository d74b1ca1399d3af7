"""Structure-group combinatorics: coproduct, characters, recentering action.

The coproduct maps a symbol into (symbol) x (plus-algebra), where the
plus-algebra is the free commutative algebra on monomials ``X^k`` and
recentering functionals ``J_k(tau)`` (one for each symbol ``tau`` outside the
polynomial sector and each multiindex ``k`` with ``|k|_s < |tau| + 2`` in the
exact lexicographic order -- the kappa offset decides the boundary cases).

Recursion::

    D(One)  = One x 1
    D(Xi)   = Xi x 1
    D(X^k)  = sum_{l <= k} C(k, l) X^l x X^{k-l}
    D(st)   = D(s) D(t)
    D(I t)  = (I x id) D(t) + sum_{l, m} X^l/l! x X^m/m! J_{l+m}(t)
    D(E t)  = (E x id) D(t)

with terms whose left leg is annihilated (``I`` of a polynomial, ``E`` outside
its sector) dropped.  A character ``g`` assigns scalars to the ``J_k(tau)``
generators and evaluates monomials at a point; the group acts by
``Gamma_g = (id x g) D``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping, Optional, Union

from .symbols import (
    ONE,
    XI,
    Homogeneity,
    Scaling,
    StructureError,
    Symbol,
    display_name,
    ext,
    homogeneity,
    integral,
    monomial,
    product,
    to_text,
)

__all__ = [
    "JSymbol",
    "PlusElem",
    "PLUS_ONE",
    "TensorSum",
    "coproduct",
    "plus_homogeneity",
    "Character",
    "group_action",
    "is_primitive_for_group",
]


# ---------------------------------------------------------------------------
# Plus-algebra elements
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JSymbol:
    """Recentering functional ``J_k(tau)``: k-th recentering of ``I(tau)``."""

    k: tuple[int, ...]
    tau: Symbol

    def sort_key(self) -> tuple:
        return (self.tau.sort_key(), self.k)

    def text(self) -> str:
        name = display_name(self.tau)
        if all(v == 0 for v in self.k):
            return f"J({name})"
        nz = [(i, n) for i, n in enumerate(self.k) if n]
        if len(nz) == 1 and nz[0][1] == 1:
            return f"J{nz[0][0]}({name})"
        return f"J^{list(self.k)}({name})"


@dataclass(frozen=True)
class PlusElem:
    """Monomial of the plus-algebra: ``X^k * prod J_{k_i}(tau_i)``."""

    k: tuple[int, ...] = ()
    js: tuple[JSymbol, ...] = ()

    def __post_init__(self) -> None:
        if self.k and not any(self.k):
            object.__setattr__(self, "k", ())  # canonical unit monomial
        object.__setattr__(self, "js",
                           tuple(sorted(self.js, key=JSymbol.sort_key)))

    @property
    def is_unit(self) -> bool:
        return not self.js and all(v == 0 for v in self.k)

    def __mul__(self, other: "PlusElem") -> "PlusElem":
        if self.k and other.k:
            if len(self.k) != len(other.k):
                raise StructureError("mixing multiindex lengths")
            k = tuple(a + b for a, b in zip(self.k, other.k))
        else:
            k = self.k or other.k
        return PlusElem(k=k, js=self.js + other.js)

    def sort_key(self) -> tuple:
        return (len(self.js), tuple(j.sort_key() for j in self.js), self.k)

    def text(self) -> str:
        parts = []
        if any(self.k):
            parts.append(to_text(monomial(self.k)))
        parts.extend(j.text() for j in self.js)
        return "*".join(parts) if parts else "1"


PLUS_ONE = PlusElem()


def plus_homogeneity(p: PlusElem, d: int) -> Homogeneity:
    """Exact grading of a plus-algebra monomial.

    ``J_k(tau)`` carries ``|tau| + 2 - |k|_s`` so that the coproduct preserves
    total homogeneity term by term.
    """
    sc = Scaling(d)
    h = Homogeneity(sc.degree(p.k)) if p.k else Homogeneity(0)
    for j in p.js:
        h = h + homogeneity(j.tau, d) + Homogeneity(2 - sc.degree(j.k))
    return h


# ---------------------------------------------------------------------------
# Tensor sums
# ---------------------------------------------------------------------------

class TensorSum:
    """Finite linear combination of ``symbol x plus-elem`` with exact weights."""

    __slots__ = ("terms",)

    def __init__(self, terms: Optional[Mapping[tuple[Symbol, PlusElem],
                                               Fraction]] = None) -> None:
        self.terms: dict[tuple[Symbol, PlusElem], Fraction] = {}
        if terms:
            for key, c in terms.items():
                self._add(key, Fraction(c))

    def _add(self, key: tuple[Symbol, PlusElem], c: Fraction) -> None:
        new = self.terms.get(key, Fraction(0)) + c
        if new:
            self.terms[key] = new
        else:
            self.terms.pop(key, None)

    def __add__(self, other: "TensorSum") -> "TensorSum":
        out = TensorSum(self.terms)
        for key, c in other.terms.items():
            out._add(key, c)
        return out

    def scaled(self, c: Union[int, Fraction]) -> "TensorSum":
        c = Fraction(c)
        if not c:
            return TensorSum()
        return TensorSum({k: v * c for k, v in self.terms.items()})

    def __mul__(self, other: "TensorSum") -> "TensorSum":
        out = TensorSum()
        for (l1, r1), c1 in self.terms.items():
            for (l2, r2), c2 in other.terms.items():
                left = product([l1, l2])
                if left is None:
                    continue
                out._add((left, r1 * r2), c1 * c2)
        return out

    def map_left(self, fn: Callable[[Symbol], Optional[Symbol]]) -> "TensorSum":
        out = TensorSum()
        for (left, right), c in self.terms.items():
            new_left = fn(left)
            if new_left is not None:
                out._add((new_left, right), c)
        return out

    def __eq__(self, other: object) -> bool:
        return isinstance(other, TensorSum) and self.terms == other.terms

    def __len__(self) -> int:
        return len(self.terms)

    def sorted_terms(self) -> list[tuple[Symbol, PlusElem, Fraction]]:
        items = [(l, r, c) for (l, r), c in self.terms.items()]
        items.sort(key=lambda t: (t[1].sort_key(), t[0].sort_key()))
        return items

    def text(self) -> str:
        """Display form, e.g. ``RSVW (x) 1 + RSI (x) J(RSW)``."""
        parts = []
        for left, right, c in self.sorted_terms():
            body = f"{display_name(left)} (x) {right.text()}"
            if c == 1:
                parts.append(body)
            else:
                parts.append(f"{c}*{body}")
        return " + ".join(parts) if parts else "0"

    def __repr__(self) -> str:
        return f"<TensorSum {self.text()}>"


def _tensor(left: Symbol, right: PlusElem = PLUS_ONE,
            c: Union[int, Fraction] = 1) -> TensorSum:
    return TensorSum({(left, right): Fraction(c)})


# ---------------------------------------------------------------------------
# Coproduct
# ---------------------------------------------------------------------------

def _multiindices_upto(bound: int, d: int) -> Iterator[tuple[int, ...]]:
    """All multiindices on 1+d coordinates with scaled degree <= bound."""
    if bound < 0:
        return
    for k0 in range(bound // 2 + 1):
        rem = bound - 2 * k0
        for spatial in itertools.product(range(rem + 1), repeat=d):
            if sum(spatial) <= rem:
                yield (k0,) + spatial


def _splits(k: tuple[int, ...]) -> Iterator[tuple[tuple[int, ...],
                                                  tuple[int, ...], int]]:
    """(l, k-l, multinomial C(k,l)) over componentwise l <= k."""
    ranges = [range(v + 1) for v in k]
    for l in itertools.product(*ranges):
        coeff = 1
        for a, b in zip(k, l):
            coeff *= math.comb(a, b)
        yield l, tuple(a - b for a, b in zip(k, l)), coeff


def _factorial(k: tuple[int, ...]) -> int:
    out = 1
    for v in k:
        out *= math.factorial(v)
    return out


def coproduct(tau: Symbol, d: int) -> TensorSum:
    """Structure-group coproduct of a canonical symbol in dimension d."""
    sc = Scaling(d)
    if tau.tag in ("one", "xi"):
        return _tensor(tau)
    if tau.tag == "mono":
        out = TensorSum()
        for l, m, c in _splits(tau.k):
            out._add((monomial(l), PlusElem(k=m)), Fraction(c))
        return out
    if tau.tag == "int":
        child = tau.child
        inner = coproduct(child, d).map_left(integral)
        # recentering tail: J_k(child) survives iff |k|_s < |child| + 2
        bound = homogeneity(child, d) + Homogeneity(2)
        out = inner
        for n in _multiindices_upto(int(bound.r) + 1, d):
            if not (Homogeneity(sc.degree(n)) < bound):
                continue
            j = JSymbol(k=n, tau=child)
            for l, m, c in _splits(n):
                w = Fraction(c, _factorial(n))
                out._add((monomial(l), PlusElem(k=m, js=(j,))), w)
        return out
    if tau.tag == "ext":
        ch = tau.channel
        return coproduct(tau.child, d).map_left(lambda s: ext(ch, s, d))
    if tau.tag == "prod":
        out = _tensor(ONE)
        for f in tau.factors:
            out = out * coproduct(f, d)
        return out
    raise StructureError(f"unknown symbol tag {tau.tag!r}")


def is_primitive_for_group(tau: Symbol, d: int) -> bool:
    """True when ``D(tau) = tau x 1`` (the recentering action is trivial)."""
    return coproduct(tau, d) == _tensor(tau)


# ---------------------------------------------------------------------------
# Characters and the group action
# ---------------------------------------------------------------------------

@dataclass
class Character:
    """Multiplicative functional on the plus-algebra.

    ``j_values`` assigns scalars to recentering generators (unset generators
    default to 0); ``point`` evaluates the polynomial part, with the unit
    convention ``X^0 -> 1`` (``point=None`` keeps only the ``k = 0`` terms).
    Values may be floats or any commutative scalars (e.g. sympy expressions).
    """

    j_values: dict[JSymbol, object] = field(default_factory=dict)
    point: Optional[tuple[float, ...]] = None

    def __call__(self, p: PlusElem) -> object:
        val: object = 1
        if any(p.k):
            if self.point is None:
                return 0
            if len(self.point) != len(p.k):
                raise StructureError("point length does not match multiindex")
            for x, n in zip(self.point, p.k):
                val = val * x ** n
        for j in p.js:
            v = self.j_values.get(j, 0)
            if v == 0:
                return 0
            val = val * v
        return val


def group_action(g: Union[Character, Callable[[PlusElem], object]],
                 tau: Symbol, d: int) -> dict[Symbol, object]:
    """``Gamma_g tau = (id x g) D(tau)`` as a symbol -> coefficient map."""
    out: dict[Symbol, object] = {}
    for (left, right), c in coproduct(tau, d).terms.items():
        v = g(right)
        if v == 0:
            continue
        out[left] = out.get(left, 0) + c * v
    return {s: v for s, v in out.items() if v != 0}
