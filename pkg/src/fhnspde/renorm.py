"""Renormalisation group on symbols and the renormalised nonlinearity.

The group is generated by extraction operators ``L_tau`` indexed by two
families of divergent patterns:

* leg pairs ``tau`` over the alphabet {I(Xi), E_i(I(Xi))} (the RSV family),
* composites ``sigma = I(tau1) * tau2`` with ``tau1, tau2`` leg pairs.

``L_tau`` extracts the pattern wherever it sits: a pair is removed from the
legs of the root product or, recursively, from the argument of any ``I`` (an
``I`` left with purely polynomial content is annihilated); a composite is
matched by choosing an ``I(P)`` factor containing ``tau1`` among the legs of
``P`` and ``tau2`` among the remaining root legs, contracting both and
reattaching the leftover of ``P`` to the root.  Every admissible placement
contributes its multiset count.  A renormalisation map is

    M = exp( - sum_tau C(tau) L_tau )

with scalar constants ``C(tau)``; the series terminates because every
extraction strictly lowers the noise count.

The second half of the module derives the renormalised equation: it expands
the abstract fixed point of a cubic nonlinearity ``F(u, v_1..v_n)`` on the
symbol basis, applies ``M - id``, collects the coefficients of the symbols of
non-positive homogeneity, and factors them through counterterms
``F - c0 - c1*u - sum_i c2_i*v_i`` whenever that is exactly possible,
reporting the obstruction terms when it is not.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Iterator, Mapping, Optional, Sequence, Union

import sympy

from .symbols import (
    ONE,
    XI,
    Homogeneity,
    Symbol,
    display_name,
    ext,
    homogeneity,
    integral,
    product,
    to_text,
    x_power,
)

__all__ = [
    "UnsupportedSymbolError",
    "Combo",
    "pair_family",
    "composite_family",
    "divergent_patterns",
    "constant_symbol",
    "generator_action",
    "RenormMap",
    "ChaosZero",
    "classify_chaos_zero",
    "CubicPolynomial",
    "FixedPointExpansion",
    "fixed_point_expansion",
    "RenormalizedEquation",
    "renormalized_nonlinearity",
]


class UnsupportedSymbolError(ValueError):
    """Raised when asked to extract a pattern outside the generator families."""


# ---------------------------------------------------------------------------
# Linear combinations of symbols with sympy scalars
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _pair_product(a: Symbol, b: Symbol) -> Optional[Symbol]:
    # the same factor pairs recur across powers and derivation layers
    return product([a, b])


class Combo:
    """Finite linear combination of symbols with commutative scalar weights."""

    __slots__ = ("terms",)

    def __init__(self, terms: Optional[Mapping[Symbol, object]] = None) -> None:
        self.terms: dict[Symbol, sympy.Expr] = {}
        if terms:
            for sym, c in terms.items():
                self.add(sym, c)

    def add(self, sym: Symbol, c: object) -> None:
        # structural accumulation only; a coefficient that cancels in a
        # non-structural way survives until expanded() normalises it
        c = self.terms.get(sym, sympy.Integer(0)) + sympy.sympify(c)
        if c == 0:
            self.terms.pop(sym, None)
        else:
            self.terms[sym] = c

    def expanded(self) -> "Combo":
        """Normal form: expanded coefficients, exact zeros dropped."""
        out = Combo()
        for sym, c in self.terms.items():
            c = sympy.expand(c)
            if c != 0:
                out.terms[sym] = c
        return out

    def __add__(self, other: "Combo") -> "Combo":
        out = Combo(self.terms)
        for sym, c in other.terms.items():
            out.add(sym, c)
        return out

    def scaled(self, c: object) -> "Combo":
        c = sympy.sympify(c)
        if c == 0:
            return Combo()
        return Combo({s: v * c for s, v in self.terms.items()})

    def __mul__(self, other: "Combo") -> "Combo":
        out = Combo()
        for s1, c1 in self.terms.items():
            for s2, c2 in other.terms.items():
                p = _pair_product(s1, s2)
                if p is not None:
                    out.add(p, c1 * c2)
        return out

    def power(self, n: int) -> "Combo":
        out = Combo({ONE: 1})
        for _ in range(n):
            out = out * self
        return out

    def truncated(self, d: int, cutoff: Homogeneity) -> "Combo":
        """Restriction to the terms of homogeneity <= cutoff."""
        out = Combo()
        for sym, c in self.terms.items():
            if homogeneity(sym, d) <= cutoff:
                out.terms[sym] = c
        return out

    def coeff(self, sym: Symbol) -> sympy.Expr:
        return self.terms.get(sym, sympy.Integer(0))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Combo):
            return NotImplemented
        keys = set(self.terms) | set(other.terms)
        return all(sympy.expand(self.coeff(k) - other.coeff(k)) == 0
                   for k in keys)

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self) -> Iterator[tuple[Symbol, sympy.Expr]]:
        return iter(sorted(self.terms.items(),
                           key=lambda t: t[0].sort_key()))

    def text(self) -> str:
        parts = []
        for sym, c in self:
            name = display_name(sym)
            if c == 1:
                parts.append(name)
            elif c == -1:
                parts.append(f"-{name}")
            else:
                cs = str(c)
                if c.is_Add:
                    cs = f"({cs})"
                parts.append(f"{cs}*{name}")
        if not parts:
            return "0"
        return " + ".join(parts).replace("+ -", "- ")

    def __repr__(self) -> str:
        return f"<Combo {self.text()}>"


# ---------------------------------------------------------------------------
# Generator families
# ---------------------------------------------------------------------------

_PLAIN = ("plain",)


def _leg_type(sym: Symbol) -> Optional[tuple]:
    """Atom classification: I(Xi) -> plain leg, E_ch(I(Xi)) -> decorated leg."""
    if sym.tag == "int" and sym.child.tag == "xi":
        return _PLAIN
    if (sym.tag == "ext" and sym.child.tag == "int"
            and sym.child.child.tag == "xi"):
        return ("deco", sym.channel)
    return None


def _leg_symbol(t: tuple, d: int) -> Symbol:
    rsi = integral(XI)
    if t == _PLAIN:
        return rsi
    sym = ext(t[1], rsi, d)
    if sym is None:
        raise UnsupportedSymbolError(
            f"decorated leg not admissible in dimension {d}")
    return sym


def _leg_alphabet(d: int, n_channels: int) -> list[tuple]:
    return [_PLAIN] + [("deco", ch) for ch in range(1, n_channels + 1)]


def pair_family(d: int, n_channels: int = 0) -> list[Symbol]:
    """Leg pairs over {I(Xi)} and the decorated legs (3 members for n = 1)."""
    out = []
    for combo in itertools.combinations_with_replacement(
            _leg_alphabet(d, n_channels), 2):
        out.append(product([_leg_symbol(t, d) for t in combo]))
    return out


def composite_family(d: int, n_channels: int = 0) -> list[Symbol]:
    """Composites I(pair1)*pair2 over the pair family (9 members for n = 1)."""
    pairs = pair_family(d, n_channels)
    return [product([integral(p1), p2]) for p1 in pairs for p2 in pairs]


def divergent_patterns(d: int, n_channels: int = 0) -> list[Symbol]:
    """Patterns whose chaos-0 contraction diverges as the mollifier is removed.

    The undecorated pair always does; the undecorated composite only in three
    dimensions (its contraction is logarithmic there, bounded in two).
    """
    out = [pat for pat in pair_family(d, n_channels)
           if classify_chaos_zero(pat, d).divergent]
    out += [pat for pat in composite_family(d, n_channels)
            if classify_chaos_zero(pat, d).divergent]
    return out


def _pattern_sig(pattern: Symbol):
    """(kind, leg counters) of a generator pattern; raises if unsupported."""
    factors = list(pattern.iter_factors())
    types = [_leg_type(f) for f in factors]
    if len(factors) == 2 and all(t is not None for t in types):
        return ("pair", Counter(types))
    deep = [f for f, t in zip(factors, types) if t is None]
    legs = [t for t in types if t is not None]
    if (len(deep) == 1 and deep[0].tag == "int" and len(legs) == 2):
        inner = [_leg_type(f) for f in deep[0].child.iter_factors()]
        if len(inner) == 2 and all(t is not None for t in inner):
            return ("composite", Counter(inner), Counter(legs))
    raise UnsupportedSymbolError(
        f"no extraction rule for pattern {to_text(pattern)}")


def constant_symbol(pattern: Symbol) -> sympy.Symbol:
    """Conventional scalar name for a pattern's constant.

    Pairs: C1 with one prime per decorated leg (C1, C1p, C1pp).  Composites:
    C2 with primes counting inner then outer decorations; the undecorated
    composite is plain C2.  Multi-channel patterns fall back to an explicit
    bracketed name.
    """
    sig = _pattern_sig(pattern)
    if sig[0] == "pair":
        chans = sorted(ch for t, n in sig[1].items() if t != _PLAIN
                       for ch in [t[1]] * n)
        if all(ch == 1 for ch in chans):
            return sympy.Symbol("C1" + "p" * len(chans))
    else:
        inner = sorted(ch for t, n in sig[1].items() if t != _PLAIN
                       for ch in [t[1]] * n)
        outer = sorted(ch for t, n in sig[2].items() if t != _PLAIN
                       for ch in [t[1]] * n)
        if all(ch == 1 for ch in inner + outer):
            return sympy.Symbol("C2" + "p" * len(inner) + "q" * len(outer))
    return sympy.Symbol(f"C[{to_text(pattern)}]")


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------

def _multiset_ways(have: Counter, need: Counter) -> int:
    ways = 1
    for t, n in need.items():
        ways *= math.comb(have.get(t, 0), n)
        if ways == 0:
            return 0
    return ways


def _remove_legs(factors: Sequence[Symbol], need: Counter) -> list[Symbol]:
    left = Counter(need)
    out = []
    for f in factors:
        t = _leg_type(f)
        if t is not None and left.get(t, 0) > 0:
            left[t] -= 1
            continue
        out.append(f)
    return out


def _extract(sig, sym: Symbol, d: int) -> Combo:
    out = Combo()
    factors = list(sym.iter_factors())
    legs_have = Counter(t for f in factors
                        if (t := _leg_type(f)) is not None)

    if sig[0] == "pair":
        need = sig[1]
        ways = _multiset_ways(legs_have, need)
        if ways:
            rest = _remove_legs(factors, need)
            out.add(product(rest) if rest else ONE, ways)
    else:
        need_in, need_out = sig[1], sig[2]
        for idx, f in enumerate(factors):
            if f.tag != "int":
                continue
            inner_factors = list(f.child.iter_factors())
            inner_have = Counter(t for g in inner_factors
                                 if (t := _leg_type(g)) is not None)
            ways1 = _multiset_ways(inner_have, need_in)
            if not ways1:
                continue
            others = factors[:idx] + factors[idx + 1:]
            other_legs = Counter(t for g in others
                                 if (t := _leg_type(g)) is not None)
            ways2 = _multiset_ways(other_legs, need_out)
            if not ways2:
                continue
            leftover = _remove_legs(inner_factors, need_in)
            rest = _remove_legs(others, need_out) + leftover
            out.add(product(rest) if rest else ONE, ways1 * ways2)

    # recurse through integration and decoration edges, position by position
    for idx, f in enumerate(factors):
        if f.tag not in ("int", "ext"):
            continue
        inner = _extract(sig, f.child, d)
        for s, c in inner.terms.items():
            nf = integral(s) if f.tag == "int" else ext(f.channel, s, d)
            if nf is None:
                continue
            rest = factors[:idx] + [nf] + factors[idx + 1:]
            p = product(rest)
            if p is not None:
                out.add(p, c)
    return out


def generator_action(pattern: Symbol, sym: Symbol, d: int) -> Combo:
    """``L_pattern`` applied to a symbol: all extractions with their counts."""
    return _extract(_pattern_sig(pattern), sym, d)


class RenormMap:
    """``M = exp(-sum C(tau) L_tau)`` for a constants assignment tau -> C."""

    def __init__(self, constants: Mapping[Symbol, object], d: int) -> None:
        self.d = d
        self.generators = [(_pattern_sig(pat), sympy.sympify(c))
                           for pat, c in constants.items()
                           if sympy.sympify(c) != 0]

    def _derivation(self, combo: Combo) -> Combo:
        out = Combo()
        for sym, w in combo.terms.items():
            for sig, c in self.generators:
                out = out + _extract(sig, sym, self.d).scaled(-c * w)
        return out

    def apply(self, x: Union[Symbol, Combo]) -> Combo:
        combo = Combo({x: 1}) if isinstance(x, Symbol) else x
        total = Combo(combo.terms)
        layer = combo
        k = 1
        while True:
            layer = self._derivation(layer).scaled(sympy.Rational(1, k))
            if not layer.terms:
                return total.expanded()
            total = total + layer
            k += 1


# ---------------------------------------------------------------------------
# Chaos-0 classification of the pattern contractions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChaosZero:
    """Zeroth-chaos contraction of a pattern: value, divergence, rate."""

    expr: str
    divergent: bool
    rate: str


def _deco_count(t: tuple) -> int:
    return 0 if t == _PLAIN else 1


def classify_chaos_zero(pattern: Symbol, d: int) -> ChaosZero:
    """Closed form of the pattern's chaos-0 constant and its small-scale order.

    A pair with m decorated legs contracts to ``Qm(0)``; only ``Q0(0)``
    diverges (order 1/eps for d = 3, log(1/eps) for d = 2).  A composite
    contracts through its two leg pairings into kernel integrals ``Iij``;
    only ``I00`` diverges, logarithmically and only for d = 3.
    """
    sig = _pattern_sig(pattern)
    if sig[0] == "pair":
        m = sum(_deco_count(t) * n for t, n in sig[1].items())
        if m == 0:
            rate = "eps^-1" if d == 3 else "log(1/eps)"
            return ChaosZero("Q0(0)", True, rate)
        return ChaosZero(f"Q{m}(0)", False, "O(1)")
    inner = sorted(itertools.chain.from_iterable(
        [_deco_count(t)] * n for t, n in sig[1].items()))
    outer = sorted(itertools.chain.from_iterable(
        [_deco_count(t)] * n for t, n in sig[2].items()))
    a1, a2 = inner
    b1, b2 = outer
    pairings = sorted([tuple(sorted((a1 + b1, a2 + b2))),
                       tuple(sorted((a1 + b2, a2 + b1)))])
    if pairings[0] == pairings[1]:
        i, j = pairings[0]
        expr = f"2*I{i}{j}"
    else:
        expr = " + ".join(f"I{i}{j}" for i, j in pairings)
    divergent = d == 3 and (0, 0) in pairings
    return ChaosZero(expr, divergent, "log(1/eps)" if divergent else "O(1)")


# ---------------------------------------------------------------------------
# Cubic nonlinearities
# ---------------------------------------------------------------------------

U_SYM = sympy.Symbol("u")


def v_symbols(n_channels: int) -> tuple[sympy.Symbol, ...]:
    return tuple(sympy.Symbol(f"v{i}") for i in range(1, n_channels + 1))


@dataclass(frozen=True)
class CubicPolynomial:
    """Polynomial nonlinearity ``F(u, v_1..v_n)`` of total degree at most 3."""

    expr: sympy.Expr
    n_channels: int = 1

    def __post_init__(self) -> None:
        expr = sympy.expand(sympy.sympify(self.expr))
        object.__setattr__(self, "expr", expr)
        gens = (U_SYM, *v_symbols(self.n_channels))
        stray = {s for s in expr.free_symbols
                 if s.name.startswith(("u", "v")) and s not in gens
                 and (s.name == "u" or s.name[1:].isdigit())}
        if stray:
            raise ValueError(
                f"variables {sorted(map(str, stray))} outside the declared "
                f"{self.n_channels} slow channel(s)")
        try:
            poly = sympy.Poly(expr, *gens)
        except sympy.PolynomialError as exc:
            raise ValueError(f"not polynomial in (u, v): {exc}") from None
        if expr != 0 and poly.total_degree() > 3:
            raise ValueError("nonlinearity must have total degree <= 3")

    @property
    def vs(self) -> tuple[sympy.Symbol, ...]:
        return v_symbols(self.n_channels)

    def coefficient(self, p: int, q: Sequence[int] = ()) -> sympy.Expr:
        """Coefficient of the exact monomial ``u^p * v1^q1 * ...``."""
        exps = (p,) + tuple(q) + (0,) * (self.n_channels - len(tuple(q)))
        poly = sympy.Poly(self.expr, U_SYM, *self.vs)
        return poly.coeff_monomial(
            sympy.prod(g ** e for g, e in zip((U_SYM, *self.vs), exps)))

    @property
    def gamma1(self) -> sympy.Expr:
        return self.coefficient(3)

    @property
    def beta1(self) -> sympy.Expr:
        return self.coefficient(2)

    def gamma2(self, i: int = 1) -> sympy.Expr:
        q = [0] * self.n_channels
        q[i - 1] = 1
        return self.coefficient(2, q)

    def __call__(self, u, v=()):
        subs = {U_SYM: u}
        subs.update(dict(zip(self.vs, v)))
        return self.expr.subs(subs)

    def text(self) -> str:
        return str(self.expr)

    @classmethod
    def standard_fhn(cls) -> "CubicPolynomial":
        u, (v1,) = U_SYM, v_symbols(1)
        return cls(u - u ** 3 - v1, 1)


# ---------------------------------------------------------------------------
# Fixed-point expansion
# ---------------------------------------------------------------------------

def _family_trees(d: int, n_channels: int):
    """Deterministic leg triples and pairs (as symbols) for the expansion."""
    legs = _leg_alphabet(d, n_channels)
    triples = [product([_leg_symbol(t, d) for t in c])
               for c in itertools.combinations_with_replacement(legs, 3)]
    pairs = [product([_leg_symbol(t, d) for t in c])
             for c in itertools.combinations_with_replacement(legs, 2)]
    return triples, pairs


@dataclass
class FixedPointExpansion:
    """First-order symbol expansions of the fixed-point pair (U, V_1..V_n).

    ``U = RSI + phi*One + sum_i a_i I(w_i) + sum_j b_j I(p_j) + <grad phi, X>``
    over the leg triples ``w_i`` and pairs ``p_j``; each slow channel mirrors
    the shape with its decorated leading leg, scalar offset ``psi``, and
    opaque hatted coefficients (the slow-kernel convolutions of the fast
    ones).  Scalars are sympy expressions in the local function values.
    """

    d: int
    n_channels: int
    F: CubicPolynomial
    u_combo: Combo
    v_combos: tuple[Combo, ...]
    a: dict[Symbol, sympy.Expr]
    b: dict[Symbol, sympy.Expr]
    phi: sympy.Symbol
    psi: tuple[sympy.Symbol, ...]
    hatted: tuple[sympy.Symbol, ...]

    def substituted(self, cutoff: Optional[Homogeneity] = None) -> Combo:
        """``F(U, V...)`` expanded on the symbol basis.

        With ``cutoff`` the result is restricted to homogeneities <= cutoff;
        partial products are pruned against the most negative homogeneity the
        remaining factors could still contribute, so the restriction is exact.
        """
        poly = sympy.Poly(self.F.expr, U_SYM, *self.F.vs)
        out = Combo()
        for exps, coeff in poly.terms():
            combos = [self.u_combo] * exps[0]
            for vi, e in enumerate(exps[1:]):
                combos += [self.v_combos[vi]] * e
            term = Combo({ONE: coeff})
            if cutoff is None:
                for f in combos:
                    term = term * f
            else:
                mins = [min(homogeneity(s, self.d) for s in f.terms)
                        for f in combos]
                for i, f in enumerate(combos):
                    room = cutoff
                    for m in mins[i + 1:]:
                        room = room - m
                    term = (term * f).truncated(self.d, room)
            out = out + term
        return out.expanded()


def fixed_point_expansion(F: CubicPolynomial, d: int,
                          n_channels: Optional[int] = None
                          ) -> FixedPointExpansion:
    """Read the expansion coefficients off the nonlinearity.

    The triple coefficients ``a_i`` are the cubic coefficients of matching
    leg signature; the pair coefficients ``b_j`` collect the quadratic
    coefficients plus the first-order shifts by the local values (phi, psi).
    Both are obtained by substituting the first-order proxies
    ``u -> RSI + phi``, ``v_i -> E_i(RSI) + psi_i`` and collecting.
    """
    if n_channels is None:
        n_channels = F.n_channels
    rsi = integral(XI)
    phi = sympy.Symbol("phi")
    psi = tuple(sympy.Symbol(f"psi{i}") for i in range(1, n_channels + 1))
    triples, pairs = _family_trees(d, n_channels)

    proxy_u = Combo({rsi: 1, ONE: phi})
    proxy_vs = [Combo({ext(i + 1, rsi, d): 1, ONE: psi[i]})
                for i in range(n_channels)]
    poly = sympy.Poly(F.expr, U_SYM, *F.vs)
    first_order = Combo()
    for exps, coeff in poly.terms():
        term = Combo({ONE: coeff})
        term = term * proxy_u.power(exps[0])
        for vi, e in enumerate(exps[1:]):
            term = term * proxy_vs[vi].power(e)
        first_order = first_order + term
    first_order = first_order.expanded()

    a = {w: first_order.coeff(w) for w in triples}
    b = {p: first_order.coeff(p) for p in pairs}

    grad_u = [sympy.Symbol(f"dphi{i}") for i in range(d + 1)]
    u_combo = Combo({rsi: 1, ONE: phi})
    for w, aw in a.items():
        if aw != 0:
            u_combo.add(integral(w), aw)
    for p, bp in b.items():
        if bp != 0:
            u_combo.add(integral(p), bp)
    for i in range(d + 1):
        u_combo.add(x_power(i, d), grad_u[i])

    hatted: list[sympy.Symbol] = []
    v_combos = []
    for ch in range(1, n_channels + 1):
        tag = "" if n_channels == 1 else str(ch)
        vc = Combo({ext(ch, rsi, d): 1, ONE: psi[ch - 1]})
        for t_idx, w in enumerate(triples, start=1):
            s = sympy.Symbol(f"ah{tag}{t_idx}")
            hatted.append(s)
            vc.add(integral(w), s)
        for p_idx, p in enumerate(pairs, start=1):
            s = sympy.Symbol(f"bh{tag}{p_idx}")
            hatted.append(s)
            vc.add(integral(p), s)
        for i in range(d + 1):
            vc.add(x_power(i, d), sympy.Symbol(f"dpsi{tag}_{i}"))
        v_combos.append(vc)

    return FixedPointExpansion(
        d=d, n_channels=n_channels, F=F, u_combo=u_combo,
        v_combos=tuple(v_combos), a=a, b=b, phi=phi, psi=psi,
        hatted=tuple(hatted))


# ---------------------------------------------------------------------------
# Renormalised equation
# ---------------------------------------------------------------------------

@dataclass
class RenormalizedEquation:
    """Outcome of pushing the map through the fixed-point expansion.

    ``c0, c1, c2`` are the counterterms with ``Fhat = F - c0 - c1 u - c2.v``;
    ``proportional`` records whether they factor as
    ``(beta1/3, gamma1, gamma2_i/3) * C_eps`` with the single constant
    ``C_eps = 3 C1 + 9 gamma1 C2``; ``obstruction`` lists the residual terms
    (coefficient, target symbol) that no counterterm of that shape removes --
    empty exactly when the factorisation is complete.
    """

    F: CubicPolynomial
    d: int
    constants: dict[Symbol, sympy.Expr]
    c0: sympy.Expr
    c1: sympy.Expr
    c2: tuple[sympy.Expr, ...]
    C_eps: sympy.Expr
    proportional: bool
    factorized: bool
    obstruction: list[tuple[sympy.Expr, Symbol]]
    totals: dict[Symbol, sympy.Expr]
    Fhat: sympy.Expr

    def fhat_text(self) -> str:
        return str(sympy.expand(self.Fhat))


def default_constants(d: int, n_channels: int = 1,
                      symbolic: bool = True,
                      values: Optional[Mapping[str, object]] = None
                      ) -> dict[Symbol, sympy.Expr]:
    """Constants for the divergent patterns only (C1; plus C2 when d = 3)."""
    out: dict[Symbol, sympy.Expr] = {}
    for pat in divergent_patterns(d, n_channels):
        name = constant_symbol(pat)
        if symbolic:
            out[pat] = name
        else:
            out[pat] = sympy.sympify(values[str(name)])
    return out


def renormalized_nonlinearity(F: CubicPolynomial, d: int,
                              constants: Optional[Mapping[Symbol, object]]
                              = None) -> RenormalizedEquation:
    """Derive the counterterms of the renormalised equation for ``F``.

    Applies ``M - id`` to the expanded fixed point, collects the coefficients
    of the non-positive-homogeneity symbols (One, the leading leg, and the
    decorated leading legs), and splits each into a part generated by
    counterterms ``c0 + c1 u + c2.v`` and an obstruction part carrying the
    opaque slow-channel (hatted) coefficients.
    """
    n = F.n_channels
    if constants is None:
        constants = default_constants(d, n)
    constants = {pat: sympy.sympify(c) for pat, c in constants.items()}
    fp = fixed_point_expansion(F, d, n)
    # every extraction pattern has strictly negative homogeneity, so M - id
    # can only raise it: the sector at or below zero of (M - id)(G) is
    # computed exactly from the same sector of G
    G = fp.substituted(Homogeneity(0))
    M = RenormMap(constants, d)
    delta = (M.apply(G) + G.scaled(-1)).expanded()

    rsi = integral(XI)
    targets = [ONE, rsi] + [ext(i, rsi, d) for i in range(1, n + 1)]
    totals = {t: delta.coeff(t) for t in targets}
    for sym, c in delta.terms.items():
        if sym not in targets:
            h = homogeneity(sym, d)
            if h < Homogeneity(0) or h == Homogeneity(0):
                raise AssertionError(
                    f"unexpected non-positive symbol {to_text(sym)} "
                    f"in the renormalised expansion")

    kill_hats = {h: 0 for h in fp.hatted}
    pure = {t: sympy.expand(c.subs(kill_hats)) for t, c in totals.items()}
    obstruction = []
    for t, c in totals.items():
        res = sympy.expand(c - pure[t])
        if res != 0:
            obstruction.append((res, t))

    c1 = sympy.expand(-pure[rsi])
    c2 = tuple(sympy.expand(-pure[ext(i, rsi, d)]) for i in range(1, n + 1))
    zero_local = {fp.phi: 0, **{p: 0 for p in fp.psi}}
    c0 = sympy.expand(-pure[ONE].subs(zero_local))
    residual = sympy.expand(pure[ONE] + c0 + c1 * fp.phi
                            + sum(ci * pi for ci, pi in zip(c2, fp.psi)))
    factorized = residual == 0 and not obstruction
    if residual != 0:
        # leftover local dependence that no constant-coefficient counterterm
        # reproduces; report it against the unit symbol
        obstruction.append((sympy.expand(-residual), ONE))

    pair0 = product([rsi, rsi])
    C1 = constants.get(pair0, sympy.Integer(0))
    comp0 = product([integral(pair0), pair0])
    C2 = constants.get(comp0, sympy.Integer(0))
    gamma1 = F.gamma1
    C_eps = sympy.expand(3 * C1 + 9 * gamma1 * C2)
    proportional = (
        sympy.expand(c0 - F.beta1 * C_eps / 3) == 0
        and sympy.expand(c1 - gamma1 * C_eps) == 0
        and all(sympy.expand(ci - F.gamma2(i + 1) * C_eps / 3) == 0
                for i, ci in enumerate(c2)))

    Fhat = F.expr - c0 - c1 * U_SYM - sum(
        ci * vi for ci, vi in zip(c2, F.vs))
    return RenormalizedEquation(
        F=F, d=d, constants=dict(constants), c0=c0, c1=c1, c2=c2,
        C_eps=C_eps, proportional=proportional, factorized=factorized,
        obstruction=obstruction, totals=totals, Fhat=sympy.expand(Fhat))
