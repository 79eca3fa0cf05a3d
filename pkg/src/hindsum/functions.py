"""Functions on products of tori, with exact integration where it exists.

A FunctionSpec is an expression tree of constants, arc and box indicators,
characters e(m.x), sums, products and shifts.  Trees built from constants and
indicators have a normal form: a rational combination of products of
per-coordinate indicators of finite unions of intervals.  Integrating a
coordinate out of that form is multiplication by a length, which gives exact
conditional expectations onto coordinate factors.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .nilsystem import TorusBox

__all__ = [
    "NotExact",
    "ArcSet",
    "FunctionSpec",
    "Const",
    "Indicator",
    "Box",
    "Char",
    "Sum",
    "Prod",
    "Shifted",
    "Term",
    "normal_form",
    "from_terms",
    "integrate",
    "function_from_json",
]


class NotExact(ValueError):
    """The function has no exact normal form (characters or shifts present)."""


@dataclass(frozen=True)
class ArcSet:
    """Finite union of disjoint intervals [lo, hi) inside [0, 1], sorted."""

    intervals: tuple[tuple[Fraction, Fraction], ...]

    @classmethod
    def arc(cls, start, length) -> ArcSet:
        a, l = Fraction(start) % 1, Fraction(length)
        if l >= 1:
            return cls.full()
        if l <= 0:
            return cls(())
        if a + l <= 1:
            return cls(((a, a + l),))
        return cls(((Fraction(0), a + l - 1), (a, Fraction(1))))

    @classmethod
    def full(cls) -> ArcSet:
        return cls(((Fraction(0), Fraction(1)),))

    @classmethod
    def normalize(cls, pieces) -> ArcSet:
        pieces = sorted((Fraction(a), Fraction(b)) for a, b in pieces if b > a)
        out: list[tuple[Fraction, Fraction]] = []
        for a, b in pieces:
            if out and a <= out[-1][1]:
                out[-1] = (out[-1][0], max(out[-1][1], b))
            else:
                out.append((a, b))
        return cls(tuple(out))

    @property
    def length(self) -> Fraction:
        return sum((b - a for a, b in self.intervals), Fraction(0))

    @property
    def is_full(self) -> bool:
        return self.length == 1

    def intersect(self, other: ArcSet) -> ArcSet:
        out = []
        for a, b in self.intervals:
            for c, d in other.intervals:
                lo, hi = max(a, c), min(b, d)
                if lo < hi:
                    out.append((lo, hi))
        return ArcSet.normalize(out)

    def contains(self, x) -> bool:
        x = Fraction(x) % 1
        return any(a <= x < b for a, b in self.intervals)

    def preimage(self, c: int, offset=0) -> ArcSet:
        """{r in [0,1) : c*r + offset mod 1 in self}."""
        offset = Fraction(offset)
        if c == 0:
            return ArcSet.full() if self.contains(offset) else ArcSet(())
        if c < 0:
            mirrored = ArcSet.normalize((1 - b, 1 - a) for a, b in self.intervals)
            return mirrored.preimage(-c, -offset)
        offset %= 1
        out = []
        for a, b in self.intervals:
            for m in range(-1, c + 1):
                lo = (a - offset + m) / c
                hi = (b - offset + m) / c
                lo, hi = max(lo, Fraction(0)), min(hi, Fraction(1))
                if lo < hi:
                    out.append((lo, hi))
        return ArcSet.normalize(out)

    def mask_floats(self, x: np.ndarray) -> np.ndarray:
        x = np.mod(x, 1.0)
        out = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (x >= float(a)) & (x < float(b))
        return out

    def mask_words(self, w: np.ndarray, mode: str, q: int | None = None) -> np.ndarray:
        out = np.zeros(w.shape, dtype=bool)
        for a, b in self.intervals:
            if mode == "floating":
                lo = np.uint64(min(math.floor(a * (1 << 64)), (1 << 64) - 1))
                if b >= 1:
                    out |= w >= lo
                else:
                    out |= (w >= lo) & (w < np.uint64(math.floor(b * (1 << 64))))
            else:
                den = math.lcm(a.denominator, b.denominator)
                A, Bn = int(a * den) * q, int(b * den) * q
                x = w.astype(np.int64) * den if q * den < 1 << 62 else w.astype(object) * den
                out |= np.asarray((x >= A) & (x < Bn), dtype=bool)
        return out

    def to_json(self):
        return [[str(a), str(b)] for a, b in self.intervals]


Key = tuple[int, int]


@dataclass(frozen=True)
class Term:
    coef: Fraction
    arcs: tuple[tuple[Key, ArcSet], ...]

    def arc_map(self) -> dict[Key, ArcSet]:
        return dict(self.arcs)


def _mul_terms(x: Term, y: Term) -> Term | None:
    arcs = x.arc_map()
    for key, s in y.arcs:
        arcs[key] = arcs[key].intersect(s) if key in arcs else s
        if arcs[key].length == 0:
            return None
    arcs = {k: v for k, v in arcs.items() if not v.is_full}
    return Term(x.coef * y.coef, tuple(sorted(arcs.items())))


Sampler = Callable[[int, int], np.ndarray]


class FunctionSpec:
    def evaluate(self, sampler: Sampler) -> np.ndarray:
        raise NotImplementedError

    def terms(self) -> list[Term]:
        raise NotExact(f"{type(self).__name__} has no exact normal form")

    @property
    def nfactors(self) -> int:
        return 1

    def __add__(self, other):
        return Sum((self, _lift(other)))

    __radd__ = __add__

    def __mul__(self, other):
        return Prod((self, _lift(other)))

    __rmul__ = __mul__

    def to_json(self) -> dict[str, Any]:
        raise NotImplementedError


def _lift(x) -> FunctionSpec:
    return x if isinstance(x, FunctionSpec) else Const(x)


def _ones(sampler: Sampler) -> np.ndarray:
    return np.ones(sampler(0, 0).shape[0])


@dataclass(frozen=True)
class Const(FunctionSpec):
    value: Any

    def __post_init__(self):
        v = self.value
        if isinstance(v, str):
            v = Fraction(v)
        elif isinstance(v, (int, Fraction)):
            v = Fraction(v)
        object.__setattr__(self, "value", v)

    def evaluate(self, sampler):
        v = self.value
        return _ones(sampler) * (complex(v) if isinstance(v, complex) else float(v))

    def terms(self):
        if isinstance(self.value, Fraction):
            return [Term(self.value, ())] if self.value else []
        raise NotExact("complex constants have no rational normal form")

    @property
    def nfactors(self):
        return 0

    def to_json(self):
        v = self.value
        if isinstance(v, complex):
            return {"op": "const", "re": v.real, "im": v.imag}
        return {"op": "const", "value": str(v)}


@dataclass(frozen=True)
class Indicator(FunctionSpec):
    """Indicator of an ArcSet in one coordinate of one factor."""

    factor: int
    coord: int
    arcs: ArcSet

    def evaluate(self, sampler):
        return self.arcs.mask_floats(sampler(self.factor, 0)[:, self.coord]).astype(np.float64)

    def terms(self):
        if self.arcs.length == 0:
            return []
        if self.arcs.is_full:
            return [Term(Fraction(1), ())]
        return [Term(Fraction(1), (((self.factor, self.coord), self.arcs),))]

    @property
    def nfactors(self):
        return self.factor + 1

    def to_json(self):
        return {"op": "indicator", "factor": self.factor, "coord": self.coord, "arcs": self.arcs.to_json()}


@dataclass(frozen=True)
class Box(FunctionSpec):
    box: TorusBox
    factor: int = 0

    def evaluate(self, sampler):
        return self.box.mask_floats(sampler(self.factor, 0)).astype(np.float64)

    def terms(self):
        t = Term(Fraction(1), ())
        for j, (a, l) in enumerate(zip(self.box.starts, self.box.lengths)):
            nxt = _mul_terms(t, Term(Fraction(1), (((self.factor, j), ArcSet.arc(a, l)),)))
            if nxt is None:
                return []
            t = nxt
        return [t]

    @property
    def nfactors(self):
        return self.factor + 1

    def to_json(self):
        return {"op": "box", "factor": self.factor, "box": self.box.to_json()}


@dataclass(frozen=True)
class Char(FunctionSpec):
    """x -> e(m . x) on one factor."""

    freq: tuple[int, ...]
    factor: int = 0

    def evaluate(self, sampler):
        pts = sampler(self.factor, 0)
        phase = pts @ np.asarray(self.freq, dtype=np.float64)
        return np.exp(2j * np.pi * np.mod(phase, 1.0))

    @property
    def nfactors(self):
        return self.factor + 1

    def to_json(self):
        return {"op": "char", "factor": self.factor, "freq": list(self.freq)}


@dataclass(frozen=True)
class Sum(FunctionSpec):
    args: tuple[FunctionSpec, ...]

    def evaluate(self, sampler):
        out = self.args[0].evaluate(sampler)
        for a in self.args[1:]:
            out = out + a.evaluate(sampler)
        return out

    def terms(self):
        acc: list[Term] = []
        for a in self.args:
            acc.extend(a.terms())
        return _collect(acc)

    @property
    def nfactors(self):
        return max(a.nfactors for a in self.args)

    def to_json(self):
        return {"op": "sum", "args": [a.to_json() for a in self.args]}


@dataclass(frozen=True)
class Prod(FunctionSpec):
    args: tuple[FunctionSpec, ...]

    def evaluate(self, sampler):
        out = self.args[0].evaluate(sampler)
        for a in self.args[1:]:
            out = out * a.evaluate(sampler)
        return out

    def terms(self):
        acc = [Term(Fraction(1), ())]
        for a in self.args:
            nxt = []
            for x in acc:
                for y in a.terms():
                    t = _mul_terms(x, y)
                    if t is not None:
                        nxt.append(t)
            acc = nxt
        return _collect(acc)

    @property
    def nfactors(self):
        return max(a.nfactors for a in self.args)

    def to_json(self):
        return {"op": "prod", "args": [a.to_json() for a in self.args]}


@dataclass(frozen=True)
class Shifted(FunctionSpec):
    """arg evaluated at (T^(n_0) x_0, T^(n_1) x_1, ...)."""

    arg: FunctionSpec
    shifts: tuple[int, ...]

    def evaluate(self, sampler):
        def moved(factor, shift):
            extra = self.shifts[factor] if factor < len(self.shifts) else 0
            return sampler(factor, shift + extra)

        return self.arg.evaluate(moved)

    @property
    def nfactors(self):
        return max(self.arg.nfactors, len(self.shifts))

    def to_json(self):
        return {"op": "shift", "arg": self.arg.to_json(), "shifts": list(self.shifts)}


def _collect(terms: list[Term]) -> list[Term]:
    merged: dict[tuple, Fraction] = {}
    for t in terms:
        merged[t.arcs] = merged.get(t.arcs, Fraction(0)) + t.coef
    return [Term(c, arcs) for arcs, c in merged.items() if c != 0]


def normal_form(f: FunctionSpec) -> list[Term]:
    return f.terms()


def from_terms(terms: Sequence[Term]) -> FunctionSpec:
    """Rebuild a FunctionSpec; a purely constant form becomes a single Const."""
    terms = _collect(list(terms))
    if all(not t.arcs for t in terms):
        return Const(sum((t.coef for t in terms), Fraction(0)))
    parts: list[FunctionSpec] = []
    for t in terms:
        factors: list[FunctionSpec] = [Const(t.coef)]
        factors += [Indicator(f, c, s) for (f, c), s in t.arcs]
        parts.append(Prod(tuple(factors)))
    return Sum(tuple(parts)) if len(parts) > 1 else parts[0]


def integrate(f: FunctionSpec, keep: Callable[[Key], bool] = lambda key: False) -> FunctionSpec:
    """Integrate out every coordinate for which keep(key) is false."""
    out = []
    for t in f.terms():
        coef = t.coef
        arcs = []
        for key, s in t.arcs:
            if keep(key):
                arcs.append((key, s))
            else:
                coef *= s.length
        if coef:
            out.append(Term(coef, tuple(arcs)))
    return from_terms(out)


def function_from_json(doc: Mapping[str, Any] | str) -> FunctionSpec:
    if isinstance(doc, str):
        doc = json.loads(doc)
    op = doc["op"]
    if op == "const":
        if "re" in doc:
            return Const(complex(doc["re"], doc.get("im", 0.0)))
        return Const(Fraction(str(doc["value"])))
    if op == "indicator":
        arcs = ArcSet.normalize((Fraction(a), Fraction(b)) for a, b in doc["arcs"])
        return Indicator(int(doc["factor"]), int(doc["coord"]), arcs)
    if op == "box":
        return Box(TorusBox.from_json(doc["box"]), int(doc.get("factor", 0)))
    if op == "char":
        return Char(tuple(int(m) for m in doc["freq"]), int(doc.get("factor", 0)))
    if op == "sum":
        return Sum(tuple(function_from_json(a) for a in doc["args"]))
    if op == "prod":
        return Prod(tuple(function_from_json(a) for a in doc["args"]))
    if op == "shift":
        return Shifted(function_from_json(doc["arg"]), tuple(int(x) for x in doc["shifts"]))
    raise ValueError(f"unknown function operator {op!r}")
