"""Finitely evaluable subsets of the positive integers.

A set is an immutable expression tree.  Arithmetic trees (residue classes
combined by boolean operations and shifts) are decidable everywhere;
explicit windows and return-time sets carry a finite horizon.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = [
    "HorizonError",
    "SetSpec",
    "ResidueClass",
    "Union",
    "Intersection",
    "Complement",
    "Shift",
    "ExplicitWindow",
    "ReturnTimeSet",
    "FolnerWindow",
    "NATURALS",
    "member",
    "window_density",
    "banach_density_estimate",
    "return_time_set",
    "folner_intervals",
    "from_json",
    "as_mask",
]

MAX_RETURN_HORIZON = 10**8


class HorizonError(ValueError):
    """Membership was requested beyond the horizon of a finite description."""


def _min_horizon(values: Iterable[int | None]) -> int | None:
    finite = [v for v in values if v is not None]
    return min(finite) if finite else None


class SetSpec:
    """Base class for set descriptions.  Subclasses are frozen dataclasses."""

    @property
    def horizon(self) -> int | None:
        return None

    @property
    def arithmetic(self) -> bool:
        return True

    def _mask(self, lo: int, hi: int) -> np.ndarray:
        raise NotImplementedError

    def mask(self, lo: int, hi: int) -> np.ndarray:
        """Boolean membership of every n in [lo, hi).  Values below 1 are never members."""
        if hi <= lo:
            return np.zeros(0, dtype=bool)
        h = self.horizon
        if h is not None and hi - 1 > h:
            raise HorizonError(f"requested up to {hi - 1}, horizon is {h}")
        out = self._mask(lo, hi)
        if lo < 1:
            out[: min(1 - lo, hi - lo)] = False
        return out

    def contains(self, n: int) -> bool:
        return bool(self.mask(n, n + 1)[0])

    def __contains__(self, n: int) -> bool:
        return self.contains(n)

    def to_json(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class ResidueClass(SetSpec):
    """{n >= start : n = r mod m}.  The default start of 1 gives the class inside the positive integers."""

    m: int
    r: int
    start: int = 1

    def __post_init__(self):
        if self.m < 1 or not 0 <= self.r < self.m:
            raise ValueError(f"bad residue class {self.r} mod {self.m}")
        if self.start < 1:
            raise ValueError("start must be >= 1")

    def _mask(self, lo, hi):
        n = np.arange(lo, hi, dtype=np.int64)
        return (n % self.m == self.r) & (n >= self.start)

    def to_json(self):
        d = {"op": "residue", "m": self.m, "r": self.r}
        if self.start != 1:
            d["start"] = self.start
        return d


NATURALS = ResidueClass(1, 0)


@dataclass(frozen=True)
class Union(SetSpec):
    args: tuple[SetSpec, ...]

    @property
    def horizon(self):
        return _min_horizon(a.horizon for a in self.args)

    @property
    def arithmetic(self):
        return all(a.arithmetic for a in self.args)

    def _mask(self, lo, hi):
        out = np.zeros(hi - lo, dtype=bool)
        for a in self.args:
            out |= a._mask(lo, hi)
        return out

    def to_json(self):
        return {"op": "union", "args": [a.to_json() for a in self.args]}


@dataclass(frozen=True)
class Intersection(SetSpec):
    args: tuple[SetSpec, ...]

    @property
    def horizon(self):
        return _min_horizon(a.horizon for a in self.args)

    @property
    def arithmetic(self):
        return all(a.arithmetic for a in self.args)

    def _mask(self, lo, hi):
        out = np.ones(hi - lo, dtype=bool)
        for a in self.args:
            out &= a._mask(lo, hi)
        return out

    def to_json(self):
        return {"op": "intersection", "args": [a.to_json() for a in self.args]}


@dataclass(frozen=True)
class Complement(SetSpec):
    """Complement inside the positive integers."""

    arg: SetSpec

    @property
    def horizon(self):
        return self.arg.horizon

    @property
    def arithmetic(self):
        return self.arg.arithmetic

    def _mask(self, lo, hi):
        return ~self.arg._mask(lo, hi)

    def to_json(self):
        return {"op": "complement", "arg": self.arg.to_json()}


@dataclass(frozen=True)
class Shift(SetSpec):
    """{n >= 1 : n + t in arg}, the translate arg - t restricted to the positive integers."""

    arg: SetSpec
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("shift must be >= 0")

    @property
    def horizon(self):
        h = self.arg.horizon
        return None if h is None else h - self.t

    @property
    def arithmetic(self):
        return self.arg.arithmetic

    def _mask(self, lo, hi):
        inner = self.arg._mask(lo + self.t, hi + self.t)
        if lo + self.t < 1:
            inner[: min(1 - lo - self.t, hi - lo)] = False
        return inner

    def to_json(self):
        return {"op": "shift", "arg": self.arg.to_json(), "t": self.t}


def _rle_encode(bits: np.ndarray) -> dict[str, Any]:
    if bits.size == 0:
        return {"first": 0, "runs": []}
    change = np.flatnonzero(bits[1:] != bits[:-1]) + 1
    edges = np.concatenate(([0], change, [bits.size]))
    return {"first": int(bits[0]), "runs": np.diff(edges).tolist()}


def _rle_decode(payload: dict[str, Any]) -> np.ndarray:
    runs = payload["runs"]
    vals = (np.arange(len(runs)) + int(payload["first"])) % 2
    return np.repeat(vals.astype(bool), runs)


@dataclass(frozen=True, eq=False)
class ExplicitWindow(SetSpec):
    """Members offset + i for each set bit i.  Numbers below offset are non-members;
    the horizon is the last position covered by the bit-vector."""

    offset: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.offset < 1:
            raise ValueError("offset must be >= 1")
        b = np.asarray(self.bits, dtype=bool).copy()
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def horizon(self):
        return self.offset + self.bits.size - 1

    @property
    def arithmetic(self):
        return False

    def _mask(self, lo, hi):
        out = np.zeros(hi - lo, dtype=bool)
        a, b = max(lo, self.offset), min(hi, self.offset + self.bits.size)
        if a < b:
            out[a - lo : b - lo] = self.bits[a - self.offset : b - self.offset]
        return out

    def __eq__(self, other):
        return (
            isinstance(other, ExplicitWindow)
            and self.offset == other.offset
            and np.array_equal(self.bits, other.bits)
        )

    def __hash__(self):
        return hash((self.offset, self.bits.tobytes()))

    def to_json(self):
        return {"op": "window", "offset": self.offset, "rle": _rle_encode(self.bits)}


class ReturnTimeSet(SetSpec):
    """{n in [1, N] : T^n a in box} for an affine torus system.

    The bit-vector is computed once on first use and never mutated.
    """

    def __init__(self, system, base, box, N: int, bits: np.ndarray | None = None):
        if not 1 <= N <= MAX_RETURN_HORIZON:
            raise ValueError(f"horizon {N} outside [1, {MAX_RETURN_HORIZON}]")
        self.system = system
        self.base = tuple(base)
        self.box = box
        self.N = int(N)
        self._bits = None
        if bits is not None:
            b = np.asarray(bits, dtype=bool).copy()
            if b.size != self.N:
                raise ValueError("cached payload length does not match the horizon")
            b.setflags(write=False)
            self._bits = b

    def simulate(self) -> np.ndarray:
        from .nilsystem import return_times

        return return_times(self.system, self.base, self.box, self.N)

    @property
    def bits(self) -> np.ndarray:
        if self._bits is None:
            b = self.simulate()
            b.setflags(write=False)
            self._bits = b
        return self._bits

    def verify_cache(self) -> bool:
        return bool(np.array_equal(self.bits, self.simulate()))

    @property
    def horizon(self):
        return self.N

    @property
    def arithmetic(self):
        return False

    def _mask(self, lo, hi):
        out = np.zeros(hi - lo, dtype=bool)
        a, b = max(lo, 1), min(hi, self.N + 1)
        if a < b:
            out[a - lo : b - lo] = self.bits[a - 1 : b - 1]
        return out

    def to_json(self, include_payload: bool = False):
        d = {
            "op": "return_time",
            "system": self.system.to_json(),
            "base": [str(x) for x in self.base],
            "box": self.box.to_json(),
            "N": self.N,
        }
        if include_payload:
            d["rle"] = _rle_encode(self.bits)
        return d

    def __repr__(self):
        return f"ReturnTimeSet(system={self.system!r}, base={self.base}, box={self.box!r}, N={self.N})"


@dataclass(frozen=True)
class FolnerWindow:
    """The interval [start, start + length)."""

    start: int
    length: int

    def __post_init__(self):
        if self.start < 1 or self.length < 1:
            raise ValueError("windows need start >= 1 and length >= 1")

    @property
    def stop(self) -> int:
        return self.start + self.length


def member(spec: SetSpec, n: int) -> bool:
    if n < 1:
        raise ValueError("membership is defined for n >= 1")
    return spec.contains(n)


def as_mask(A, hi: int) -> np.ndarray:
    """Membership of 0..hi as a boolean array, for a SetSpec, a finite set or a predicate."""
    if isinstance(A, SetSpec):
        return A.mask(0, hi + 1)
    if callable(A):
        return np.array([n >= 1 and bool(A(n)) for n in range(hi + 1)], dtype=bool)
    out = np.zeros(hi + 1, dtype=bool)
    idx = [n for n in A if 1 <= n <= hi]
    out[idx] = True
    return out


def window_density(spec: SetSpec, w: FolnerWindow) -> Fraction | float:
    count = int(np.count_nonzero(spec.mask(w.start, w.stop)))
    if spec.arithmetic:
        return Fraction(count, w.length)
    return count / w.length


def banach_density_estimate(
    spec: SetSpec, length: int, num_windows: int, stride: int
) -> tuple[Fraction | float, FolnerWindow]:
    """Largest density over the windows [1 + j*stride, 1 + j*stride + length).

    This is a lower bound proxy for the upper Banach density; the true quantity
    is a limsup over all window positions.
    """
    if length < 1 or num_windows < 1 or stride < 1:
        raise ValueError("length, num_windows and stride must be positive")
    last = 1 + (num_windows - 1) * stride + length
    m = spec.mask(1, last)
    csum = np.concatenate(([0], np.cumsum(m, dtype=np.int64)))
    starts = np.arange(num_windows, dtype=np.int64) * stride
    counts = csum[starts + length] - csum[starts]
    j = int(np.argmax(counts))
    best = FolnerWindow(1 + j * stride, length)
    value = Fraction(int(counts[j]), length) if spec.arithmetic else int(counts[j]) / length
    return value, best


def return_time_set(system, a, E, N: int) -> ReturnTimeSet:
    return ReturnTimeSet(system, a, E, N)


def folner_intervals(N_max: int, kind: str | tuple = "prefix") -> list[FolnerWindow]:
    """[1, N] for N <= N_max, or [M, M + N) when kind is ("shifted", M)."""
    if N_max < 1:
        raise ValueError("N_max must be >= 1")
    if kind == "prefix":
        start = 1
    elif isinstance(kind, tuple) and kind[0] == "shifted":
        start = int(kind[1])
    else:
        raise ValueError(f"unknown window kind {kind!r}")
    return [FolnerWindow(start, n) for n in range(1, N_max + 1)]


def from_json(doc: dict[str, Any] | str) -> SetSpec:
    if isinstance(doc, str):
        doc = json.loads(doc)
    op = doc["op"]
    if op == "residue":
        return ResidueClass(int(doc["m"]), int(doc["r"]), int(doc.get("start", 1)))
    if op == "naturals":
        return NATURALS
    if op == "union":
        return Union(tuple(from_json(a) for a in doc["args"]))
    if op == "intersection":
        return Intersection(tuple(from_json(a) for a in doc["args"]))
    if op == "complement":
        return Complement(from_json(doc["arg"]))
    if op == "shift":
        return Shift(from_json(doc["arg"]), int(doc["t"]))
    if op == "window":
        return ExplicitWindow(int(doc["offset"]), _rle_decode(doc["rle"]))
    if op == "straus":
        from .straus import make_straus

        return make_straus(doc["primes"])
    if op == "return_time":
        from .nilsystem import AffineTorusSystem, TorusBox, parse_point

        system = AffineTorusSystem.from_json(doc["system"])
        bits = _rle_decode(doc["rle"]) if "rle" in doc else None
        return ReturnTimeSet(
            system, parse_point(doc["base"]), TorusBox.from_json(doc["box"]), int(doc["N"]), bits
        )
    raise ValueError(f"unknown set operator {op!r}")


def residue_obstruction(mask: np.ndarray, offsets: Sequence[int], max_modulus: int = 12):
    """Find a modulus m such that every member in the mask lies in one class mod m
    while two offsets differ mod m.  Then no x has x + offsets all inside the set.

    Returns (m, r, offset_a, offset_b) or None.
    """
    members = np.flatnonzero(mask)
    if members.size < 2 or len(offsets) < 2:
        return None
    for m in range(2, max_modulus + 1):
        residues = np.unique(members % m)
        if residues.size != 1:
            continue
        seen: dict[int, int] = {}
        for o in offsets:
            c = o % m
            for c0, o0 in seen.items():
                if c0 != c:
                    return m, int(residues[0]), o0, o
            seen.setdefault(c, o)
    return None
