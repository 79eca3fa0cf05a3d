"""Restricted sumsets, certificate checks and the prime-power family construction.

oplus(F, i) is the set of sums of i distinct elements of F.  It is computed by
a dynamic program over (element, count) whose rows are Python integers used as
bit-vectors, so a shift-or adds one element to every partial sum at once.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .setspec import as_mask

__all__ = [
    "CapacityError",
    "SizeError",
    "NestingError",
    "Limits",
    "LIMITS",
    "FiniteNatSet",
    "SumsetCertificate",
    "Violation",
    "VerificationReport",
    "CERT_VERSION",
    "oplus",
    "oplus_brute",
    "range_sums",
    "find_subset",
    "check_thmA",
    "check_thmB",
    "corollaryC_family",
    "kfold_sum",
    "nested_to_cofinite",
    "first_primes",
]

CERT_VERSION = 1


class CapacityError(ValueError):
    pass


class SizeError(ValueError):
    pass


class NestingError(ValueError):
    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


@dataclass
class Limits:
    max_size: int = 10**6
    max_element: int = 10**6
    max_range: int = 10**8


LIMITS = Limits()


@dataclass(frozen=True)
class FiniteNatSet:
    elements: tuple[int, ...] = ()

    def __post_init__(self):
        els = tuple(int(x) for x in self.elements)
        object.__setattr__(self, "elements", els)
        if any(b <= a for a, b in zip(els, els[1:])):
            raise ValueError("elements must be strictly increasing")
        if els and els[0] < 0:
            raise ValueError("elements must be >= 0")
        if len(els) > LIMITS.max_size:
            raise CapacityError(f"set of size {len(els)} exceeds limit {LIMITS.max_size}")
        if els and els[-1] > LIMITS.max_element:
            raise CapacityError(f"element {els[-1]} exceeds limit {LIMITS.max_element}")

    @classmethod
    def of(cls, values: Iterable[int]) -> FiniteNatSet:
        return cls(tuple(sorted(set(int(v) for v in values))))

    def __iter__(self):
        return iter(self.elements)

    def __len__(self):
        return len(self.elements)

    def __contains__(self, x) -> bool:
        return x in set(self.elements)

    def __getitem__(self, i):
        return self.elements[i]

    def to_list(self) -> list[int]:
        return list(self.elements)


def _as_tuple(F) -> tuple[int, ...]:
    if isinstance(F, FiniteNatSet):
        return F.elements
    return tuple(sorted(set(int(x) for x in F)))


def _bits_of(x: int) -> list[int]:
    if x == 0:
        return []
    raw = np.frombuffer(x.to_bytes((x.bit_length() + 7) // 8, "little"), dtype=np.uint8)
    return np.flatnonzero(np.unpackbits(raw, bitorder="little")).tolist()


def _sum_tables(F: Sequence[int], imax: int, cap: int | None = None) -> list[int]:
    """rows[c] has bit v set iff v is a sum of c distinct elements of F (c <= imax).

    With cap set, bits above cap are discarded as they are produced.
    """
    imax = min(imax, len(F))
    rows = [1] + [0] * imax
    mask = None if cap is None else (1 << (cap + 1)) - 1
    for idx, f in enumerate(F):
        for c in range(min(imax, idx + 1), 0, -1):
            if rows[c - 1]:
                rows[c] |= rows[c - 1] << f
                if mask is not None:
                    rows[c] &= mask
    return rows


def _check_range(F: Sequence[int], i: int):
    top = sum(sorted(F)[-i:]) if i else 0
    if top > LIMITS.max_range:
        raise CapacityError(f"sum range up to {top} exceeds limit {LIMITS.max_range}")


def oplus(F, i: int) -> FiniteNatSet:
    """Sums of i distinct elements of F.  oplus(F, 0) = {0}; empty when i > |F|."""
    if i < 0:
        raise ValueError("i must be >= 0")
    els = _as_tuple(F)
    if i > len(els):
        return FiniteNatSet()
    _check_range(els, i)
    return FiniteNatSet(tuple(_bits_of(_sum_tables(els, i)[i])))


def oplus_brute(F, i: int) -> FiniteNatSet:
    els = _as_tuple(F)
    if len(els) > 20:
        raise SizeError("brute-force enumeration is limited to |F| <= 20")
    if i < 0:
        raise ValueError("i must be >= 0")
    return FiniteNatSet.of(sum(c) for c in itertools.combinations(els, i))


def range_sums(B, kmin: int, kmax: int) -> FiniteNatSet:
    if not 0 <= kmin <= kmax:
        raise ValueError("need 0 <= kmin <= kmax")
    els = _as_tuple(B)
    top = min(kmax, len(els))
    if kmin > top:
        return FiniteNatSet()
    _check_range(els, top)
    rows = _sum_tables(els, top)
    acc = 0
    for c in range(kmin, top + 1):
        acc |= rows[c]
    return FiniteNatSet(tuple(_bits_of(acc)))


def find_subset(B, size: int, target: int) -> tuple[int, ...] | None:
    """Some F of B with |F| = size and sum target, reconstructed from prefix tables."""
    els = _as_tuple(B)
    if size > len(els) or size < 0:
        return None
    mask = (1 << (target + 1)) - 1
    prefix = [[1] + [0] * size]
    for idx, f in enumerate(els):
        row = list(prefix[-1])
        for c in range(min(size, idx + 1), 0, -1):
            row[c] = (row[c] | (prefix[-1][c - 1] << f)) & mask
        prefix.append(row)
    if not (prefix[-1][size] >> target) & 1:
        return None
    out = []
    c, v = size, target
    for idx in range(len(els), 0, -1):
        if c == 0:
            break
        f = els[idx - 1]
        if (prefix[idx - 1][c] >> v) & 1:
            continue
        out.append(f)
        c -= 1
        v -= f
    return tuple(sorted(out))


@dataclass
class Violation:
    k: int
    i: int
    F: tuple[int, ...]
    sum: int
    shifted: int

    def to_json(self) -> dict[str, Any]:
        return {"k": self.k, "i": self.i, "F": list(self.F), "sum": self.sum, "shifted": self.shifted}

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> Violation:
        return cls(int(d["k"]), int(d["i"]), tuple(d["F"]), int(d["sum"]), int(d["shifted"]))


@dataclass
class VerificationReport:
    """status is "pass", "fail" or "vacuous".  tested/total count distinct shifted sums."""

    status: str
    kind: str
    violation: Violation | None = None
    tested: int = 0
    total: int = 0

    @property
    def fraction_tested(self) -> float:
        return self.tested / self.total if self.total else 0.0

    @property
    def ok(self) -> bool:
        return self.status != "fail"

    def to_json(self) -> dict[str, Any]:
        return {
            "status": self.status,
            "kind": self.kind,
            "violation": None if self.violation is None else self.violation.to_json(),
            "tested": self.tested,
            "total": self.total,
            "fraction_tested": round(self.fraction_tested, 12),
        }


@dataclass
class SumsetCertificate:
    """kind is "thmA", "thmB" or "mixed".

    For thmA the shifts are t; for thmB the pairs (t, s); a mixed certificate
    carries the first family in t_tilde and the second in (t, s).
    """

    kind: str
    B: FiniteNatSet
    t: list[int]
    K: int
    window: int
    ell: int = 0
    s: list[int] = field(default_factory=list)
    t_tilde: list[int] = field(default_factory=list)
    verified: bool = False
    violation: Violation | None = None

    def __post_init__(self):
        if self.kind not in ("thmA", "thmB", "mixed"):
            raise ValueError(f"unknown certificate kind {self.kind!r}")
        if not isinstance(self.B, FiniteNatSet):
            self.B = FiniteNatSet.of(self.B)
        self.t = [int(x) for x in self.t]
        self.s = [int(x) for x in self.s]
        self.t_tilde = [int(x) for x in self.t_tilde]
        families = [self.t]
        if self.kind in ("thmB", "mixed"):
            families.append(self.s)
        if self.kind == "mixed":
            families.append(self.t_tilde)
        for fam in families:
            if len(fam) != self.K:
                raise ValueError(f"shift list of length {len(fam)} for K = {self.K}")
            if any(x < 0 for x in fam):
                raise ValueError("shifts must be >= 0")
            if any(b < a for a, b in zip(fam, fam[1:])):
                raise ValueError("shifts must be nondecreasing")

    def to_json(self) -> dict[str, Any]:
        d = {
            "version": CERT_VERSION,
            "kind": self.kind,
            "ell": self.ell,
            "B": self.B.to_list(),
            "t": self.t,
            "s": self.s,
            "K": self.K,
            "window": self.window,
            "verified": self.verified,
            "violation": None if self.violation is None else self.violation.to_json(),
        }
        if self.kind == "mixed":
            d["t_tilde"] = self.t_tilde
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def from_json(cls, d: dict[str, Any] | str) -> SumsetCertificate:
        if isinstance(d, str):
            d = json.loads(d)
        if int(d.get("version", CERT_VERSION)) != CERT_VERSION:
            raise ValueError(f"unsupported certificate version {d.get('version')}")
        v = d.get("violation")
        return cls(
            kind=d["kind"],
            B=FiniteNatSet.of(d["B"]),
            t=d["t"],
            K=int(d["K"]),
            window=int(d["window"]),
            ell=int(d.get("ell", 0)),
            s=d.get("s", []),
            t_tilde=d.get("t_tilde", []),
            verified=bool(d.get("verified", False)),
            violation=None if v is None else Violation.from_json(v),
        )


def _run_checks(A, B: tuple[int, ...], tasks, window: int, kind: str) -> VerificationReport:
    """tasks: (k, i, offset) triples asserting oplus(B, i) + offset inside A."""
    if not B or not tasks:
        return VerificationReport("vacuous", kind)
    imax = max(i for _, i, _ in tasks)
    _check_range(B, min(imax, len(B)))
    rows = _sum_tables(B, imax)
    inA = as_mask(A, window)
    tested = total = 0
    first: Violation | None = None
    for k, i, off in tasks:
        if i > len(B):
            continue
        sums = np.asarray(_bits_of(rows[i]), dtype=np.int64)
        total += sums.size
        vals = sums + off
        ok = vals <= window
        tested += int(np.count_nonzero(ok))
        vals = vals[ok]
        bad = vals[~inA[vals]]
        if bad.size and first is None:
            v = int(bad[0])
            F = find_subset(B, i, v - off)
            first = Violation(k, i, F, v - off, v)
    if first is not None:
        return VerificationReport("fail", kind, first, tested, total)
    if tested == 0:
        return VerificationReport("vacuous", kind, None, tested, total)
    return VerificationReport("pass", kind, None, tested, total)


def thmA_tasks(K: int, ell: int, t: Sequence[int]) -> list[tuple[int, int, int]]:
    return [(k, i, t[k - 1]) for k in range(1, K + 1) for i in range(k, k + ell + 1)]


def thmB_tasks(K: int, t: Sequence[int], s: Sequence[int]) -> list[tuple[int, int, int]]:
    return [(k, i, i * s[k - 1] + t[k - 1]) for k in range(1, K + 1) for i in range(1, k + 1)]


def check_thmA(A, cert: SumsetCertificate, window: int | None = None) -> VerificationReport:
    """For k <= K, range_sums(B, k, k + ell) + t_k must lie in A, for shifted sums <= window."""
    w = cert.window if window is None else window
    t = cert.t_tilde if cert.kind == "mixed" else cert.t
    return _run_checks(A, cert.B.elements, thmA_tasks(cert.K, cert.ell, t), w, "thmA")


def check_thmB(A, cert: SumsetCertificate, window: int | None = None) -> VerificationReport:
    """For k <= K and 1 <= i <= k, oplus(B, i) + i*s_k + t_k must lie in A, within window."""
    w = cert.window if window is None else window
    return _run_checks(A, cert.B.elements, thmB_tasks(cert.K, cert.t, cert.s), w, "thmB")


def first_primes(k: int) -> list[int]:
    out: list[int] = []
    n = 2
    while len(out) < k:
        if all(n % p for p in out if p * p <= n):
            out.append(n)
        n += 1
    return out


def corollaryC_family(B, t: Sequence[int], k: int, cap: int = 64) -> list[FiniteNatSet]:
    """B_j = {b_(p_j^n) + t_j - t_(j-1) : p_j^n <= |B|, 1 <= n <= cap}, with 1-based b and t_0 = 0."""
    els = _as_tuple(B)
    if len(t) < k:
        raise ValueError(f"need {k} shifts, got {len(t)}")
    primes = first_primes(k)
    shifts = [0] + [int(x) for x in t[:k]]
    out = []
    for j, p in enumerate(primes, start=1):
        idx = []
        q = p
        n = 1
        while q <= len(els) and n <= cap:
            idx.append(q)
            q *= p
            n += 1
        if not idx:
            raise ValueError(f"B has {len(els)} elements, fewer than the prime {p} needed for k = {k}")
        d = shifts[j] - shifts[j - 1]
        out.append(FiniteNatSet.of(els[i - 1] + d for i in idx))
    return out


def kfold_sum(family: Sequence, window: int | None = None) -> FiniteNatSet:
    """{x_1 + ... + x_k : x_j in family[j]}, truncated at window."""
    if not family:
        raise ValueError("family must be nonempty")
    acc = 1
    cap = None if window is None else (1 << (window + 1)) - 1
    for part in family:
        nxt = 0
        for x in _as_tuple(part):
            nxt |= acc << x
        acc = nxt if cap is None else nxt & cap
        if acc.bit_length() > LIMITS.max_range:
            raise CapacityError("k-fold sum range exceeds limit")
    return FiniteNatSet(tuple(_bits_of(acc)))


def nested_to_cofinite(chain: Sequence, depth: int | None = None) -> tuple[list[int], list[FiniteNatSet]]:
    """Greedy b_(i+1) = min(B_(i+1) minus {b_1..b_i}) and the tails C_i = {b_j : j >= i}."""
    sets = [_as_tuple(c) for c in chain]
    for i in range(1, len(sets)):
        extra = set(sets[i]) - set(sets[i - 1])
        if extra:
            raise NestingError(i + 1, f"B_{i + 1} is not contained in B_{i}: {sorted(extra)[:5]}")
    n = len(sets) if depth is None else min(depth, len(sets))
    b: list[int] = []
    for i in range(n):
        taken = set(b)
        rest = [x for x in sets[i] if x not in taken]
        if not rest:
            raise NestingError(i + 1, f"B_{i + 1} has no element outside the {len(b)} already chosen")
        b.append(rest[0])
    tails = [FiniteNatSet.of(b[i:]) for i in range(len(b))]
    return b, tails
