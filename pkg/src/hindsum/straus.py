"""Dense sets that defeat every fixed infinite B.

For primes p_1 < ... < p_m the set removes, for each n, the n residue blocks
p_n*N + j with 0 <= j < n (here p*N + j = {p*m + j : m >= 1}).  A sum of many
elements from one residue class mod p_n can be steered into one of the removed
blocks, which is what obstruct_residue constructs on finite data.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Sequence


from .setspec import NATURALS, Complement, ResidueClass, SetSpec, Union, as_mask, member
from .sumsets import _as_tuple

__all__ = [
    "StrausSpec",
    "Witness",
    "make_straus",
    "density_bound",
    "obstruct_residue",
    "direct_search",
    "refute_fixed_B",
    "RefutationReport",
    "DEFAULT_PRIMES",
]

DEFAULT_PRIMES = (5, 13, 29, 103)


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % d for d in range(2, int(n**0.5) + 1))


@dataclass(frozen=True)
class StrausSpec:
    primes: tuple[int, ...]

    def __post_init__(self):
        ps = tuple(int(p) for p in self.primes)
        object.__setattr__(self, "primes", ps)
        for p in ps:
            if not _is_prime(p):
                raise ValueError(f"{p} is not prime")
        if any(b <= a for a, b in zip(ps, ps[1:])):
            raise ValueError("primes must be strictly increasing")

    def blocks(self):
        """(n, p_n) pairs with 1-based n; block n removes residues 0..n-1 mod p_n."""
        return list(enumerate(self.primes, start=1))

    def excluded(self, x: int) -> tuple[int, int] | None:
        """(p, j) with x in p*N + j for a removed block, or None."""
        for n, p in self.blocks():
            j = x % p
            if j < n and x >= p + j:
                return p, j
        return None


def _spec(primes) -> StrausSpec:
    return primes if isinstance(primes, StrausSpec) else StrausSpec(tuple(primes))


class StrausSet(Complement):
    """Complement of the removed residue blocks, remembering its prime list."""

    def __init__(self, spec: StrausSpec):
        removed = tuple(
            ResidueClass(p, j, start=p + j) for n, p in spec.blocks() for j in range(n)
        )
        object.__setattr__(self, "arg", Union(removed))
        object.__setattr__(self, "straus", spec)

    def to_json(self):
        return {"op": "straus", "primes": list(self.straus.primes)}

    def __repr__(self):
        return f"StrausSet(primes={self.straus.primes})"

    def __eq__(self, other):
        return isinstance(other, StrausSet) and other.straus == self.straus

    def __hash__(self):
        return hash(("straus", self.straus.primes))


def make_straus(primes: Sequence[int] | StrausSpec) -> SetSpec:
    spec = _spec(primes)
    if not spec.primes:
        return NATURALS
    return StrausSet(spec)


def density_bound(primes: Sequence[int] | StrausSpec) -> Fraction:
    spec = _spec(primes)
    return 1 - sum((Fraction(n, p) for n, p in spec.blocks()), Fraction(0))


@dataclass
class Witness:
    F: tuple[int, ...]
    t: int
    k: int
    sum: int
    method: str
    prime: int | None = None
    residue: int | None = None

    @property
    def shifted(self) -> int:
        return self.sum + self.t

    def to_json(self) -> dict[str, Any]:
        d = {"k": self.k, "F": list(self.F), "sum": self.sum, "method": self.method}
        if self.prime is not None:
            d["prime"] = self.prime
            d["residue"] = self.residue
        return d


def obstruct_residue(spec, B, t: int, k_lo: int, k_hi: int, A: SetSpec | None = None) -> Witness | None:
    """Steer a sum of d same-class elements into a removed block.

    For each listed prime p_n > t (largest first) and each residue class c of B
    mod p_n, look for the smallest d in [k_lo, k_hi] with d*c + t landing in
    one of the removed residues 0..n-1 and with at least d elements in the
    class.  For c = 0 this needs t mod p_n < n; for c != 0 some d exists
    whenever the d-range covers a full cycle mod p_n.  The sum is confirmed
    against membership before it is returned.
    """
    if not 1 <= k_lo <= k_hi:
        raise ValueError("need 1 <= k_lo <= k_hi")
    st = _spec(spec.straus if isinstance(spec, StrausSet) else spec)
    target = A if A is not None else make_straus(st)
    els = _as_tuple(B)
    for n, p in reversed(st.blocks()):
        if p <= t:
            continue
        classes: dict[int, list[int]] = {}
        for b in els:
            classes.setdefault(b % p, []).append(b)
        for c in sorted(classes):
            members = classes[c]
            for d in range(k_lo, min(k_hi, len(members)) + 1):
                if (d * c + t) % p >= n:
                    continue
                F = tuple(members[:d])
                total = sum(F)
                if not member(target, total + t):
                    return Witness(F, t, d, total, "residue", p, c)
    return None


def direct_search(A: SetSpec, B, t: int, K: int, window: int, max_combos: int = 20000) -> Witness | None:
    """Bounded search for F with 1 <= |F| <= K and sum(F) + t outside A.

    Small subsets are enumerated first; for arithmetic sets with a prime list a
    residue dynamic program then hunts for a sum in a removed block.
    """
    els = _as_tuple(B)
    if not els:
        return None
    limit = sum(els[-K:]) + t
    inA = as_mask(A, min(window, limit))
    tried = 0
    for size in range(1, min(K, len(els)) + 1):
        for F in itertools.combinations(els, size):
            v = sum(F) + t
            if v <= window and v < inA.size and not inA[v]:
                return Witness(tuple(F), t, size, v - t, "direct")
            tried += 1
            if tried >= max_combos:
                break
        if tried >= max_combos:
            break
    st = getattr(A, "straus", None)
    if st is None:
        return None
    for n, p in st.blocks():
        for j in range(n):
            F = _residue_subset(els, (j - t) % p, p, K, p + j - t)
            if F is not None and sum(F) + t <= window and not member(A, sum(F) + t):
                return Witness(F, t, len(F), sum(F), "residue-dp", p, j)
    return None


def _residue_subset(els: Sequence[int], r: int, p: int, K: int, min_sum: int) -> tuple[int, ...] | None:
    """Fewest elements (at most K) whose sum is r mod p and at least min_sum."""
    # best[c][res] = tuple of indices; grown element by element
    best: list[dict[int, tuple[int, ...]]] = [{0: ()}]
    for idx, b in enumerate(els):
        for c in range(min(K, idx + 1), 0, -1):
            if c - 1 >= len(best):
                continue
            if c >= len(best):
                best.append({})
            for res, F in list(best[c - 1].items()):
                key = (res + b) % p
                if key not in best[c]:
                    best[c][key] = F + (idx,)
    for c in range(1, len(best)):
        F = best[c].get(r)
        if F is not None:
            vals = tuple(els[i] for i in F)
            if sum(vals) >= min_sum:
                return vals
    return None


@dataclass
class RefutationReport:
    primes: tuple[int, ...]
    K: int
    t_bound: int
    window: int
    B: tuple[int, ...]
    results: dict[int, Witness | None]
    vacuous: bool = False

    @property
    def unresolved(self) -> list[int]:
        return [t for t, w in self.results.items() if w is None]

    @property
    def complete(self) -> bool:
        return not self.vacuous and not self.unresolved

    def to_json(self) -> dict[str, Any]:
        return {
            "primes": list(self.primes),
            "K": self.K,
            "t_bound": self.t_bound,
            "window": self.window,
            "B_size": len(self.B),
            "vacuous": self.vacuous,
            "violations": {
                str(t): ("unresolved" if w is None else w.to_json()) for t, w in self.results.items()
            },
        }


def refute_fixed_B(spec, B, K: int, t_bound: int, window: int, A: SetSpec | None = None) -> RefutationReport:
    """For every 0 <= t <= t_bound find F in B, 1 <= |F| <= K, with sum(F) + t outside A.

    spec is a prime list or StrausSpec; A defaults to the matching set but any
    SetSpec may be supplied (with spec=() for purely direct search).
    """
    st = _spec(spec)
    target = A if A is not None else make_straus(st)
    els = _as_tuple(B)
    if not els:
        return RefutationReport(st.primes, K, t_bound, window, els, {}, vacuous=True)
    results: dict[int, Witness | None] = {}
    for t in range(t_bound + 1):
        w = None
        if st.primes:
            w = obstruct_residue(st, els, t, 1, K, target)
            if w is not None and w.shifted > window:
                w = None
        if w is None:
            w = direct_search(target, els, t, K, window)
        results[t] = w
    return RefutationReport(st.primes, K, t_bound, window, els, results)
