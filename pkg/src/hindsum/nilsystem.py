"""Affine unipotent maps on the torus and the manifolds their diagonal orbits fill.

The system of step s acts on T^s by

    T(x)_j = x_j + sum_{i<j} C(j, i) x_i + alpha,

so with the convention x_0 = alpha it is the lower-triangular Pascal matrix and

    (T^m x)_j = sum_{i=0}^{j} C(j, i) m^(j-i) x_i.

Every orbit coordinate is therefore a polynomial in m, and long orbits are
generated with difference tables (additions only).  Two rings are supported:

* exact: Z/q for alpha = p/q, so orbit points are exact rationals;
* floating: 128-bit fixed point Z/2^128, which reproduces alpha to 2^-128 and
  keeps n^4 * alpha accurate far below 1e-9 for n up to 10^6.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "FX_BITS",
    "FX_ONE",
    "AffineTorusSystem",
    "TorusBox",
    "parse_alpha",
    "parse_point",
    "sqrt2_convergent",
    "step",
    "orbit_point",
    "affine_power",
    "diagonal_eval",
    "orbit_words",
    "orbit_floats",
    "words_to_float",
    "return_times",
    "sequence_tables",
    "omega_sample",
    "omega_member",
    "projection_strictness",
    "omega_witness",
]

FX_BITS = 128
FX_ONE = 1 << FX_BITS
_MASK64 = (1 << 64) - 1


def _isqrt_frac(n: int, bits: int) -> int:
    """floor(sqrt(n) * 2^bits)."""
    return math.isqrt(n << (2 * bits))


_NAMED = {
    "sqrt2": lambda bits: _isqrt_frac(2, bits) - (1 << bits),
    "golden": lambda bits: (_isqrt_frac(5, bits) - (1 << bits)) // 2,
}


def parse_alpha(value) -> tuple[Fraction | None, int, str]:
    """Returns (rational value or None, 128-bit fixed point, label).

    Accepts Fractions, ints, floats, "p/q" or decimal strings, and the names
    "sqrt2" (fractional part of sqrt 2) and "golden" ((sqrt 5 - 1)/2).
    """
    if isinstance(value, str) and value in _NAMED:
        fx = _NAMED[value](FX_BITS + 8) >> 8
        return None, fx % FX_ONE, value
    if isinstance(value, str):
        frac = Fraction(value) if "/" in value else Fraction(Decimal(value))
    else:
        frac = Fraction(value)
    frac -= math.floor(frac)
    fx = (frac.numerator * FX_ONE + frac.denominator // 2) // frac.denominator
    return frac, fx % FX_ONE, str(frac)


def sqrt2_convergent(max_q: int) -> Fraction:
    """Fractional part of the last continued-fraction convergent of sqrt 2 with denominator <= max_q."""
    p0, q0, p1, q1 = 1, 0, 1, 1
    while True:
        p2, q2 = 2 * p1 + p0, 2 * q1 + q0
        if q2 > max_q:
            break
        p0, q0, p1, q1 = p1, q1, p2, q2
    return Fraction(p1 - q1, q1)


class AffineTorusSystem:
    def __init__(self, s: int, alpha):
        if s < 1:
            raise ValueError("step must be >= 1")
        self.s = int(s)
        self.alpha, self.alpha_fx, self.label = parse_alpha(alpha)

    @property
    def rational(self) -> bool:
        return self.alpha is not None

    @property
    def q(self) -> int:
        if self.alpha is None:
            raise ValueError("alpha is not rational; exact mode unavailable")
        return self.alpha.denominator

    def ring(self, mode: str) -> tuple[int, int]:
        """(modulus, alpha as ring element) for mode "exact" or "floating"."""
        if mode == "exact":
            return self.q, self.alpha.numerator
        if mode == "floating":
            return FX_ONE, self.alpha_fx
        raise ValueError(f"unknown mode {mode!r}")

    def to_ring(self, point: Sequence, mode: str) -> tuple[int, ...]:
        if len(point) != self.s:
            raise ValueError(f"point has {len(point)} coordinates, system has {self.s}")
        Q, _ = self.ring(mode)
        out = []
        for x in point:
            f = Fraction(x) if not isinstance(x, str) else Fraction(x)
            if mode == "exact":
                v = f * Q
                if v.denominator != 1:
                    raise ValueError(f"coordinate {x} is not a multiple of 1/{Q}")
                out.append(int(v) % Q)
            else:
                out.append(math.floor(f * Q + Fraction(1, 2)) % Q)
        return tuple(out)

    def from_ring(self, values: Sequence[int], mode: str) -> tuple:
        Q, _ = self.ring(mode)
        if mode == "exact":
            return tuple(Fraction(int(v) % Q, Q) for v in values)
        return tuple((int(v) % Q) / Q for v in values)

    def linear_part(self) -> list[list[int]]:
        """Integer matrix on (x_0 = alpha, x_1, ..., x_s)."""
        n = self.s + 1
        return [[math.comb(j, i) if i <= j else 0 for i in range(n)] for j in range(n)]

    def to_json(self) -> dict[str, Any]:
        return {"s": self.s, "alpha": self.label}

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> AffineTorusSystem:
        return cls(int(d["s"]), d["alpha"])

    def __repr__(self):
        return f"AffineTorusSystem(s={self.s}, alpha={self.label})"

    def __eq__(self, other):
        return isinstance(other, AffineTorusSystem) and (self.s, self.alpha_fx, self.alpha) == (
            other.s,
            other.alpha_fx,
            other.alpha,
        )

    def __hash__(self):
        return hash((self.s, self.alpha_fx))


def parse_point(values: Iterable) -> tuple[Fraction, ...]:
    return tuple(Fraction(v) if isinstance(v, str) else Fraction(v) for v in values)


def _default_mode(system: AffineTorusSystem, mode: str | None) -> str:
    if mode is not None:
        return mode
    return "exact" if system.rational else "floating"


def _zero(system):
    return (0,) * system.s


def _closed_form(system: AffineTorusSystem, a_ring: Sequence[int], m: int, Q: int, alpha: int) -> list[int]:
    x = (alpha,) + tuple(a_ring)
    out = []
    for j in range(1, system.s + 1):
        acc = 0
        mp = 1
        for i in range(j, -1, -1):
            acc += math.comb(j, i) * mp * x[i]
            mp *= m
        out.append(acc % Q)
    return out


def step(system: AffineTorusSystem, x: Sequence, mode: str | None = None) -> tuple:
    return orbit_point(system, x, 1, mode)


def orbit_point(system: AffineTorusSystem, a: Sequence | None, n: int, mode: str | None = None) -> tuple:
    """T^n a for n >= 0, exactly in the chosen ring."""
    mode = _default_mode(system, mode)
    Q, alpha = system.ring(mode)
    a_ring = _zero(system) if a is None else system.to_ring(a, mode)
    if n < 0:
        raise ValueError("n must be >= 0")
    return system.from_ring(_closed_form(system, a_ring, n, Q, alpha), mode)


def affine_power(system: AffineTorusSystem, n: int, mode: str | None = None) -> list[list[int]]:
    """T^n as an integer matrix on (alpha, x_1..x_s) reduced mod the ring, by repeated squaring."""
    mode = _default_mode(system, mode)
    Q, _ = system.ring(mode)
    size = system.s + 1
    result = [[int(i == j) for j in range(size)] for i in range(size)]
    base = system.linear_part()

    def mul(A, B):
        return [
            [sum(A[i][k] * B[k][j] for k in range(size)) % Q for j in range(size)] for i in range(size)
        ]

    e = n
    while e:
        if e & 1:
            result = mul(result, base)
        base = mul(base, base)
        e >>= 1
    return result


def apply_power(system: AffineTorusSystem, matrix: list[list[int]], a: Sequence, mode: str | None = None) -> tuple:
    mode = _default_mode(system, mode)
    Q, alpha = system.ring(mode)
    x = (alpha,) + system.to_ring(a, mode)
    y = [sum(matrix[j][i] * x[i] for i in range(len(x))) % Q for j in range(1, len(x))]
    return system.from_ring(y, mode)


def diagonal_eval(system: AffineTorusSystem, x: Sequence, k: int, n: int, mode: str | None = None) -> list[tuple]:
    """(x, T^n x, T^(2n) x, ..., T^(kn) x)."""
    return [orbit_point(system, x, i * n, mode) for i in range(k + 1)]


def _forward_differences(values: Sequence[int], Q: int) -> list[int]:
    d = list(values)
    out = []
    while d:
        out.append(d[0] % Q)
        d = [(b - a) for a, b in zip(d, d[1:])]
    return out


def sequence_tables(
    system: AffineTorusSystem,
    a: Sequence | None,
    mode: str,
    mult: int,
    shifts: Sequence[int],
    starts: Sequence[int],
) -> np.ndarray:
    """Difference tables for r -> T^(mult*r + h) a, one per (h, start, coordinate).

    Returns an object array of Python ints with shape (len(shifts), len(starts), s, s + 1).
    """
    Q, alpha = system.ring(mode)
    a_ring = _zero(system) if a is None else system.to_ring(a, mode)
    D = system.s + 1
    out = np.empty((len(shifts), len(starts), system.s, D), dtype=object)
    for hi_, h in enumerate(shifts):
        for si, r0 in enumerate(starts):
            pts = [_closed_form(system, a_ring, mult * (r0 + d) + h, Q, alpha) for d in range(D)]
            for j in range(system.s):
                out[hi_, si, j] = _forward_differences([p[j] for p in pts], Q)
    return out


def split_fx(table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = table.reshape(-1)
    hi = np.fromiter(((int(v) >> 64) & _MASK64 for v in flat), dtype=np.uint64, count=flat.size)
    lo = np.fromiter((int(v) & _MASK64 for v in flat), dtype=np.uint64, count=flat.size)
    return hi.reshape(table.shape), lo.reshape(table.shape)


def _block_length(N: int) -> int:
    if kernels.BACKEND == "cython":
        return min(N, kernels.PREFERRED_BLOCK)
    return max(64, min(N, math.isqrt(N) + 1, kernels.PREFERRED_BLOCK * 4))


def orbit_words(
    system: AffineTorusSystem,
    a: Sequence | None,
    N: int,
    mode: str | None = None,
    start: int = 1,
    mult: int = 1,
    shift: int = 0,
) -> np.ndarray:
    """Ring values of T^(mult*n + shift) a for n = start .. start + N - 1, shape (N, s).

    exact mode gives int64 residues mod q; floating mode gives the uint64 high
    words of the 128-bit fixed-point coordinates.
    """
    mode = _default_mode(system, mode)
    L = _block_length(N)
    starts = list(range(start, start + N, L))
    tables = sequence_tables(system, a, mode, mult, [shift], starts)[0]
    P = len(starts) * system.s
    flat = tables.reshape(P, system.s + 1)
    if mode == "exact":
        q = system.q
        if q >= 1 << 62:
            raise OverflowError("denominator too large for 64-bit exact kernels")
        vals = kernels.advance_mod(np.array(flat.tolist(), dtype=np.int64), q, L)
        dtype = np.int64
    else:
        hi, lo = split_fx(flat)
        vals = kernels.advance_fx(hi, lo, L)
        dtype = np.uint64
    vals = vals.reshape(len(starts), system.s, L).transpose(0, 2, 1).reshape(-1, system.s)
    return np.ascontiguousarray(vals[:N], dtype=dtype)


def words_to_float(words: np.ndarray, system: AffineTorusSystem, mode: str) -> np.ndarray:
    if mode == "exact":
        return words.astype(np.float64) / system.q
    return (words >> np.uint64(11)).astype(np.float64) * 2.0**-53


def orbit_floats(system, a, N, mode=None, start=1, mult=1, shift=0) -> np.ndarray:
    mode = _default_mode(system, mode)
    return words_to_float(orbit_words(system, a, N, mode, start, mult, shift), system, mode)


@dataclass(frozen=True)
class TorusBox:
    """Product of arcs [start_j, start_j + length_j) mod 1.  length 1 means the whole circle."""

    starts: tuple[Fraction, ...]
    lengths: tuple[Fraction, ...]

    def __post_init__(self):
        st = tuple(Fraction(x) % 1 for x in self.starts)
        ln = tuple(Fraction(x) for x in self.lengths)
        if len(st) != len(ln):
            raise ValueError("starts and lengths differ in length")
        if any(not 0 <= x <= 1 for x in ln):
            raise ValueError("arc lengths must lie in [0, 1]")
        object.__setattr__(self, "starts", st)
        object.__setattr__(self, "lengths", ln)

    @classmethod
    def from_bounds(cls, bounds: Sequence[tuple]) -> TorusBox:
        """Arcs [lo, hi) with lo <= hi <= lo + 1; negative lo wraps."""
        st, ln = [], []
        for lo, hi in bounds:
            lo, hi = Fraction(lo), Fraction(hi)
            if not lo <= hi <= lo + 1:
                raise ValueError(f"bad arc [{lo}, {hi})")
            st.append(lo)
            ln.append(hi - lo)
        return cls(tuple(st), tuple(ln))

    @classmethod
    def full(cls, s: int) -> TorusBox:
        return cls((0,) * s, (1,) * s)

    @classmethod
    def empty(cls, s: int) -> TorusBox:
        return cls((0,) * s, (0,) * s)

    @classmethod
    def cube(cls, s: int, side, center=0) -> TorusBox:
        side = Fraction(side)
        c = Fraction(center)
        return cls((c - side / 2,) * s, (side,) * s)

    @property
    def dim(self) -> int:
        return len(self.starts)

    @property
    def volume(self) -> Fraction:
        return math.prod(self.lengths, start=Fraction(1))

    def contains(self, point: Sequence) -> bool:
        for x, a, l in zip(point, self.starts, self.lengths):
            if l >= 1:
                continue
            if not (Fraction(x) - a) % 1 < l:
                return False
        return True

    def fx_bounds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(start, length, full) on the 64-bit circle."""
        lo, ln, full = [], [], []
        for a, l in zip(self.starts, self.lengths):
            s64 = math.floor(a * (1 << 64))
            e64 = math.floor((a + l) * (1 << 64))
            lo.append(s64 & _MASK64)
            ln.append(min(e64 - s64, _MASK64))
            full.append(l >= 1)
        return (
            np.array(lo, dtype=np.uint64),
            np.array(ln, dtype=np.uint64),
            np.array(full, dtype=bool),
        )

    def mask_words(self, words: np.ndarray, mode: str, q: int | None = None) -> np.ndarray:
        """Membership for ring values of shape (..., s)."""
        out = np.ones(words.shape[:-1], dtype=bool)
        if mode == "floating":
            lo, ln, full = self.fx_bounds()
            for j in range(self.dim):
                if not full[j]:
                    out &= (words[..., j] - lo[j]) < ln[j]
            return out
        for j, (a, l) in enumerate(zip(self.starts, self.lengths)):
            if l >= 1:
                continue
            den = math.lcm(a.denominator, l.denominator)
            S, Ln = int(a * den), int(l * den)
            if q * den < 1 << 62:
                x = words[..., j].astype(np.int64)
                out &= (x * den - S * q) % (q * den) < Ln * q
            else:
                x = words[..., j].astype(object)
                out &= ((x * den - S * q) % (q * den) < Ln * q).astype(bool)
        return out

    def mask_floats(self, pts: np.ndarray) -> np.ndarray:
        out = np.ones(pts.shape[:-1], dtype=bool)
        for j, (a, l) in enumerate(zip(self.starts, self.lengths)):
            if l >= 1:
                continue
            out &= np.mod(pts[..., j] - float(a), 1.0) < float(l)
        return out

    def to_json(self) -> dict[str, Any]:
        return {"starts": [str(x) for x in self.starts], "lengths": [str(x) for x in self.lengths]}

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> TorusBox:
        if "bounds" in d:
            return cls.from_bounds([(Fraction(str(a)), Fraction(str(b))) for a, b in d["bounds"]])
        return cls(tuple(Fraction(str(x)) for x in d["starts"]), tuple(Fraction(str(x)) for x in d["lengths"]))


def return_times(system: AffineTorusSystem, a, box: TorusBox, N: int, mode: str | None = None) -> np.ndarray:
    """Boolean array b with b[n-1] = [T^n a in box] for 1 <= n <= N."""
    mode = _default_mode(system, mode)
    words = orbit_words(system, a, N, mode)
    return box.mask_words(words, mode, system.q if mode == "exact" else None)


# --- manifolds of diagonal points ---------------------------------------------


def omega_sample(s: int, k: int, count: int, seed: int = 0) -> np.ndarray:
    """Haar samples of the manifold of k-step diagonal patterns, shape (count, k + 2, s).

    Block 0 is the origin.  Block r (1 <= r <= k + 1) is
    (r t_1, r^2 t_2, ..., r^k t_k, u_(r,1), ..., u_(r,s-k)) mod 1 with
    t and u independent uniform parameters.
    """
    if not 1 <= k <= s:
        raise ValueError("need 1 <= k <= s")
    rng = np.random.default_rng(seed)
    t = rng.random((count, k))
    u = rng.random((count, k + 1, s - k))
    out = np.zeros((count, k + 2, s))
    for r in range(1, k + 2):
        powers = np.array([r ** (j + 1) for j in range(k)], dtype=np.float64)
        out[:, r, :k] = np.mod(t * powers, 1.0)
        out[:, r, k:] = u[:, r - 1]
    return out


def _circ(x):
    d = np.mod(x, 1.0)
    return np.minimum(d, 1.0 - d)


def omega_member(s: int, k: int, point, tol: float = 1e-9, r_max: int | None = None) -> bool:
    """Whether blocks 0..r_max of the point satisfy the pattern relations up to tol.

    r_max defaults to k + 1 (the full manifold).  With r_max = k the test is
    membership in the projection onto the first k + 1 blocks.
    """
    P = np.asarray(point, dtype=np.float64)
    r_max = k + 1 if r_max is None else r_max
    if P.shape != (r_max + 1, s):
        raise ValueError(f"expected shape {(r_max + 1, s)}, got {P.shape}")
    if np.any(_circ(P[0]) > tol):
        return False
    for r in range(2, r_max + 1):
        for j in range(k):
            if _circ(P[r, j] - r ** (j + 1) * P[1, j]) > tol:
                return False
    return True


def omega_witness(s: int, k: int, eps: float = 0.1) -> np.ndarray:
    """A point of the (k-1)-manifold, on blocks 0..k, outside the projection of the k-manifold.

    Coordinate k of block 2 is moved off 2^k times its block 1 value; that
    coordinate is unconstrained at level k - 1.
    """
    if not 2 <= k <= s:
        raise ValueError("need 2 <= k <= s")
    P = omega_sample(s, k, 1, seed=0)[0, : k + 1].copy()
    P[2, k - 1] = np.mod(P[2, k - 1] + eps, 1.0)
    return P


def projection_strictness(s: int, k: int, samples: int = 10_000, seed: int = 0, tol: float = 1e-9) -> dict[str, Any]:
    """Checks the projection of the k-manifold sits inside the (k-1)-manifold, strictly."""
    pts = omega_sample(s, k, samples, seed)[:, : k + 1]
    worst = 0.0
    inside = 0
    for P in pts:
        if omega_member(s, k - 1, P, tol):
            inside += 1
        for r in range(2, k + 1):
            for j in range(k - 1):
                worst = max(worst, float(_circ(P[r, j] - r ** (j + 1) * P[1, j])))
    w = omega_witness(s, k)
    return {
        "s": s,
        "k": k,
        "samples": samples,
        "seed": seed,
        "inside": inside,
        "max_defect": worst,
        "witness": w.tolist(),
        "witness_in_lower": omega_member(s, k - 1, w, tol),
        "witness_in_projection": omega_member(s, k, w, tol, r_max=k),
        "strict": inside == samples
        and omega_member(s, k - 1, w, tol)
        and not omega_member(s, k, w, tol, r_max=k),
    }
