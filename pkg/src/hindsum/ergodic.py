"""Ergodic averages on affine torus systems.

The system is uniquely ergodic on its own torus, so the measures built from a
base point a are limits of orbit averages along a.  In particular

    sigma_k(f_0 x ... x f_k) = f_0(a) * lim_N (1/N) sum_n prod_i f_i(T^(i n) a)

and a set in the product space defined coordinate-wise by shifted boxes has
mass equal to a product average of box indicators along polynomial sequences,
which is exactly what the product kernel computes.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from . import kernels
from .functions import (
    ArcSet,
    Const,
    FunctionSpec,
    Indicator,
    NotExact,
    Term,
    integrate,
)
from .nilsystem import (
    AffineTorusSystem,
    TorusBox,
    _default_mode,
    orbit_floats,
    orbit_point,
    orbit_words,
    sequence_tables,
    split_fx,
    sqrt2_convergent,
)

__all__ = [
    "AverageEstimate",
    "Constraint",
    "ScanResult",
    "birkhoff_average",
    "xi_k_integral",
    "cond_expect_Zj",
    "cond_expect_W_diag",
    "sigma_k_integral",
    "ghk_seminorm",
    "pattern_measure",
    "pattern_measures",
    "recount_pattern",
    "default_threshold",
    "left_progressive_scan",
    "right_progressive_scan",
    "multiple_right_progressive_scan",
    "multiple_recurrence_average",
    "appendix_a2_repro",
    "a2_closed_forms",
    "left_pattern",
    "right_pattern",
    "multi_pattern",
    "seed_pattern",
    "REPORT_VERSION",
]

REPORT_VERSION = 1


def default_threads() -> int:
    return max(1, int(os.environ.get("HINDSUM_THREADS", "1")))


@dataclass
class AverageEstimate:
    """value at N, with the value at N/2 as a convergence self-check."""

    value: float | complex
    N: int
    M: int = 0
    window: str = "prefix"
    mode: str = "floating"
    exact: Fraction | None = None
    half_value: float | complex | None = None
    H: int | None = None

    @property
    def drift(self) -> float | None:
        if self.half_value is None:
            return None
        return abs(self.value - self.half_value)

    def to_json(self) -> dict[str, Any]:
        def enc(v):
            if isinstance(v, complex):
                return {"re": v.real, "im": v.imag}
            return v

        return {
            "value": enc(self.value),
            "N": self.N,
            "M": self.M,
            "window": self.window,
            "mode": self.mode,
            "exact": None if self.exact is None else str(self.exact),
            "half_value": enc(self.half_value),
            "H": self.H,
        }


def _real_if_possible(x: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(x) and not np.any(x.imag):
        return x.real
    return x


def _scalar(x) -> float | complex:
    x = complex(x)
    return x.real if x.imag == 0 else x


class _OrbitSampler:
    """sampler(factor, shift) -> points T^((factor+1) n + shift) a for n in the window."""

    def __init__(self, system, a, N, mode, start=1, mult_of=lambda f: f + 1):
        self.system, self.a, self.N, self.mode, self.start = system, a, N, mode, start
        self.mult_of = mult_of
        self.cache: dict[tuple[int, int], np.ndarray] = {}
        self.word_cache: dict[tuple[int, int], np.ndarray] = {}

    def words(self, factor: int, shift: int) -> np.ndarray:
        key = (factor, shift)
        if key not in self.word_cache:
            self.word_cache[key] = orbit_words(
                self.system, self.a, self.N, self.mode, self.start, self.mult_of(factor), shift
            )
        return self.word_cache[key]

    def __call__(self, factor: int, shift: int) -> np.ndarray:
        key = (factor, shift)
        if key not in self.cache:
            w = self.words(factor, shift)
            if self.mode == "exact":
                self.cache[key] = w.astype(np.float64) / self.system.q
            else:
                self.cache[key] = (w >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return self.cache[key]


def _exact_average(F: FunctionSpec, sampler: _OrbitSampler) -> Fraction:
    total = Fraction(0)
    q = sampler.system.q
    for t in F.terms():
        ok = np.ones(sampler.N, dtype=bool)
        for (factor, coord), s in t.arcs:
            ok &= s.mask_words(sampler.words(factor, 0)[:, coord], "exact", q)
        total += t.coef * int(np.count_nonzero(ok))
    return total / sampler.N


def _average(F, sampler, N, mode):
    vals = _real_if_possible(np.asarray(F.evaluate(sampler)))
    value = _scalar(vals.mean())
    half = _scalar(vals[: max(1, N // 2)].mean())
    exact = _exact_average(F, sampler) if mode == "exact" else None
    if exact is not None:
        value = float(exact)
    return value, half, exact


def birkhoff_average(
    system: AffineTorusSystem,
    F: FunctionSpec,
    a: Sequence | None = None,
    N: int = 100_000,
    mode: str | None = None,
    start: int = 1,
) -> AverageEstimate:
    """(1/N) sum_{n in [start, start+N)} F(T^n a)."""
    mode = _default_mode(system, mode)
    sampler = _OrbitSampler(system, a, N, mode, start, mult_of=lambda f: 1)
    value, half, exact = _average(F, sampler, N, mode)
    window = "prefix" if start == 1 else f"shifted:{start}"
    return AverageEstimate(value, N, 0, window, mode, exact, half)


def xi_k_integral(
    system: AffineTorusSystem,
    a: Sequence | None,
    k: int,
    F: FunctionSpec,
    N: int = 100_000,
    mode: str | None = None,
    start: int = 1,
) -> AverageEstimate:
    """Orbit average of F(T^n a, T^(2n) a, ..., T^(kn) a); factor i of F sees T^((i+1) n) a."""
    if F.nfactors > k:
        raise ValueError(f"function uses {F.nfactors} factors, only {k} available")
    mode = _default_mode(system, mode)
    sampler = _OrbitSampler(system, a, N, mode, start)
    value, half, exact = _average(F, sampler, N, mode)
    window = "prefix" if start == 1 else f"shifted:{start}"
    return AverageEstimate(value, N, 0, window, mode, exact, half)


def cond_expect_Zj(F: FunctionSpec, j: int) -> FunctionSpec:
    """Conditional expectation onto the first j coordinates, exactly.

    Coordinates j+1..s are integrated out in closed form; a function that no
    longer depends on anything comes back as a Const.
    """
    if j < 0:
        raise ValueError("j must be >= 0")
    return integrate(F, keep=lambda key: key[1] < j)


class WConditional:
    """Value of E(F | W) as a function of the coordinates fixed by the fibre."""

    def __init__(self, terms: list[Term], line: Mapping[tuple[int, int], tuple[int, Any]]):
        self.terms = terms
        self.line = {k: (int(c), Fraction(o)) for k, (c, o) in line.items()}

    @property
    def constant(self) -> Fraction | None:
        if all(key in self.line for t in self.terms for key, _ in t.arcs):
            return self()
        return None

    def __call__(self, base: Mapping[tuple[int, int], Any] | None = None) -> Fraction:
        base = {} if base is None else {k: Fraction(v) for k, v in base.items()}
        total = Fraction(0)
        for t in self.terms:
            fibre = ArcSet.full()
            weight = t.coef
            for key, s in t.arcs:
                if key in self.line:
                    c, o = self.line[key]
                    fibre = fibre.intersect(s.preimage(c, o))
                elif key in base:
                    if not s.contains(base[key]):
                        weight = Fraction(0)
                        break
                else:
                    raise ValueError(f"coordinate {key} is neither on the fibre nor in the base point")
            total += weight * fibre.length
        return total


def cond_expect_W_diag(F: FunctionSpec, line: Mapping[tuple[int, int], tuple[int, Any]]) -> WConditional:
    """Conditional expectation onto a factor whose fibres are circles r -> offset + c*r.

    line maps (factor, coordinate) to (c, offset) for every coordinate that
    moves along the fibre; the remaining coordinates are fixed by the base
    point supplied when the result is evaluated.
    """
    return WConditional(F.terms(), line)


def sigma_k_integral(
    system: AffineTorusSystem,
    a: Sequence | None,
    k: int,
    fs: Sequence[FunctionSpec],
    N: int = 100_000,
    level: int | None = None,
    mode: str | None = None,
) -> AverageEstimate:
    """sigma_k(f_0 x ... x f_k) = f_0(a) * orbit average of prod_i f_i(T^(i n) a).

    With level = j every f_i with i >= 1 is first replaced by its exact
    conditional expectation onto the first j coordinates.
    """
    if len(fs) != k + 1:
        raise ValueError(f"need {k + 1} functions, got {len(fs)}")
    mode = _default_mode(system, mode)
    pt = orbit_point(system, a, 0, mode)
    here = np.asarray([[float(x) for x in pt]])
    f0 = _scalar(np.asarray(fs[0].evaluate(lambda factor, shift: here))[0])
    parts = []
    for i, f in enumerate(fs[1:]):
        g = cond_expect_Zj(f, level) if level is not None else f
        parts.append(_on_factor(g, i))
    prod = parts[0]
    for p in parts[1:]:
        prod = prod * p
    est = xi_k_integral(system, a, k, prod, N, mode)
    if est.exact is not None:
        try:
            f0_exact = _value_at(fs[0], pt)
        except NotExact:
            est.exact = None
        else:
            est.exact *= f0_exact
            est.value = float(est.exact)
            est.half_value = None if est.half_value is None else _scalar(f0 * est.half_value)
            return est
    est.value = _scalar(f0 * est.value)
    est.half_value = None if est.half_value is None else _scalar(f0 * est.half_value)
    return est


def _value_at(f: FunctionSpec, point: Sequence) -> Fraction:
    """Exact value of a single-factor function at a rational point."""
    total = Fraction(0)
    for t in f.terms():
        if all(s.contains(point[coord]) for (_, coord), s in t.arcs):
            total += t.coef
    return total


def _on_factor(f: FunctionSpec, factor: int) -> FunctionSpec:
    """Move a single-factor function onto the given factor."""
    from . import functions as fn

    if isinstance(f, fn.Const):
        return f
    if isinstance(f, fn.Indicator):
        return fn.Indicator(factor, f.coord, f.arcs)
    if isinstance(f, fn.Box):
        return fn.Box(f.box, factor)
    if isinstance(f, fn.Char):
        return fn.Char(f.freq, factor)
    if isinstance(f, fn.Sum):
        return fn.Sum(tuple(_on_factor(x, factor) for x in f.args))
    if isinstance(f, fn.Prod):
        return fn.Prod(tuple(_on_factor(x, factor) for x in f.args))
    if isinstance(f, fn.Shifted):
        shifts = tuple([0] * factor + [f.shifts[0] if f.shifts else 0])
        return fn.Shifted(_on_factor(f.arg, factor), shifts)
    raise TypeError(f"cannot move {type(f).__name__}")


# --- uniformity seminorms -----------------------------------------------------


def _seminorm_power(g: np.ndarray, k: int, H: int, N: int, base: str) -> float:
    """Estimate of ||g||_{U^k}^(2^k) for k >= 1 on a sequence of length >= N + (k-1) H (+H)."""
    if k == 1:
        if base == "ergodic":
            return abs(np.mean(g[:N])) ** 2
        c = np.concatenate(([0], np.cumsum(np.conj(g))))
        window = c[1 + H : 1 + H + N] - c[1:1 + N]
        return max(0.0, float(np.real(np.dot(g[:N], window))) / (N * H))
    if k == 2 and base == "ergodic":
        head = g[:N]
        acc = 0.0
        for h in range(1, H + 1):
            acc += abs(np.vdot(g[h : h + N], head)) ** 2
        return acc / (H * N * N)
    acc = 0.0
    for h in range(1, H + 1):
        d = g[: g.size - h] * np.conj(g[h:])
        acc += _seminorm_power(d, k - 1, H, N, base)
    return max(0.0, acc / H)


def ghk_seminorm(
    system: AffineTorusSystem,
    f: FunctionSpec,
    k: int,
    H: int = 64,
    N: int = 100_000,
    a: Sequence | None = None,
    base: str = "ergodic",
) -> AverageEstimate:
    """Uniformity seminorm of f along the orbit of a.

    Level k+1 averages level k over multiplicative derivatives
    f * conj(f o T^h) for 1 <= h <= H.  The bottom level uses the ergodic
    identity ||g||_{U^1} = |integral of g| (base="ergodic"), estimated by the
    orbit average; base="vdc" instead averages the correlations
    integral g * conj(g o T^h) over h <= H, which converts much more slowly.
    k = 0 returns the plain average.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    mode = "floating"
    need = N + (k + 1) * H
    pts = orbit_floats(system, a, need, mode)
    g = np.asarray(f.evaluate(lambda factor, shift: _shift_rows(pts, shift, system, a)), dtype=np.complex128)
    if k == 0:
        return AverageEstimate(_scalar(g[:N].mean()), N, 0, "prefix", mode, None, None, H)
    power = _seminorm_power(g, k, H, N, base)
    half = _seminorm_power(g, k, H, max(1, N // 2), base)
    return AverageEstimate(power ** (1.0 / 2**k), N, 0, "prefix", mode, None, half ** (1.0 / 2**k), H)


def _shift_rows(pts, shift, system, a):
    if shift == 0:
        return pts
    return orbit_floats(system, a, pts.shape[0], "floating", start=1 + shift)


# --- pattern masses and progressive scans --------------------------------------


@dataclass(frozen=True)
class Constraint:
    """Coordinate c of the diagonal measure, pulled back by T^shift, must lie in box."""

    coord: int
    shift: int
    box: TorusBox


def default_threshold(boxes: Sequence[TorusBox]) -> float:
    return max(1e-3, 0.1 * float(math.prod(b.volume for b in boxes)))


class _TableCache:
    def __init__(self, system, a, start=1):
        self.system, self.a, self.start = system, a, start
        self.cache: dict[tuple[int, int], Any] = {}

    def get(self, mult: int, shift: int):
        key = (mult, shift)
        if key not in self.cache:
            tab = sequence_tables(self.system, self.a, "floating", mult, [shift], [self.start])[0, 0]
            self.cache[key] = split_fx(tab)
        return self.cache[key]


class _MembershipTable:
    """[T^t a in box] for 0 <= t <= horizon, one boolean array per distinct box."""

    def __init__(self, system, a, horizon: int):
        self.words = orbit_words(system, a, horizon + 1, "floating", start=0)
        self.masks: dict[TorusBox, np.ndarray] = {}

    def __getitem__(self, box: TorusBox) -> np.ndarray:
        if box not in self.masks:
            self.masks[box] = box.mask_words(self.words, "floating")
        return self.masks[box]


def _support(table: _MembershipTable, fixed: Sequence[Constraint], N: int) -> np.ndarray:
    """Values 1 <= r <= N satisfying every fixed constraint with coordinate > 0."""
    support = np.arange(1, N + 1, dtype=np.int64)
    for c in fixed:
        if c.coord > 0:
            support = support[table[c.box][c.coord * support + c.shift]]
    return support


def _layout_counts(table, support, layout, shifts: np.ndarray) -> np.ndarray:
    """Counts over the support of r with T^(coord r + shift) a in box for every lane.

    layout lists (coord, box) per lane; shifts has one row per pattern.
    """
    counts = np.empty(shifts.shape[0], dtype=np.int64)
    chunk = max(1, 2_000_000 // max(1, support.size))
    for lo in range(0, shifts.shape[0], chunk):
        sh = shifts[lo : lo + chunk]
        ok = np.ones((sh.shape[0], support.size), dtype=bool)
        for j, (coord, box) in enumerate(layout):
            ok &= table[box][coord * support[None, :] + sh[:, j : j + 1]]
        counts[lo : lo + chunk] = ok.sum(axis=1)
    return counts


def _fan_out(fn, n: int, threads: int) -> np.ndarray:
    """fn(index array) -> values, evaluated on contiguous parts in fixed order."""
    idx = np.arange(n)
    if threads > 1 and n > threads:
        with ThreadPoolExecutor(threads) as ex:
            return np.concatenate(list(ex.map(fn, np.array_split(idx, threads))))
    return fn(idx)


def pattern_measures(
    system: AffineTorusSystem,
    a: Sequence | None,
    patterns: Sequence[Sequence[Constraint]],
    N: int = 10_000,
    threads: int | None = None,
) -> np.ndarray:
    """Diagonal-measure mass of each pattern.

    A constraint on coordinate c with shift h asks T^(c r + h) a to lie in its
    box, for the orbit average over 1 <= r <= N; coordinate 0 is the base
    point itself, pulled back by T^h.  Every lane is a stride of one orbit, so
    membership is tabulated once along t -> T^t a.  Constraints shared by all
    patterns fix a support of r values; the rest are gathered on that support.
    """
    if not patterns:
        return np.zeros(0)
    threads = default_threads() if threads is None else threads
    horizon = max((c.coord * N + c.shift for p in patterns for c in p), default=0)
    table = _MembershipTable(system, a, horizon)
    common = [c for c in patterns[0] if all(c in p for p in patterns[1:])]
    support = _support(table, common, N)
    out = np.zeros(len(patterns))
    for i, p in enumerate(patterns):
        if any(c.coord == 0 and not table[c.box][c.shift] for c in p):
            continue
        rest = [c for c in p if c.coord > 0 and c not in common]
        layout = [(c.coord, c.box) for c in rest]
        shifts = np.array([[c.shift for c in rest]], dtype=np.int64).reshape(1, len(rest))
        out[i] = _layout_counts(table, support, layout, shifts)[0] / N
    return out


def pattern_measure(system, a, constraints: Sequence[Constraint], N: int = 10_000) -> float:
    return float(pattern_measures(system, a, [constraints], N)[0])


def _exact_orbit_coords(system: AffineTorusSystem, a, m: np.ndarray) -> np.ndarray:
    """Residues of T^m a for an int64 array of times, by direct modular arithmetic."""
    q = system.q
    if q >= 3 * 10**9:
        raise OverflowError("recount needs q below 3e9")
    x = (system.ring("exact")[1],) + (system.to_ring(a, "exact") if a is not None else (0,) * system.s)
    mm = m % q
    powers = [np.ones_like(mm)]
    for _ in range(system.s):
        powers.append(powers[-1] * mm % q)
    out = np.empty((m.size, system.s), dtype=np.int64)
    for j in range(1, system.s + 1):
        acc = np.zeros_like(mm)
        for i in range(j + 1):
            acc = (acc + (math.comb(j, i) * x[i] % q) * powers[j - i]) % q
        out[:, j - 1] = acc
    return out


def recount_pattern(system: AffineTorusSystem, a, constraints: Sequence[Constraint], N: int = 10_000) -> Fraction:
    """Independent exact count of the pattern mass: closed-form orbit points mod q, no difference tables."""
    r = np.arange(1, N + 1, dtype=np.int64)
    ok = np.ones(N, dtype=bool)
    for c in constraints:
        if c.coord == 0:
            pt = _exact_orbit_coords(system, a, np.array([c.shift], dtype=np.int64))
            if not c.box.mask_words(pt, "exact", system.q)[0]:
                return Fraction(0)
            continue
        pts = _exact_orbit_coords(system, a, c.coord * r + c.shift)
        ok &= c.box.mask_words(pts, "exact", system.q)
    return Fraction(int(np.count_nonzero(ok)), N)


@dataclass
class ScanResult:
    kind: str
    hits: list[tuple]
    threshold: float
    seed_mass: float
    N: int
    scanned: int

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "seed_mass": self.seed_mass,
            "N": self.N,
            "scanned": self.scanned,
            "hits": [list(h[:-1]) + [h[-1]] for h in self.hits],
        }


def left_pattern(boxes: Sequence[TorusBox], n: int) -> list[Constraint]:
    """(X x U_1 x ... x U_k) meet T_diag^(-n)(U_1 x ... x U_k x X)."""
    return _left_family(boxes).pattern(n)


def right_pattern(boxes: Sequence[TorusBox], n: int) -> list[Constraint]:
    """(X x U_1 x ... x U_(k-1) x X) meet T_diag^(-n)(X x X x U_1 x ... x U_(k-1))."""
    return _right_family(boxes).pattern(n)


def multi_pattern(boxes: Sequence[TorusBox], ell: int, n: int, m: int) -> list[Constraint]:
    """(X x U x X^ell) meet the pullbacks by T_diag^(n + i m) of X^(i+1) x U x X^(ell-i)."""
    return _multi_family(boxes, ell).pattern(n, m)


def seed_pattern(boxes: Sequence[TorusBox]) -> list[Constraint]:
    return [Constraint(c, 0, boxes[c - 1]) for c in range(1, len(boxes) + 1)]


@dataclass(frozen=True)
class _Family:
    """Patterns whose constraints are (coord, box, shift) with shift = cn*n + cm*m."""

    fixed: tuple[Constraint, ...]
    gates: tuple[tuple[TorusBox, int, int], ...]  # coordinate 0 constraints
    lanes: tuple[tuple[int, TorusBox, int, int], ...]

    def pattern(self, n: int, m: int = 0) -> list[Constraint]:
        cons = list(self.fixed)
        cons += [Constraint(0, cn * n + cm * m, box) for box, cn, cm in self.gates]
        cons += [Constraint(c, cn * n + cm * m, box) for c, box, cn, cm in self.lanes]
        return cons


def _left_family(boxes) -> _Family:
    k = len(boxes)
    return _Family(
        tuple(Constraint(c, 0, boxes[c - 1]) for c in range(1, k + 1)),
        ((boxes[0], 1, 0),),
        tuple((c, boxes[c], 1, 0) for c in range(1, k)),
    )


def _right_family(boxes) -> _Family:
    k = len(boxes) + 1
    return _Family(
        tuple(Constraint(c, 0, boxes[c - 1]) for c in range(1, k)),
        (),
        tuple((c, boxes[c - 2], 1, 0) for c in range(2, k + 1)),
    )


def _multi_family(boxes, ell) -> _Family:
    k = len(boxes)
    return _Family(
        tuple(Constraint(c, 0, boxes[c - 1]) for c in range(1, k + 1)),
        (),
        tuple((i + c, boxes[c - 1], 1, i) for i in range(1, ell + 1) for c in range(1, k + 1)),
    )


def _scan(kind, system, a, boxes, family: _Family, cands: np.ndarray, N, threshold, threads, max_hits=None,
          batch=65_536):
    """cands: int array of shape (P, 2) holding (n, m), scanned in row order."""
    threads = default_threads() if threads is None else threads
    threshold = default_threshold(boxes) if threshold is None else threshold
    horizon = 0
    if len(cands):
        nmax, mmax = int(cands[:, 0].max()), int(cands[:, 1].max())
        horizon = max([c.coord * N + c.shift for c in family.fixed]
                      + [c * N + cn * nmax + cm * mmax for c, _, cn, cm in family.lanes]
                      + [cn * nmax + cm * mmax for _, cn, cm in family.gates] + [0])
    table = _MembershipTable(system, a, horizon)
    support = _support(table, family.fixed, N)
    seed = support.size / N
    layout = [(c, box) for c, box, _, _ in family.lanes]
    cn = np.array([l[2] for l in family.lanes], dtype=np.int64)
    cm = np.array([l[3] for l in family.lanes], dtype=np.int64)
    hits: list[tuple] = []
    scanned = 0
    for start in range(0, len(cands), batch):
        chunk = cands[start : start + batch]
        gate = np.ones(len(chunk), dtype=bool)
        for box, gn, gm in family.gates:
            gate &= table[box][gn * chunk[:, 0] + gm * chunk[:, 1]]
        shifts = chunk[:, :1] * cn[None, :] + chunk[:, 1:2] * cm[None, :]

        def run(ix, shifts=shifts):
            return _layout_counts(table, support, layout, shifts[ix])

        vals = np.where(gate, _fan_out(run, len(chunk), threads) / N, 0.0)
        for j in np.flatnonzero(vals > threshold):
            row = tuple(int(x) for x in chunk[j][: 1 if kind != "multi" else 2])
            hits.append(row + (float(vals[j]),))
            if max_hits is not None and len(hits) >= max_hits:
                return ScanResult(kind, hits, threshold, seed, N, start + int(j) + 1)
        scanned += len(chunk)
    return ScanResult(kind, hits, threshold, seed, N, scanned)


def _single(n_max: int) -> np.ndarray:
    n = np.arange(1, n_max + 1, dtype=np.int64)
    return np.stack([n, np.zeros_like(n)], axis=1)


def left_progressive_scan(system, a, boxes, n_max, N=10_000, threshold=None, threads=None, max_hits=None):
    """Shifts n <= n_max whose left-progressive pattern mass exceeds the threshold."""
    return _scan("left", system, a, boxes, _left_family(boxes), _single(n_max), N, threshold, threads, max_hits)


def right_progressive_scan(system, a, boxes, n_max, N=10_000, threshold=None, threads=None, max_hits=None):
    """boxes are U_1..U_(k-1) for the k-th diagonal measure."""
    return _scan("right", system, a, boxes, _right_family(boxes), _single(n_max), N, threshold, threads, max_hits)


def multiple_right_progressive_scan(
    system, a, boxes, ell, n_max, m_max, N=10_000, threshold=None, threads=None, max_hits=20
):
    """Pairs (n, m) in order of n + m, then n, whose multiple pattern mass exceeds the threshold."""
    n, m = np.meshgrid(np.arange(1, n_max + 1), np.arange(1, m_max + 1), indexing="ij")
    cands = np.stack([n.ravel(), m.ravel()], axis=1).astype(np.int64)
    cands = cands[np.lexsort((cands[:, 0], cands[:, 0] + cands[:, 1]))]
    return _scan("multi", system, a, boxes, _multi_family(boxes, ell), cands, N, threshold, threads, max_hits)


def multiple_recurrence_average(
    system: AffineTorusSystem,
    a,
    k: int,
    ell: int,
    boxes: Sequence[TorusBox],
    M: int = 200,
    N: int = 10_000,
    R: int = 256,
) -> AverageEstimate:
    """(1/M) sum_m (1/N) sum_n  sigma_k(F * prod_(i<=ell) T_diag^(n + i m) F), F = 1 x 1_A1 x ... x 1_Ak.

    The inner sigma_k integral is an orbit average over r <= R.  Membership of
    every needed orbit point is tabulated once, so each (r, m) term is a
    vectorised AND over n.
    """
    if len(boxes) != k:
        raise ValueError("need one box per coordinate")
    span = k * R + ell * M + N + 2
    words = orbit_words(system, a, span, "floating", start=0)
    member = [b.mask_words(words, "floating") for b in boxes]
    total = 0
    n_idx = np.arange(1, N + 1)
    for r in range(1, R + 1):
        if not all(member[c - 1][c * r] for c in range(1, k + 1)):
            continue
        for m in range(1, M + 1):
            ok = np.ones(N, dtype=bool)
            for i in range(1, ell + 1):
                for c in range(1, k + 1):
                    ok &= member[c - 1][c * r + i * m + n_idx]
            total += int(np.count_nonzero(ok))
    value = total / (R * M * N)
    return AverageEstimate(value, N, M, "prefix", "floating")


# --- the worked three-step example ---------------------------------------------


def _a2_functions(width: Fraction):
    f1 = Const(1) + Indicator(0, 2, ArcSet.arc(0, width))
    f2 = Const(1) + Indicator(0, 2, ArcSet.arc(Fraction(1, 9), Fraction(1, 9)))
    return f1, f2


def a2_closed_forms(width: Fraction, fibre_mult: int = 8) -> dict[str, Fraction]:
    """Exact limits of the two norms for f_1 = 1 + 1_(z in (0, width)) and f_2 = 1 + 1_(z in (1/9, 2/9)).

    The first norm pairs the two blocks along their common fibre z_2 = c z_1;
    the second treats the blocks independently.
    """
    f1, f2 = _a2_functions(width)
    e1 = cond_expect_Zj(f1, 2)
    e2 = cond_expect_Zj(f2, 2)
    pair = f1 * _on_factor(f2, 1)
    line = {(0, 2): (1, 0), (1, 2): (fibre_mult, 0)}
    joint = cond_expect_W_diag(pair, line).constant
    left = cond_expect_W_diag(f1, line).constant
    right = cond_expect_W_diag(_on_factor(f2, 1), line).constant
    c1, c2 = e1.value, e2.value
    return {
        "E_f1_Z2": c1,
        "E_f2_Z2": c2,
        "E_pair_W": joint,
        "discrepancy": joint - c1 * c2,
        "coupled": left * joint * right,
        "independent": c1 * (c1 * c2) * c2,
    }


def _a2_orbit_average(system: AffineTorusSystem, width: Fraction, N: int, M: int, threads: int = 1) -> np.ndarray:
    """Per-base-point averages (1/N) sum_n G_1(S^(4n) w) G_2(S^(2n) w) G_3(S^n w), S = T x T^2.

    w runs over S^m(0) for 1 <= m <= M.  Only third coordinates matter:
    block 1 of S^j w is T^(j+m) 0 and block 2 is T^(2(j+m)) 0.
    """
    f1 = ArcSet.arc(0, width)
    f2 = ArcSet.arc(Fraction(1, 9), Fraction(1, 9))
    lanes = [(4, 1, f1), (2, 1, f1), (4, 2, f2), (2, 2, f2)]  # (mult of n, mult of m, arc)
    cache = _TableCache(system, None)
    D = system.s + 1
    hi = np.empty((M, 4, D), dtype=np.uint64)
    lo = np.empty((M, 4, D), dtype=np.uint64)
    for g in range(M):
        m = g + 1
        for j, (cn, cm, _) in enumerate(lanes):
            th, tl = cache.get(cn, cm * m)
            hi[g, j] = th[2]
            lo[g, j] = tl[2]
    arc_lo, arc_len = [], []
    for _, _, arc in lanes:
        (a, b), = arc.intervals
        s64 = math.floor(a * (1 << 64))
        arc_lo.append(s64)
        arc_len.append(math.floor(b * (1 << 64)) - s64)
    args = (
        np.array(arc_lo, dtype=np.uint64),
        np.array(arc_len, dtype=np.uint64),
        np.zeros(4, dtype=bool),
        np.ones(4),
        np.ones(4),
    )
    if threads > 1:
        chunks = np.array_split(np.arange(M), threads)
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda ix: kernels.product_average_fx(hi[ix], lo[ix], *args, N), chunks))
        return np.concatenate(parts)
    return kernels.product_average_fx(hi, lo, *args, N)


def appendix_a2_repro(
    N: int = 200_000,
    M: int = 500,
    alpha: Fraction | str | None = None,
    threads: int | None = None,
    tolerance: float = 0.02,
) -> dict[str, Any]:
    """Exact and numeric reproduction of the three-step example with multipliers (4, 2, 1).

    The exact part uses the width 1/81, for which the conditional expectations
    are 82/81, 10/9 and 1 + 1/81 + 1/9.  The displayed closed forms of the two
    norms correspond to the width 1/729; the numeric double averages are run
    for that width against those closed forms and, as a cross-check, for 1/81
    against its own closed forms.
    """
    threads = default_threads() if threads is None else threads
    alpha = sqrt2_convergent(10**12) if alpha is None else alpha
    system = AffineTorusSystem(3, alpha)
    exact = a2_closed_forms(Fraction(1, 81))
    exact_paper_fibre = a2_closed_forms(Fraction(1, 81), fibre_mult=9)
    runs = {}
    for label, width in (("width_1_729", Fraction(1, 729)), ("width_1_81", Fraction(1, 81))):
        forms = a2_closed_forms(width)
        per_point = _a2_orbit_average(system, width, N, M, threads)
        coupled = float(np.sqrt(np.mean(per_point**2)))
        independent = float(forms["E_f1_Z2"] ** 2 * forms["E_f2_Z2"] ** 2)
        spread = float(np.std(per_point) / math.sqrt(M))
        err_c = abs(coupled - float(forms["coupled"]))
        err_i = abs(independent - float(forms["independent"]))
        gap = forms["independent"] - forms["coupled"]
        resolution = max(err_c, spread)
        runs[label] = {
            "width": str(width),
            "closed_coupled": str(forms["coupled"]),
            "closed_independent": str(forms["independent"]),
            "closed_coupled_float": float(forms["coupled"]),
            "closed_independent_float": float(forms["independent"]),
            "estimate_coupled": coupled,
            "estimate_independent": independent,
            "error_coupled": err_c,
            "error_independent": err_i,
            "within_tolerance": err_c <= tolerance and err_i <= tolerance,
            "gap": str(gap),
            "gap_float": float(gap),
            "numeric_resolution": resolution,
            "gap_below_resolution": abs(float(gap)) < resolution,
        }
    A_star = (Fraction(1, 729) + 1) * (Fraction(1, 729) + Fraction(1, 9) + 1) * (Fraction(1, 9) + 1)
    B_star = (Fraction(1, 729) + 1) ** 2 * (Fraction(1, 9) + 1) ** 2
    main = runs["width_1_729"]
    note = (
        f"closed forms differ by {float(B_star - A_star):.3e}; numeric resolution at N={N}, M={M} is "
        f"{main['numeric_resolution']:.3e}, so the gap is "
        + ("below" if main["gap_below_resolution"] else "not below")
        + " numeric resolution and the separation is certified by the exact discrepancy "
        + str(exact["discrepancy"])
    )
    return {
        "version": REPORT_VERSION,
        "config": {"N": N, "M": M, "alpha": system.label, "s": 3, "multipliers": [4, 2, 1], "tolerance": tolerance},
        "exact": {k: str(v) for k, v in exact.items()},
        "exact_fibre_multiplier_9": {k: str(v) for k, v in exact_paper_fibre.items()},
        "closed_forms": {
            "A_star": str(A_star),
            "B_star": str(B_star),
            "A_star_float": float(A_star),
            "B_star_float": float(B_star),
            "gap": str(B_star - A_star),
            "gap_float": float(B_star - A_star),
            "engine_matches_display": A_star == a2_closed_forms(Fraction(1, 729))["coupled"]
            and B_star == a2_closed_forms(Fraction(1, 729))["independent"],
        },
        "numeric": runs,
        "independent_estimate_note": "the independent norm has Z2-measurable integrands, which are constants; "
        "its orbit average is exact up to rounding",
        "resolution_note": note,
    }
