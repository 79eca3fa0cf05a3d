"""Bounded search for sumset certificates inside a concrete set.

Each search runs a fixed sequence of decisions (a shift, a shift pair or a new
element of B), alternating shifts and elements the same way the existence
arguments do.  A candidate is accepted when it satisfies every constraint that
is already decidable and a look-ahead count suggests the next element can
still be found.  The search is depth-first with a global retreat budget.

Results are re-verified by the checkers in hindsum.sumsets, which share no
state with the search.  Nothing here claims completeness: a failure only
means the budget ran out.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .setspec import as_mask, residue_obstruction
from .sumsets import (
    FiniteNatSet,
    SumsetCertificate,
    VerificationReport,
    check_thmA,
    check_thmB,
    oplus,
)

__all__ = [
    "SearchBudget",
    "FailureTrace",
    "search_thmA",
    "search_thmB",
    "search_mixed",
    "verify",
]


@dataclass(frozen=True)
class SearchBudget:
    window: int = 100_000
    max_scan: int = 2_000
    backtrack_depth: int = 200
    target_B_size: int = 6
    K: int = 3
    lookahead: int = 2_000
    threshold: float | None = None  # None: half the density of A in the window

    def __post_init__(self):
        for name in ("window", "max_scan", "backtrack_depth", "target_B_size", "K", "lookahead"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.target_B_size < self.K:
            raise ValueError("target_B_size must be at least K")

    def to_json(self) -> dict[str, Any]:
        return {
            "window": self.window,
            "max_scan": self.max_scan,
            "backtrack_depth": self.backtrack_depth,
            "target_B_size": self.target_B_size,
            "K": self.K,
            "lookahead": self.lookahead,
            "threshold": self.threshold,
        }


@dataclass
class FailureTrace:
    """Deepest state reached before the budget ran out, with the constraints in force there."""

    kind: str
    reason: str
    stage: str
    steps_done: int
    steps_total: int
    B: list[int]
    t: list[int]
    s: list[int]
    t_tilde: list[int]
    offsets: list[int]
    obstruction: dict[str, int] | None
    retreats: int
    blocked: dict[str, list[int]] | None = None

    ok = False

    def to_json(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "status": "failure",
            "reason": self.reason,
            "stage": self.stage,
            "steps_done": self.steps_done,
            "steps_total": self.steps_total,
            "B": self.B,
            "t": self.t,
            "s": self.s,
            "t_tilde": self.t_tilde,
            "offsets": self.offsets,
            "obstruction": self.obstruction,
            "retreats": self.retreats,
            "blocked_candidate": self.blocked,
        }


@dataclass
class _State:
    B: list[int] = field(default_factory=list)
    tA: list[int] = field(default_factory=list)  # shifts of the range-sum family
    tB: list[int] = field(default_factory=list)  # shifts of the restricted-sum family
    sB: list[int] = field(default_factory=list)

    def copy(self) -> _State:
        return _State(list(self.B), list(self.tA), list(self.tB), list(self.sB))


class _Search:
    def __init__(self, kind: str, A, ell: int, budget: SearchBudget, force_zero_shifts: bool):
        self.kind, self.ell, self.budget = kind, ell, budget
        self.force_zero = force_zero_shifts
        self.W = budget.window
        self.inA = as_mask(A, self.W)
        density = float(self.inA[1:].mean())
        self.threshold = 0.5 * density if budget.threshold is None else budget.threshold
        self.useA = kind in ("thmA", "mixed")
        self.useB = kind in ("thmB", "mixed")
        self.steps = self._plan()
        self.retreats = 0
        self.deepest: tuple[int, _State] = (0, _State())
        self.deepest_reason = "no candidate passed"
        self.blocked: tuple[int, _State] | None = None

    def _plan(self) -> list[tuple[str, int]]:
        K = self.budget.K
        steps: list[tuple[str, int]] = []
        if self.useA:
            steps.append(("tA", 1))
        if self.useB:
            steps.append(("tB", 1))
        for k in range(1, K + 1):
            if self.useA and k < K:
                steps.append(("tA", k + 1))
            steps.append(("b", k))
            if self.useB and k < K:
                steps.append(("tB", k + 1))
        for k in range(K + 1, self.budget.target_B_size + 1):
            steps.append(("b", k))
        return steps

    # -- constraints ------------------------------------------------------

    def _sums(self, B: list[int], j: int) -> np.ndarray:
        if j > len(B):
            return np.zeros(0, dtype=np.int64)
        return np.asarray(oplus(B, j).to_list(), dtype=np.int64)

    def offsets(self, st: _State) -> np.ndarray:
        """R such that a new element x is admissible iff x + R lies in A."""
        parts = [np.zeros(0, dtype=np.int64)]
        cache: dict[int, np.ndarray] = {}

        def S(j):
            if j not in cache:
                cache[j] = self._sums(st.B, j)
            return cache[j]

        for k, t in enumerate(st.tA, start=1):
            for i in range(k, k + self.ell + 1):
                parts.append(S(i - 1) + t)
        for k, (t, s) in enumerate(zip(st.tB, st.sB), start=1):
            for i in range(1, k + 1):
                parts.append(S(i - 1) + i * s + t)
        return np.unique(np.concatenate(parts))

    def _inside(self, vals: np.ndarray) -> bool:
        vals = vals[vals <= self.W]
        return bool(self.inA[vals].all()) if vals.size else True

    def _shift_ok(self, st: _State, fam: str, k: int) -> bool:
        if fam == "tA":
            t = st.tA[k - 1]
            return all(self._inside(self._sums(st.B, i) + t) for i in range(k, k + self.ell + 1))
        t, s = st.tB[k - 1], st.sB[k - 1]
        return all(self._inside(self._sums(st.B, i) + i * s + t) for i in range(1, k + 1))

    def score(self, st: _State) -> float:
        """Fraction of y in (max B, max B + lookahead] that could join B next."""
        R = self.offsets(st)
        lo = (max(st.B) if st.B else 0) + 1
        hi = min(lo + self.budget.lookahead, self.W - int(R.max(initial=0)) + 1)
        if hi <= lo:
            return 0.0
        ys = np.arange(lo, hi, dtype=np.int64)
        ok = np.ones(ys.size, dtype=bool)
        for r in R:
            ok &= self.inA[ys + r]
            if not ok.any():
                return 0.0
        return float(ok.sum()) / (hi - lo)

    # -- candidates -------------------------------------------------------

    def candidates(self, st: _State, step: tuple[str, int]):
        kind, k = step
        max_scan = self.budget.max_scan
        if kind == "b":
            R = self.offsets(st)
            lo = (max(st.B) if st.B else 0) + 1
            hi = min(lo + max_scan, self.W - int(R.max(initial=0)) + 1)
            if hi <= lo:
                return
            xs = np.arange(lo, hi, dtype=np.int64)
            ok = np.ones(xs.size, dtype=bool)
            for r in R:
                ok &= self.inA[xs + r]
            for x in xs[ok]:
                new = st.copy()
                new.B.append(int(x))
                yield new
        elif kind == "tA":
            base = st.tA[-1] if st.tA else 0
            for d in range(1 if self.force_zero else max_scan):
                new = st.copy()
                new.tA.append(base + d)
                if self._shift_ok(new, "tA", k):
                    yield new
        else:
            bt = st.tB[-1] if st.tB else 0
            bs = st.sB[-1] if st.sB else 0
            if self.force_zero:
                pairs = [(0, 0)]
            elif k == 1:
                # with one summand the second shift is redundant
                pairs = [(u, 0) for u in range(max_scan)]
            else:
                pairs = ((w - v, v) for w in range(max_scan) for v in range(w + 1))
            for n, (u, v) in enumerate(pairs):
                if n >= max_scan:
                    break
                new = st.copy()
                new.tB.append(bt + u)
                new.sB.append(bs + v)
                if self._shift_ok(new, "tB", k):
                    yield new

    # -- driver -----------------------------------------------------------

    def run(self) -> _State | None:
        return self._dfs(_State(), 0)

    def _dfs(self, st: _State, depth: int) -> _State | None:
        if depth > self.deepest[0]:
            self.deepest = (depth, st)
        if depth == len(self.steps):
            return st
        last = depth == len(self.steps) - 1
        tried = False
        for cand in self.candidates(st, self.steps[depth]):
            if not last and self.score(cand) < self.threshold:
                if self.blocked is None or depth > self.blocked[0]:
                    self.blocked = (depth, cand)
                continue
            if tried:
                self.retreats += 1
                if self.retreats > self.budget.backtrack_depth:
                    self.deepest_reason = "backtrack budget exhausted"
                    return None
            tried = True
            out = self._dfs(cand, depth + 1)
            if out is not None:
                return out
            if self.retreats > self.budget.backtrack_depth:
                return None
        return None

    def trace(self) -> FailureTrace:
        depth, st = self.deepest
        step = self.steps[depth] if depth < len(self.steps) else ("done", 0)
        # the constraints that starved the look-ahead at the deepest stage, if any
        blocked = self.blocked[1] if self.blocked is not None and self.blocked[0] >= depth else None
        R = self.offsets(blocked if blocked is not None else st)
        found = residue_obstruction(self.inA, [int(r) for r in R])
        obstruction = None
        if found is not None:
            m, r, oa, ob = found
            obstruction = {"modulus": m, "residue": r, "offset_a": oa, "offset_b": ob}
        return FailureTrace(
            kind=self.kind,
            reason=self.deepest_reason,
            stage=f"{step[0]}[{step[1]}]",
            steps_done=depth,
            steps_total=len(self.steps),
            B=list(st.B),
            t=list(st.tB if self.useB else st.tA),
            s=list(st.sB),
            t_tilde=list(st.tA) if self.kind == "mixed" else [],
            offsets=[int(r) for r in R],
            obstruction=obstruction,
            retreats=self.retreats,
            blocked=None if blocked is None else {
                "B": list(blocked.B), "tA": list(blocked.tA), "tB": list(blocked.tB), "sB": list(blocked.sB)
            },
        )

    def certificate(self, st: _State) -> SumsetCertificate:
        K = self.budget.K
        if self.kind == "thmA":
            return SumsetCertificate("thmA", FiniteNatSet.of(st.B), st.tA, K, self.W, ell=self.ell)
        if self.kind == "thmB":
            return SumsetCertificate("thmB", FiniteNatSet.of(st.B), st.tB, K, self.W, s=st.sB)
        return SumsetCertificate(
            "mixed", FiniteNatSet.of(st.B), st.tB, K, self.W, ell=self.ell, s=st.sB, t_tilde=st.tA
        )


def _search(kind, A, ell, budget, force_zero_shifts):
    if ell < 0:
        raise ValueError("ell must be >= 0")
    s = _Search(kind, A, ell, budget, force_zero_shifts)
    st = s.run()
    if st is None:
        return s.trace()
    cert = s.certificate(st)
    report = verify(cert, A, budget.window)
    cert.verified = report.status == "pass"
    cert.violation = report.violation
    return cert


def search_thmA(A, ell: int, budget: SearchBudget, force_zero_shifts: bool = False):
    """Returns a SumsetCertificate (re-verified) or a FailureTrace."""
    return _search("thmA", A, ell, budget, force_zero_shifts)


def search_thmB(A, budget: SearchBudget, force_zero_shifts: bool = False):
    return _search("thmB", A, 0, budget, force_zero_shifts)


def search_mixed(A, ell: int, budget: SearchBudget, force_zero_shifts: bool = False):
    return _search("mixed", A, ell, budget, force_zero_shifts)


def verify(cert: SumsetCertificate, A, window: int | None = None) -> VerificationReport:
    """Independent check of a certificate; a mixed certificate must pass both checks."""
    if cert.kind == "thmA":
        return check_thmA(A, cert, window)
    if cert.kind == "thmB":
        return check_thmB(A, cert, window)
    ra = check_thmA(A, cert, window)
    rb = check_thmB(A, cert, window)
    for r in (ra, rb):
        if r.status == "fail":
            return VerificationReport("fail", "mixed", r.violation, ra.tested + rb.tested, ra.total + rb.total)
    status = "vacuous" if ra.status == rb.status == "vacuous" else "pass"
    return VerificationReport(status, "mixed", None, ra.tested + rb.tested, ra.total + rb.total)
