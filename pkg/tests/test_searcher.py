from __future__ import annotations

import itertools
from fractions import Fraction

import pytest

from hindsum.nilsystem import AffineTorusSystem, TorusBox
from hindsum.setspec import NATURALS, ResidueClass, ReturnTimeSet, member
from hindsum.straus import make_straus
from hindsum.sumsets import SumsetCertificate
from hindsum.searcher import FailureTrace, SearchBudget, search_mixed, search_thmA, search_thmB, verify

SMALL = SearchBudget(window=2000, K=3, target_B_size=5, lookahead=200)
odds = ResidueClass(2, 1)
evens = ResidueClass(2, 0)


def golden_set(N):
    sys1 = AffineTorusSystem(1, Fraction(832040, 1346269))
    return ReturnTimeSet(sys1, (0,), TorusBox.from_bounds([(0, Fraction(3, 5))]), N)


def enumerate_claims(cert, A, window):
    """Every shifted subset sum the certificate promises, tested one by one."""
    B = list(cert.B)
    bad = []
    if cert.kind in ("thmA", "mixed"):
        shifts = cert.t if cert.kind == "thmA" else cert.t_tilde
        for k in range(1, cert.K + 1):
            for i in range(k, k + cert.ell + 1):
                for F in itertools.combinations(B, i):
                    v = sum(F) + shifts[k - 1]
                    if v <= window and (v < 1 or not member(A, v)):
                        bad.append((k, i, F))
    if cert.kind in ("thmB", "mixed"):
        for k in range(1, cert.K + 1):
            for i in range(1, k + 1):
                for F in itertools.combinations(B, i):
                    v = sum(F) + i * cert.s[k - 1] + cert.t[k - 1]
                    if v <= window and (v < 1 or not member(A, v)):
                        bad.append((k, i, F))
    return bad


class TestNaturals:
    def test_thmA(self):
        cert = search_thmA(NATURALS, 1, SMALL)
        assert cert.verified and list(cert.B) == [1, 2, 3, 4, 5] and cert.t == [0, 0, 0]

    def test_thmB(self):
        cert = search_thmB(NATURALS, SMALL)
        assert cert.verified and cert.s == [0, 0, 0] and cert.t == [0, 0, 0]

    def test_mixed(self):
        cert = search_mixed(NATURALS, 1, SMALL)
        assert cert.verified and cert.t_tilde == [0, 0, 0]


class TestParity:
    def test_forced_zero_fails_with_trace(self):
        budget = SearchBudget(window=2000, K=2, target_B_size=3, lookahead=200)
        for res in (search_thmA(odds, 0, budget, True), search_thmB(odds, budget, True)):
            assert isinstance(res, FailureTrace) and not res.ok
            assert res.obstruction["modulus"] == 2
            assert (res.obstruction["offset_a"] - res.obstruction["offset_b"]) % 2 == 1
            assert res.to_json()["status"] == "failure"

    def test_odds_with_shifts(self):
        cert = search_thmB(odds, SMALL)
        assert cert.verified
        assert not enumerate_claims(cert, odds, SMALL.window)
        for k in range(2, 4):
            assert all((b + cert.s[k - 1]) % 2 == 0 for b in cert.B) and cert.t[k - 1] % 2 == 1

    def test_evens_mixed(self):
        cert = search_mixed(evens, 0, SMALL)
        assert cert.verified and all(b % 2 == 0 for b in cert.B)
        assert not enumerate_claims(cert, evens, SMALL.window)


class TestReturnTimes:
    A = golden_set(10**5)
    budget = SearchBudget(window=10**5, K=3, target_B_size=6)

    @pytest.mark.parametrize("kind", ["thmA", "thmB", "mixed"])
    def test_certificates_verify(self, kind):
        if kind == "thmA":
            cert = search_thmA(self.A, 1, self.budget)
        elif kind == "thmB":
            cert = search_thmB(self.A, self.budget)
        else:
            cert = search_mixed(self.A, 1, self.budget)
        assert isinstance(cert, SumsetCertificate) and cert.verified
        assert verify(cert, self.A, self.budget.window).status == "pass"
        assert not enumerate_claims(cert, self.A, self.budget.window)

    def test_deterministic(self):
        a = search_thmA(self.A, 1, self.budget)
        b = search_thmA(self.A, 1, self.budget)
        assert a.to_json() == b.to_json()

    def test_smaller_window_still_verifies(self):
        cert = search_thmB(self.A, self.budget)
        for W in (10, 100, 1000, 50_000):
            assert verify(cert, self.A, W).status in ("pass", "vacuous")


def test_straus_thmB():
    A = make_straus([5, 13, 29])
    budget = SearchBudget(window=10**5, K=4, target_B_size=6)
    cert = search_thmB(A, budget)
    assert cert.verified and not enumerate_claims(cert, A, budget.window)


class TestVerify:
    def test_tampered(self):
        cert = search_thmA(odds, 0, SMALL)
        assert cert.verified
        bad = SumsetCertificate(cert.kind, [cert.B[0] + 1] + list(cert.B)[1:], cert.t, cert.K, cert.window, ell=cert.ell)
        assert verify(bad, odds).status == "fail"

    def test_empty(self):
        cert = SumsetCertificate("thmA", [], [0], 1, 100)
        assert verify(cert, odds).status == "vacuous"

    def test_mixed_requires_both(self):
        good_A = SumsetCertificate("mixed", [2, 4], [1, 1], 2, 100, ell=0, s=[0, 0], t_tilde=[1, 2])
        assert verify(good_A, odds).status == "fail"
        both = SumsetCertificate("mixed", [2, 4], [1, 1], 2, 100, ell=0, s=[0, 0], t_tilde=[1, 1])
        assert verify(both, odds).status == "pass"


class TestBudget:
    def test_validation(self):
        with pytest.raises(ValueError):
            SearchBudget(window=0)
        with pytest.raises(ValueError):
            SearchBudget(K=5, target_B_size=3)

    def test_negative_ell(self):
        with pytest.raises(ValueError):
            search_thmA(NATURALS, -1, SMALL)

    def test_exhausted_budget_is_a_trace(self):
        tight = SearchBudget(window=300, K=3, target_B_size=5, max_scan=2, backtrack_depth=1, lookahead=50)
        res = search_thmA(make_straus([5, 13, 29]), 2, tight, force_zero_shifts=True)
        assert isinstance(res, FailureTrace) and res.retreats <= 2
