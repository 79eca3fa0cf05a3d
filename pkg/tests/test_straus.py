from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hindsum.setspec import NATURALS, ResidueClass, from_json, member
from hindsum.straus import (
    DEFAULT_PRIMES,
    StrausSpec,
    density_bound,
    direct_search,
    make_straus,
    obstruct_residue,
    refute_fixed_B,
)


def removed_direct(primes, x):
    """x lies in p_n N + j for some 0 <= j < n (N the positive integers)."""
    for n, p in enumerate(primes, start=1):
        for j in range(n):
            if x - j >= p and (x - j) % p == 0:
                return True
    return False


def check_witness(A, B, t, w, k_lo=1, k_hi=None):
    assert set(w.F) <= set(B) and len(set(w.F)) == len(w.F) == w.k
    assert k_lo <= w.k and (k_hi is None or w.k <= k_hi)
    assert sum(w.F) == w.sum
    assert not member(A, w.sum + w.t) and w.t == t


class TestConstruction:
    def test_single_prime(self):
        A = make_straus([5])
        assert not member(A, 10) and member(A, 11)
        assert all(member(A, n) != (n % 5 == 0) for n in range(1, 200))

    def test_empty(self):
        assert make_straus([]) == NATURALS

    def test_two_primes(self):
        A = make_straus([5, 13])
        assert not member(A, 26) and not member(A, 27) and member(A, 28)

    def test_blocks_start_after_prime(self):
        # 13N + 1 starts at 14, so 1 stays while 14 and 27 are removed
        A = make_straus([5, 13])
        assert member(A, 1) and not member(A, 14) and not member(A, 27)

    @pytest.mark.parametrize("primes", [[4], [5, 5], [13, 5], [1]])
    def test_rejects(self, primes):
        with pytest.raises(ValueError):
            StrausSpec(tuple(primes))

    def test_json(self):
        A = make_straus(DEFAULT_PRIMES)
        assert from_json(A.to_json()) == A

    def test_agrees_with_modular_arithmetic(self):
        rng = np.random.default_rng(0)
        A = make_straus(DEFAULT_PRIMES)
        pts = rng.integers(1, 10**7, size=10**5)
        mask = A.mask(0, 10**7)
        assert all(bool(mask[x]) != removed_direct(DEFAULT_PRIMES, int(x)) for x in pts)

    def test_excluded_reports_block(self):
        spec = StrausSpec((5, 13))
        assert spec.excluded(27) == (13, 1)
        assert spec.excluded(28) is None


class TestDensityBound:
    def test_values(self):
        assert density_bound([5, 13, 29]) == Fraction(1023, 1885)
        assert density_bound([]) == 1
        assert density_bound([5]) == Fraction(4, 5)

    def test_decreases(self):
        ps = [5, 13, 29, 103, 211]
        vals = [density_bound(ps[:i]) for i in range(len(ps) + 1)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_count_above_bound(self):
        A = make_straus(DEFAULT_PRIMES)
        d = Fraction(int(A.mask(1, 10**6 + 1).sum()), 10**6)
        assert d >= density_bound(DEFAULT_PRIMES) - Fraction(1, 50)


class TestObstruction:
    def test_multiples_of_103(self):
        A = make_straus(DEFAULT_PRIMES)
        B = [103 * i for i in range(1, 121)]
        w = obstruct_residue(DEFAULT_PRIMES, B, 7, 1, 110)
        assert w is not None and w.prime is not None
        check_witness(A, B, 7, w, 1, 110)

    def test_hypotheses_unmet(self):
        # only two elements, each class holds one element, and 1 + t avoids every block
        assert obstruct_residue((5, 13), [1, 2], 0, 1, 2) is None

    def test_large_t(self):
        assert obstruct_residue((5, 13), list(range(1, 50)), 13, 1, 20) is None

    def test_bad_range(self):
        with pytest.raises(ValueError):
            obstruct_residue((5,), [1], 0, 2, 1)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(1, 3000), min_size=1, max_size=40, unique=True), st.integers(0, 12))
    def test_any_witness_is_genuine(self, B, t):
        A = make_straus((5, 13, 29))
        w = obstruct_residue((5, 13, 29), sorted(B), t, 1, 30)
        if w is not None:
            check_witness(A, B, t, w, 1, 30)


class TestRefutation:
    def test_odds_parity(self):
        odds = ResidueClass(2, 1)
        rep = refute_fixed_B((), [2, 4, 7], 2, 10, 100, A=odds)
        assert rep.complete
        for t, w in rep.results.items():
            assert w.k <= 2
            check_witness(odds, [2, 4, 7], t, w)

    def test_empty_B(self):
        rep = refute_fixed_B(DEFAULT_PRIMES, [], 110, 100, 10**6)
        assert rep.vacuous and not rep.complete

    def test_random_B_small(self):
        rng = np.random.default_rng(5)
        B = sorted(rng.choice(np.arange(1, 10**4 + 1), 120, replace=False).tolist())
        A = make_straus(DEFAULT_PRIMES)
        rep = refute_fixed_B(DEFAULT_PRIMES, B, 110, 20, 10**7)
        assert rep.complete
        for t, w in rep.results.items():
            check_witness(A, B, t, w, 1, 110)

    def test_report_json(self):
        rep = refute_fixed_B((5,), [5, 10], 1, 1, 100)
        doc = rep.to_json()
        assert set(doc["violations"]) == {"0", "1"}

    def test_direct_search_oracle(self):
        A = make_straus((5,))
        w = direct_search(A, [1, 2, 3], 0, 2, 100)
        assert w is not None and sum(w.F) % 5 == 0
