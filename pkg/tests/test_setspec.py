from __future__ import annotations

import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hindsum.nilsystem import AffineTorusSystem, TorusBox
from hindsum.setspec import (
    NATURALS,
    Complement,
    ExplicitWindow,
    FolnerWindow,
    HorizonError,
    Intersection,
    ResidueClass,
    ReturnTimeSet,
    Shift,
    Union,
    as_mask,
    banach_density_estimate,
    folner_intervals,
    from_json,
    member,
    residue_obstruction,
    return_time_set,
    window_density,
)
from hindsum.straus import make_straus

odds = ResidueClass(2, 1)


def residue_specs():
    leaf = st.builds(
        lambda m, r: ResidueClass(m, r % m), st.integers(1, 12), st.integers(0, 11)
    )
    return st.recursive(
        leaf,
        lambda kids: st.one_of(
            st.builds(lambda a, b: Union((a, b)), kids, kids),
            st.builds(lambda a, b: Intersection((a, b)), kids, kids),
            st.builds(Complement, kids),
            st.builds(Shift, kids, st.integers(0, 20)),
        ),
        max_leaves=6,
    )


def naive_member(spec, n):
    """Independent recursive evaluator over the expression tree."""
    if n < 1:
        return False
    if isinstance(spec, ResidueClass):
        return n >= spec.start and n % spec.m == spec.r
    if isinstance(spec, Union):
        return any(naive_member(a, n) for a in spec.args)
    if isinstance(spec, Intersection):
        return all(naive_member(a, n) for a in spec.args)
    if isinstance(spec, Complement):
        return not naive_member(spec.arg, n)
    if isinstance(spec, Shift):
        return naive_member(spec.arg, n + spec.t)
    raise TypeError(spec)


class TestMember:
    def test_odd(self):
        assert member(odds, 7)

    def test_complement(self):
        assert not member(Complement(ResidueClass(3, 0)), 9)

    def test_straus(self):
        assert not member(make_straus([5, 13, 29]), 10)

    def test_n_below_one(self):
        with pytest.raises(ValueError):
            member(odds, 0)

    def test_horizon(self):
        w = ExplicitWindow(1, np.ones(10, dtype=bool))
        assert member(w, 10)
        with pytest.raises(HorizonError):
            member(w, 11)

    def test_shift_semantics(self):
        sh = Shift(ResidueClass(5, 0), 2)
        assert [n for n in range(1, 20) if member(sh, n)] == [3, 8, 13, 18]

    @settings(max_examples=100, deadline=None)
    @given(residue_specs())
    def test_mask_matches_naive(self, spec):
        m = spec.mask(0, 200)
        assert [bool(x) for x in m] == [naive_member(spec, n) for n in range(200)]


class TestDensity:
    def test_odds(self):
        assert window_density(odds, FolnerWindow(1, 100)) == Fraction(1, 2)

    def test_naturals(self):
        assert window_density(NATURALS, FolnerWindow(37, 91)) == 1

    def test_straus_window(self):
        d = window_density(make_straus([5, 13, 29]), FolnerWindow(1, 10**6))
        assert d >= Fraction(1023, 1885) - Fraction(1, 100)

    @settings(max_examples=50, deadline=None)
    @given(residue_specs(), st.integers(1, 500), st.integers(1, 500))
    def test_complement_density(self, spec, start, length):
        w = FolnerWindow(start, length)
        assert window_density(Complement(spec), w) == 1 - window_density(spec, w)

    @given(st.integers(1, 30), st.data())
    def test_residue_exact(self, m, data):
        r = data.draw(st.integers(0, m - 1))
        q = data.draw(st.integers(1, 40))
        assert window_density(ResidueClass(m, r), FolnerWindow(1, m * q)) == Fraction(q, m * q)

    def test_banach_odds(self):
        for L in (1, 10, 101):
            v, _ = banach_density_estimate(odds, L, 5, 3)
            assert v == Fraction(math.ceil(L / 2), L)
        v, _ = banach_density_estimate(odds, 100, 7, 13)
        assert v == Fraction(1, 2)

    def test_banach_blocks(self):
        L = 16
        bits = np.tile(np.r_[np.zeros(L, bool), np.ones(L, bool)], 20)
        v, w = banach_density_estimate(ExplicitWindow(1, bits), L, 40, 1)
        assert v == 1 and w.start == L + 1

    def test_banach_straus(self):
        from hindsum.straus import density_bound

        v, _ = banach_density_estimate(make_straus([5, 13, 29]), 10**4, 50, 10**4)
        assert v >= density_bound([5, 13, 29]) - Fraction(1, 50)


class TestFolner:
    def test_prefix(self):
        assert [(w.start, w.stop) for w in folner_intervals(3)] == [(1, 2), (1, 3), (1, 4)]

    def test_shifted(self):
        w = folner_intervals(5, ("shifted", 10))[-1]
        assert (w.start, w.stop) == (10, 15)

    def test_invariance(self):
        ratios = []
        for w in folner_intervals(1000)[::100]:
            a = set(range(w.start, w.stop))
            ratios.append(len(a & {x + 1 for x in a}) / len(a))
        assert ratios[-1] > 0.99 and ratios == sorted(ratios)

    def test_bad_window(self):
        with pytest.raises(ValueError):
            FolnerWindow(0, 3)


class TestReturnTimes:
    golden = AffineTorusSystem(1, "golden")

    def test_full_and_empty(self):
        full = return_time_set(self.golden, (0,), TorusBox.full(1), 50)
        empty = return_time_set(self.golden, (0,), TorusBox.empty(1), 50)
        assert full.bits.all() and not empty.bits.any()

    def test_golden_direct(self):
        phi = (math.sqrt(5) - 1) / 2
        A = return_time_set(self.golden, (0,), TorusBox.from_bounds([(0, Fraction(1, 2))]), 10)
        assert [member(A, n) for n in range(1, 11)] == [(n * phi) % 1 < 0.5 for n in range(1, 11)]

    def test_cache_consistency(self):
        sys2 = AffineTorusSystem(2, "sqrt2")
        A = ReturnTimeSet(sys2, (0, 0), TorusBox.cube(2, Fraction(1, 2), Fraction(1, 2)), 5000)
        assert A.verify_cache()

    def test_payload_roundtrip(self):
        A = return_time_set(self.golden, (0,), TorusBox.from_bounds([(0, Fraction(3, 5))]), 2000)
        B = from_json(json.dumps(A.to_json(include_payload=True)))
        assert np.array_equal(A.bits, B.bits) and B.verify_cache()

    def test_horizon_limit(self):
        with pytest.raises(ValueError):
            ReturnTimeSet(self.golden, (0,), TorusBox.full(1), 10**9)


@settings(max_examples=50, deadline=None)
@given(residue_specs())
def test_json_roundtrip(spec):
    back = from_json(json.dumps(spec.to_json()))
    assert np.array_equal(back.mask(0, 300), spec.mask(0, 300))


def test_window_rle_roundtrip():
    rng = np.random.default_rng(3)
    w = ExplicitWindow(5, rng.random(333) < 0.3)
    assert from_json(w.to_json()) == w


def test_as_mask_inputs():
    assert as_mask({2, 5}, 6).tolist() == [False, False, True, False, False, True, False]
    assert as_mask(lambda n: n % 3 == 0, 6).tolist() == as_mask(ResidueClass(3, 0), 6).tolist()


class TestResidueObstruction:
    def test_parity(self):
        m = as_mask(odds, 100)
        assert residue_obstruction(m, [0, 1]) == (2, 1, 0, 1)

    def test_none_for_compatible_offsets(self):
        assert residue_obstruction(as_mask(odds, 100), [0, 2, 4]) is None

    def test_none_for_naturals(self):
        assert residue_obstruction(as_mask(NATURALS, 100), [0, 1]) is None

    def test_mod_three(self):
        r = residue_obstruction(as_mask(ResidueClass(3, 2), 100), [0, 3, 5])
        assert r == (3, 2, 0, 5)
