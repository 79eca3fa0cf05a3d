from __future__ import annotations

import cmath
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hindsum.ergodic import (
    AverageEstimate,
    Constraint,
    a2_closed_forms,
    birkhoff_average,
    cond_expect_W_diag,
    cond_expect_Zj,
    default_threshold,
    ghk_seminorm,
    left_pattern,
    left_progressive_scan,
    multi_pattern,
    multiple_recurrence_average,
    multiple_right_progressive_scan,
    pattern_measure,
    pattern_measures,
    recount_pattern,
    right_pattern,
    right_progressive_scan,
    seed_pattern,
    sigma_k_integral,
    xi_k_integral,
)
from hindsum.functions import ArcSet, Box, Char, Const, Indicator, Prod, Sum
from hindsum.nilsystem import AffineTorusSystem, TorusBox, sqrt2_convergent

ALPHA = sqrt2_convergent(10**9)
SYS2 = AffineTorusSystem(2, ALPHA)
ROT = AffineTorusSystem(1, ALPHA)
CUBE = TorusBox.cube(2, Fraction(2, 5))


def point(alpha: Fraction, t: int, s: int) -> tuple[Fraction, ...]:
    """T^t 0 = (t alpha, t^2 alpha, ...) mod 1, straight from the closed form."""
    return tuple((t ** (j + 1) * alpha) % 1 for j in range(s))


def brute_pattern(alpha, s, constraints, N):
    """Pattern mass by testing every orbit point with Fractions."""
    for c in constraints:
        if c.coord == 0 and not c.box.contains(point(alpha, c.shift, s)):
            return Fraction(0)
    hits = 0
    for r in range(1, N + 1):
        if all(c.box.contains(point(alpha, c.coord * r + c.shift, s)) for c in constraints if c.coord):
            hits += 1
    return Fraction(hits, N)


class TestBirkhoff:
    def test_constant(self):
        est = birkhoff_average(SYS2, Const(1), N=1000)
        assert est.exact == 1 and est.value == 1.0

    def test_box_volume(self):
        box = TorusBox.from_bounds([(0, Fraction(1, 3)), (Fraction(1, 5), Fraction(8, 15))])
        est = birkhoff_average(AffineTorusSystem(2, "sqrt2"), Box(box), N=10**6)
        assert abs(est.value - 1 / 9) < 0.01
        assert est.drift is not None and est.drift < 0.01

    def test_exact_against_direct_count(self):
        q = 1009
        sys_ = AffineTorusSystem(2, Fraction(123, q))
        box = TorusBox.from_bounds([(Fraction(1, 7), Fraction(3, 4)), (0, Fraction(1, 2))])
        est = birkhoff_average(sys_, Box(box), N=3000)
        direct = sum(box.contains(point(Fraction(123, q), n, 2)) for n in range(1, 3001))
        assert est.exact == Fraction(direct, 3000)

    def test_character_geometric_bound(self):
        N = 5000
        est = birkhoff_average(ROT, Char((1,)), N=N, mode="floating")
        bound = 2 / (N * abs(1 - cmath.exp(2j * math.pi * float(ALPHA))))
        assert abs(est.value) <= bound


class TestXi:
    def test_constant(self):
        assert xi_k_integral(SYS2, None, 3, Const(1), N=100).exact == 1

    def test_rotation_boxes_direct_count(self):
        q = 10007
        alpha = Fraction(4567, q)
        rot = AffineTorusSystem(1, alpha)
        u1 = ArcSet.arc(Fraction(1, 10), Fraction(3, 10))
        u2 = ArcSet.arc(Fraction(1, 2), Fraction(2, 5))
        F = Indicator(0, 0, u1) * Indicator(1, 0, u2)
        est = xi_k_integral(rot, None, 2, F, N=5000)
        direct = sum(u1.contains(n * alpha) and u2.contains(2 * n * alpha) for n in range(1, 5001))
        assert est.exact == Fraction(direct, 5000)

    def test_window_start(self):
        F = Box(CUBE, 0) * Box(CUBE, 1)
        sys_ = AffineTorusSystem(2, "sqrt2")
        a = xi_k_integral(sys_, None, 2, F, N=10**6)
        b = xi_k_integral(sys_, None, 2, F, N=10**6, start=777_777)
        assert abs(a.value - b.value) < 0.01

    def test_nonnegative(self):
        F = Box(CUBE, 0) * Box(TorusBox.cube(2, Fraction(1, 10)), 1)
        assert xi_k_integral(SYS2, None, 2, F, N=2000).value >= 0

    def test_too_many_factors(self):
        with pytest.raises(ValueError):
            xi_k_integral(SYS2, None, 1, Box(CUBE, 1), N=10)


class TestConditionalExpectation:
    f1 = Const(1) + Indicator(0, 2, ArcSet.arc(0, Fraction(1, 81)))
    f2 = Const(1) + Indicator(0, 2, ArcSet.arc(Fraction(1, 9), Fraction(1, 9)))

    def test_onto_two_coordinates(self):
        assert cond_expect_Zj(self.f1, 2) == Const(Fraction(82, 81))
        assert cond_expect_Zj(self.f2, 2) == Const(Fraction(10, 9))

    def test_full_level_keeps_function(self):
        g = Box(TorusBox.cube(3, Fraction(1, 3))) + Indicator(0, 1, ArcSet.arc(0, Fraction(1, 2)))
        h = cond_expect_Zj(g, 3)
        pts = np.random.default_rng(0).random((400, 3))
        assert np.allclose(g.evaluate(lambda f, s: pts), h.evaluate(lambda f, s: pts))

    def test_diagonal_fibre(self):
        pair = self.f1 * Sum((Const(1), Indicator(1, 2, ArcSet.arc(Fraction(1, 9), Fraction(1, 9)))))
        line = {(0, 2): (1, 0), (1, 2): (9, 0)}
        assert cond_expect_W_diag(pair, line).constant == 1 + Fraction(1, 81) + Fraction(1, 9)
        assert cond_expect_W_diag(Const(1), line).constant == 1

    def test_discrepancy(self):
        forms = a2_closed_forms(Fraction(1, 81))
        assert forms["discrepancy"] == Fraction(-1, 729)
        assert forms == a2_closed_forms(Fraction(1, 81), fibre_mult=9)  # both fibres give the same numbers
        assert (1 + Fraction(1, 81)) * (1 + Fraction(1, 9)) - forms["E_pair_W"] == Fraction(1, 729)

    def test_fibre_integral_by_grid(self):
        # E(F | W) at a base point is an integral over one circle; check it against a fine grid
        F = Prod((Indicator(0, 0, ArcSet.arc(Fraction(1, 4), Fraction(1, 3))), Indicator(0, 1, ArcSet.arc(0, Fraction(1, 2)))))
        cond = cond_expect_W_diag(F, {(0, 0): (3, Fraction(1, 8))})
        base = {(0, 1): Fraction(1, 5)}
        r = (np.arange(216_000) + 0.5) / 216_000  # boundaries sit on multiples of 1/72
        grid = np.mean(ArcSet.arc(Fraction(1, 4), Fraction(1, 3)).mask_floats(3 * r + 1 / 8))
        assert abs(float(cond(base)) - grid) < 1e-9
        assert cond({(0, 1): Fraction(3, 4)}) == 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 60), st.integers(1, 60), st.integers(1, 3))
    def test_exact_vs_floating(self, a, b, j):
        f = Box(TorusBox.from_bounds([(0, Fraction(a, 61)), (Fraction(b, 61), 1), (0, Fraction(1, 2))])) + Const(Fraction(1, 3))
        g = cond_expect_Zj(f, j)
        pts = np.random.default_rng(a * b).random((50, 3))
        vals = g.evaluate(lambda factor, shift: pts)
        keep = lambda key: key[1] < j  # noqa: E731
        for x, v in zip(pts, vals):
            exact = Fraction(0)
            for t in g.terms():
                w = t.coef
                for (_, coord), s in t.arcs:
                    assert keep((0, coord))
                    w *= 1 if s.mask_floats(np.array([x[coord]]))[0] else 0
                exact += w
            assert abs(float(exact) - v) < 1e-12


class TestSigma:
    def test_vanishing_base(self):
        f0 = Box(TorusBox.cube(2, Fraction(1, 5), Fraction(1, 2)))
        est = sigma_k_integral(SYS2, (0, 0), 2, [f0, Box(CUBE), Box(CUBE)], N=1000)
        assert est.value == 0 and est.exact == 0

    def test_constants(self):
        est = sigma_k_integral(SYS2, (0, 0), 3, [Const(1)] * 4, N=100)
        assert est.exact == 1

    @pytest.mark.parametrize("i", [1, 2, 3])
    def test_marginal_bound(self, i):
        U = TorusBox.cube(2, Fraction(1, 5))
        fs = [Const(1)] * 4
        fs[i] = Box(U)
        est = sigma_k_integral(AffineTorusSystem(2, "sqrt2"), (0, 0), 3, fs, N=10**6)
        assert est.value <= i * float(U.volume) + 0.02

    def test_level_projection(self):
        f = Const(1) + Indicator(0, 1, ArcSet.arc(0, Fraction(1, 9)))
        est = sigma_k_integral(SYS2, (0, 0), 2, [Const(1), f, f], N=100, level=1)
        assert est.exact == Fraction(10, 9) ** 2


class TestSeminorm:
    @pytest.mark.parametrize("k", [0, 1, 2, 3, 4])
    def test_one(self, k):
        assert ghk_seminorm(SYS2, Const(1), k, H=8, N=2000).value == 1.0

    def test_rotation_eigenfunction(self):
        est = ghk_seminorm(AffineTorusSystem(1, "sqrt2"), Char((1,)), 2, H=16, N=20_000)
        assert abs(est.value - 1) < 0.05

    def test_quadratic_phase(self):
        sys_ = AffineTorusSystem(2, "sqrt2")
        u2 = ghk_seminorm(sys_, Char((0, 1)), 2, H=16, N=20_000).value
        u3 = ghk_seminorm(sys_, Char((0, 1)), 3, H=16, N=20_000).value
        assert u2 < 0.1 and abs(u3 - 1) < 0.1

    def test_monotone(self):
        sys_ = AffineTorusSystem(2, "sqrt2")
        f = Box(TorusBox.cube(2, Fraction(1, 2)))
        vals = [ghk_seminorm(sys_, f, k, H=8, N=5000).value for k in range(1, 4)]
        assert all(a <= b + 0.05 for a, b in zip(vals, vals[1:]))

    def test_literal_base_is_different_quantity(self):
        sys_ = AffineTorusSystem(2, "sqrt2")
        erg = ghk_seminorm(sys_, Char((0, 1)), 2, H=16, N=20_000).value
        vdc = ghk_seminorm(sys_, Char((0, 1)), 2, H=16, N=20_000, base="vdc").value
        assert vdc > erg


class TestPatterns:
    q = 1009
    alpha = Fraction(389, 1009)
    sys_ = AffineTorusSystem(2, alpha)
    boxes = [TorusBox.cube(2, Fraction(1, 2)), TorusBox.cube(2, Fraction(1, 2), Fraction(1, 4))]

    @pytest.mark.parametrize(
        "make",
        [
            lambda b: left_pattern(b, 3),
            lambda b: right_pattern(b, 5),
            lambda b: multi_pattern(b, 2, 2, 3),
            lambda b: seed_pattern(b),
            lambda b: [Constraint(0, 7, b[0]), Constraint(2, 1, b[1])],
        ],
    )
    def test_mass_matches_brute_force(self, make):
        cons = make(self.boxes)
        N = 400
        brute = brute_pattern(self.alpha, 2, cons, N)
        assert recount_pattern(self.sys_, None, cons, N) == brute
        assert abs(pattern_measure(self.sys_, None, cons, N) - float(brute)) < 1e-12

    def test_batched_masses(self):
        pats = [left_pattern(self.boxes, n) for n in range(1, 30)]
        batch = pattern_measures(self.sys_, None, pats, 300, threads=2)
        single = [pattern_measure(self.sys_, None, p, 300) for p in pats]
        assert np.allclose(batch, single)

    def test_left_pattern_shape(self):
        cons = left_pattern(self.boxes, 4)
        assert Constraint(0, 4, self.boxes[0]) in cons
        assert Constraint(1, 4, self.boxes[1]) in cons

    def test_threshold_default(self):
        assert default_threshold([CUBE]) == pytest.approx(max(1e-3, 0.1 * 0.16))
        assert default_threshold([TorusBox.cube(2, Fraction(1, 100))]) == 1e-3


class TestScans:
    def test_full_boxes_every_shift(self):
        full = [TorusBox.full(2)] * 2
        res = left_progressive_scan(SYS2, None, full, 50, N=200)
        assert [h[0] for h in res.hits] == list(range(1, 51))
        assert all(h[1] == 1.0 for h in res.hits)
        assert len(right_progressive_scan(SYS2, None, full, 20, N=200).hits) == 20
        multi = multiple_right_progressive_scan(SYS2, None, full, 2, 5, 4, N=100, max_hits=None)
        assert len(multi.hits) == 20

    def test_rotation_left_hits(self):
        arcs = [TorusBox.cube(1, Fraction(3, 10))] * 2
        res = left_progressive_scan(ROT, None, arcs, 10**4, N=5000)
        assert len(res.hits) >= 5
        q_sys = AffineTorusSystem(1, ALPHA)
        for n, v in res.hits[:5]:
            r = float(recount_pattern(q_sys, None, left_pattern(arcs, n), 5000))
            assert r / 2 <= v <= 2 * r

    def test_threshold_above_one(self):
        assert right_progressive_scan(SYS2, None, [CUBE, CUBE], 200, N=500, threshold=1.0).hits == []

    def test_tiny_boxes_bounded_by_volume(self):
        tiny = [TorusBox.cube(2, Fraction(1, 50))] * 2
        res = left_progressive_scan(SYS2, None, tiny, 300, N=2000, threshold=0.0)
        assert all(v <= float(tiny[0].volume) + 1e-12 for _, v in res.hits)

    def test_right_hits_recount(self):
        res = right_progressive_scan(SYS2, None, [CUBE, CUBE], 2000, N=5000, max_hits=5)
        assert res.hits
        for n, v in res.hits:
            r = float(recount_pattern(SYS2, None, right_pattern([CUBE, CUBE], n), 5000))
            assert r / 2 <= v <= 2 * r

    def test_multi_with_one_step_is_right_family(self):
        # with ell = 1 only n + m matters and the pattern is the right pattern with shift n + m
        res = multiple_right_progressive_scan(SYS2, None, [CUBE, CUBE], 1, 60, 60, N=2000, threshold=0.0, max_hits=None)
        right = right_progressive_scan(SYS2, None, [CUBE, CUBE], 120, N=2000, threshold=0.0)
        by_sum = {n: v for n, v in right.hits}
        for n, m, v in res.hits:
            assert v == pytest.approx(by_sum[n + m])

    def test_scan_order_and_json(self):
        res = multiple_right_progressive_scan(SYS2, None, [TorusBox.full(2)], 2, 4, 4, N=50, max_hits=6)
        sums = [n + m for n, m, _ in res.hits]
        assert sums == sorted(sums) and len(res.hits) == 6
        doc = res.to_json()
        assert doc["kind"] == "multi" and len(doc["hits"][0]) == 3


class TestMultipleRecurrence:
    def test_full(self):
        est = multiple_recurrence_average(ROT, None, 2, 2, [TorusBox.full(1)] * 2, M=5, N=100, R=10)
        assert est.value == 1.0 and isinstance(est, AverageEstimate)

    def test_rotation_positive(self):
        arcs = [TorusBox.cube(1, Fraction(9, 20))] * 2
        est = multiple_recurrence_average(AffineTorusSystem(1, "sqrt2"), None, 2, 2, arcs, M=200, N=10**4, R=64)
        assert est.value > 1e-3

    def test_shrinking(self):
        vals = []
        for side in (Fraction(1, 2), Fraction(1, 5), Fraction(1, 20)):
            arcs = [TorusBox.cube(1, side)] * 2
            vals.append(multiple_recurrence_average(AffineTorusSystem(1, "sqrt2"), None, 2, 1, arcs, M=20, N=2000, R=64).value)
        assert vals == sorted(vals, reverse=True) and vals[-1] < 0.01

    def test_box_count(self):
        with pytest.raises(ValueError):
            multiple_recurrence_average(ROT, None, 2, 1, [TorusBox.full(1)], M=2, N=2)


def test_a2_closed_forms_display():
    forms = a2_closed_forms(Fraction(1, 729))
    assert forms["coupled"] == (Fraction(1, 729) + 1) * (Fraction(1, 729) + Fraction(1, 9) + 1) * (Fraction(1, 9) + 1)
    assert forms["independent"] == (Fraction(1, 729) + 1) ** 2 * (Fraction(1, 9) + 1) ** 2
