from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from critbatch.estimator import (
    REFERENCE_ESTIMATES, EstimatorError, infer_ratio, multiplier, power_of_two_bracket, predict_bstar,
    reference_transfers, transfer,
)

A1, A3 = Fraction(1, 4), Fraction(3, 4)


class TestRatio:
    def test_worked_example(self):
        r = infer_ratio(A1, "decay1", 16)
        assert r.ratio == pytest.approx(8 / 3, rel=1e-12)
        p = predict_bstar(r, A3, "decay3")
        assert p.b_star == pytest.approx(24, rel=1e-12)
        assert p.bracket == (16, 32)

    def test_inverse_from_decay3(self):
        assert infer_ratio(A3, "decay3", 24).ratio == pytest.approx(8 / 3, rel=1e-12)

    def test_multipliers(self):
        assert multiplier(A1, "decay1") == 6
        assert multiplier(A3, "decay3") == 9
        assert predict_bstar(1.0, A3, "decay3").b_star == 9
        assert predict_bstar(8 / 3, A1, "decay1").b_star == pytest.approx(16)

    @pytest.mark.parametrize("a,regime", [(A3, "decay1"), (A1, "decay3"), (Fraction(1, 2), "decay1"),
                                          (A1, "decay2"), (A1, "constant")])
    def test_regime_mismatch(self, a, regime):
        with pytest.raises(EstimatorError):
            infer_ratio(a, regime, 10)

    def test_nonpositive(self):
        with pytest.raises(EstimatorError):
            infer_ratio(A1, "decay1", 0)
        with pytest.raises(EstimatorError):
            predict_bstar(-1.0, A3, "decay3")

    @given(a=st.fractions(min_value=Fraction(1, 100), max_value=Fraction(99, 100)).filter(lambda a: a != Fraction(1, 2)),
           b=st.floats(1e-3, 1e6))
    def test_round_trip(self, a, b):
        regime = "decay1" if a < Fraction(1, 2) else "decay3"
        assert predict_bstar(infer_ratio(a, regime, b), a, regime).b_star == pytest.approx(b, rel=1e-12)

    @given(r=st.floats(1e-6, 1e6))
    def test_linear_in_ratio(self, r):
        assert predict_bstar(2 * r, A3, "decay3").b_star == 2 * predict_bstar(r, A3, "decay3").b_star


class TestBracket:
    @pytest.mark.parametrize("x,expect", [(24, (16, 32)), (16, (16, 32)), (6, (4, 8)), (1, (1, 2)),
                                          (31.999, (16, 32))])
    def test_bracket(self, x, expect):
        assert power_of_two_bracket(x) == expect


class TestTable:
    def test_pipeline(self):
        got = reference_transfers()
        for task, reported in REFERENCE_ESTIMATES.items():
            assert got[task] == pytest.approx(reported, rel=1e-12)

    def test_set_sources_are_not_averaged(self):
        preds = transfer(A1, "decay1", [8, 16], A3, "decay3")
        assert [p.b_star for p in preds] == pytest.approx([12, 24])
