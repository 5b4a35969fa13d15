"""Metric correctness against a naive summation oracle plus hand cases."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affectfusion.metrics import (
    DEFAULT_WEIGHTS,
    AttributeTriple,
    CccStats,
    DegenerateCccError,
    MtlWeights,
    SequenceLengthError,
    ZeroVarianceError,
    ccc,
    ccc_loss,
    masked_ccc,
    masked_mse,
    mtl_loss,
    pearson,
    per_sequence_mean_ccc,
    pooled_ccc,
)


def oracle_ccc(x, y):
    """Direct naive-summation CCC, written independently of the library path."""
    n = len(x)
    mean_x = sum(x) / n
    mean_y = sum(y) / n
    var_x = sum((v - mean_x) ** 2 for v in x) / n
    var_y = sum((v - mean_y) ** 2 for v in y) / n
    cov = sum((a - mean_x) * (b - mean_y) for a, b in zip(x, y)) / n
    return 2.0 * cov / (var_x + var_y + (mean_x - mean_y) ** 2)


def oracle_pearson(x, y):
    n = len(x)
    mean_x = sum(x) / n
    mean_y = sum(y) / n
    num = sum((a - mean_x) * (b - mean_y) for a, b in zip(x, y))
    den = math.sqrt(
        sum((v - mean_x) ** 2 for v in x) * sum((v - mean_y) ** 2 for v in y)
    )
    return num / den


class TestPearson:
    def test_identity(self):
        assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)

    def test_anticorrelation(self):
        assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_hand_case(self):
        # centered products: sum dx*dy = 4, sum dx^2 = sum dy^2 = 5 -> 0.8
        r = pearson([1, 2, 3, 4], [1, 3, 2, 4])
        assert r == pytest.approx(0.8, abs=1e-12)
        assert r == pytest.approx(oracle_pearson([1, 2, 3, 4], [1, 3, 2, 4]), abs=1e-14)

    def test_zero_variance_raises(self):
        with pytest.raises(ZeroVarianceError):
            pearson([1, 2, 3], [5, 5, 5])
        with pytest.raises(ZeroVarianceError):
            pearson([2, 2, 2], [1, 2, 3])

    def test_length_errors(self):
        with pytest.raises(SequenceLengthError):
            pearson([1, 2], [1, 2, 3])
        with pytest.raises(SequenceLengthError):
            pearson([1], [1])


class TestCcc:
    def test_perfect_agreement(self):
        assert ccc([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0, abs=1e-12)

    def test_constant_prediction_is_zero(self):
        assert ccc([1, 2, 3], [5, 5, 5]) == 0.0

    def test_hand_case_scaled(self):
        # population moments: cov=4/3, var_x=2/3, var_y=8/3, dmean^2=4
        assert ccc([1, 2, 3], [2, 4, 6]) == pytest.approx(4.0 / 11.0, abs=1e-12)

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateCccError):
            ccc([3, 3, 3], [3, 3, 3])

    def test_constant_pair_different_means(self):
        assert ccc([1, 1, 1], [2, 2, 2]) == 0.0

    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(1234)
        for _ in range(1000):
            n = int(rng.integers(2, 51))
            x = rng.normal(scale=rng.uniform(0.1, 10.0), size=n)
            y = rng.normal(
                loc=rng.uniform(-5, 5), scale=rng.uniform(0.1, 10.0), size=n
            )
            got = ccc(x, y)
            want = oracle_ccc(list(x), list(y))
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


class TestCccLoss:
    def test_identical_is_zero(self):
        assert ccc_loss([0.1, 0.5, -0.2], [0.1, 0.5, -0.2]) == pytest.approx(0.0, abs=1e-12)

    def test_hand_case(self):
        assert ccc_loss([1, 2, 3], [2, 4, 6]) == pytest.approx(7.0 / 11.0, abs=1e-12)

    def test_mirror_is_two(self):
        x = [-2.0, -1.0, 0.0, 1.0, 2.0]
        y = [2.0, 1.0, 0.0, -1.0, -2.0]
        assert ccc_loss(x, y) == pytest.approx(2.0, abs=1e-12)

    def test_range_random(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            x = rng.normal(size=10)
            y = rng.normal(size=10)
            assert 0.0 <= ccc_loss(x, y) <= 2.0


class TestMaskedCcc:
    def test_padded_frame_excluded(self):
        assert masked_ccc([1, 2, 9], [1, 2, 7], [1, 1, 0]) == pytest.approx(1.0, abs=1e-12)

    def test_full_mask_matches_ccc_bit_exact(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.normal(size=17)
            y = rng.normal(size=17)
            assert masked_ccc(x, y, np.ones(17)) == ccc(x, y)

    def test_restriction_matches_oracle(self):
        x = [1.0, 2.0, 3.0, 4.0]
        y = [1.0, 3.0, 2.0, 4.0]
        got = masked_ccc(x, y, [1, 1, 1, 1])
        assert got == pytest.approx(oracle_ccc(x, y), abs=1e-14)

    def test_too_few_valid(self):
        with pytest.raises(SequenceLengthError):
            masked_ccc([1, 2, 3], [1, 2, 3], [1, 0, 0])

    def test_masked_mse(self):
        assert masked_mse([1, 2, 10], [1, 4, 0], [1, 1, 0]) == pytest.approx(2.0)


class TestMtlLoss:
    def test_single_task_weighting(self):
        rng = np.random.default_rng(11)
        pred = rng.normal(size=(20, 3))
        truth = rng.normal(size=(20, 3))
        res = mtl_loss(pred, truth, MtlWeights(1.0, 0.0, 0.0))
        assert res.total == res.components.arousal

    def test_unit_components_sum_weights(self):
        # channel pairs built so each CCC is exactly 0 (constant prediction)
        pred = np.full((5, 3), 2.0)
        truth = np.tile(np.arange(5.0)[:, None], (1, 3))
        res = mtl_loss(pred, truth, MtlWeights(0.7, 0.2, 1.0))
        assert res.components.as_array() == pytest.approx(np.ones(3), abs=1e-12)
        assert res.total == pytest.approx(1.9, abs=1e-12)

    def test_masked_variant(self):
        rng = np.random.default_rng(12)
        pred = rng.normal(size=(10, 3))
        truth = rng.normal(size=(10, 3))
        mask = np.array([1] * 7 + [0] * 3)
        res = mtl_loss(pred, truth, DEFAULT_WEIGHTS, mask=mask)
        res_trunc = mtl_loss(pred[:7], truth[:7], DEFAULT_WEIGHTS)
        assert res.total == pytest.approx(res_trunc.total, abs=1e-14)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            mtl_loss(np.zeros((4, 2)), np.zeros((4, 2)), DEFAULT_WEIGHTS)
        with pytest.raises(SequenceLengthError):
            mtl_loss(np.zeros((4, 3)), np.zeros((5, 3)), DEFAULT_WEIGHTS)


class TestWeightTypes:
    def test_default_weights(self):
        assert DEFAULT_WEIGHTS.as_array() == pytest.approx([0.7, 0.2, 1.0])

    def test_sum_not_capped(self):
        w = MtlWeights(1.5, 2.0, 3.0)
        assert w.as_array().sum() == pytest.approx(6.5)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            MtlWeights(-0.1, 0.5, 0.5)

    def test_comparator_pins_gamma(self):
        w = MtlWeights.mtl1_comparator(0.7, 0.3)
        assert w.gamma == pytest.approx(0.0)
        w = MtlWeights.mtl1_comparator(0.2, 0.3)
        assert w.gamma == pytest.approx(0.5)

    def test_comparator_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            MtlWeights.mtl1_comparator(0.8, 0.5)


class TestCccStats:
    def test_fields(self):
        s = CccStats.from_sequences([1, 2, 3], [2, 4, 6])
        assert s.mean_x == pytest.approx(2.0)
        assert s.mean_y == pytest.approx(4.0)
        assert s.std_x == pytest.approx(math.sqrt(2.0 / 3.0), abs=1e-14)
        assert s.std_y == pytest.approx(math.sqrt(8.0 / 3.0), abs=1e-14)
        assert s.pearson == pytest.approx(1.0, abs=1e-12)
        assert s.cov_xy == pytest.approx(4.0 / 3.0, abs=1e-14)

    def test_cov_consistency(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            s = CccStats.from_sequences(rng.normal(size=9), rng.normal(size=9))
            if s.std_x > 0 and s.std_y > 0:
                assert s.cov_xy == pytest.approx(s.pearson * s.std_x * s.std_y, rel=1e-12)

    def test_constant_input_pearson_zero(self):
        s = CccStats.from_sequences([1, 1, 1], [1, 2, 3])
        assert s.pearson == 0.0
        assert s.std_x == 0.0


class TestAttributeTriple:
    def test_round_trip(self):
        t = AttributeTriple(0.1, -0.2, 0.3)
        assert AttributeTriple.from_array(t.as_array()) == t
        assert t.mean() == pytest.approx((0.1 - 0.2 + 0.3) / 3.0)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            AttributeTriple(float("nan"), 0.0, 0.0)


finite_seqs = st.lists(
    st.floats(min_value=-100.0, max_value=100.0, allow_nan=False),
    min_size=3,
    max_size=30,
)


class TestProperties:
    @given(x=finite_seqs)
    def test_self_agreement(self, x):
        if np.var(np.asarray(x)) < 1e-30:
            return
        assert ccc(x, x) == pytest.approx(1.0, abs=1e-9)

    @given(x=finite_seqs, y=finite_seqs)
    @settings(max_examples=200)
    def test_symmetry(self, x, y):
        n = min(len(x), len(y))
        xs, ys = np.asarray(x[:n]), np.asarray(y[:n])
        if np.var(xs) == 0.0 and np.var(ys) == 0.0 and xs.mean() == ys.mean():
            return
        assert ccc(xs, ys) == pytest.approx(ccc(ys, xs), rel=1e-9, abs=1e-12)

    @given(
        x=finite_seqs,
        a=st.floats(min_value=0.1, max_value=10.0),
        b=st.floats(min_value=-10.0, max_value=10.0),
    )
    def test_affine_invariance(self, x, a, b):
        xs = np.asarray(x)
        zs = a * xs + b
        ys = np.sin(xs)  # arbitrary companion signal
        if np.var(xs) < 1e-12 or np.var(zs) < 1e-12 or np.var(ys) < 1e-12:
            return
        assert ccc(zs, zs) == pytest.approx(1.0, abs=1e-9)
        mapped = ccc(zs, a * ys + b)
        assert mapped == pytest.approx(ccc(xs, ys), rel=1e-7, abs=1e-9)

    def test_attenuation(self):
        rng = np.random.default_rng(21)
        for _ in range(300):
            x = rng.normal(size=12)
            y = rng.normal(size=12) + rng.uniform(-2, 2)
            c = ccc(x, y)
            r = pearson(x, y)
            assert abs(c) <= abs(r) + 1e-12
            if r > 0:
                assert c <= r + 1e-12
