import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from came.numerics import (
    GradientEvaluationError,
    check_gradients,
    derive_seed,
    finite_diff_gradient,
    largest_remainder,
    log_sum_exp,
    make_rng,
    stable_softmax,
)

finite_vectors = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=12
)


class TestStableSoftmax:
    def test_symmetry(self):
        np.testing.assert_allclose(stable_softmax([0, 0, 0]), [1 / 3] * 3, atol=1e-15)

    def test_constant_vector_uniform(self):
        for c in (-123.4, 0.0, 7.7, 1e8):
            out = stable_softmax([c] * 5)
            np.testing.assert_allclose(out, [0.2] * 5, atol=1e-12)

    def test_ln2_case(self):
        # exp(ln 2) = 2, so the normalized pair is exactly (2/3, 1/3)
        np.testing.assert_allclose(
            stable_softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-15
        )

    def test_rejects_empty_and_nonfinite(self):
        with pytest.raises(ValueError):
            stable_softmax([])
        with pytest.raises(ValueError):
            stable_softmax([1.0, float("nan")])
        with pytest.raises(ValueError):
            stable_softmax([1.0, float("inf")])

    @given(finite_vectors)
    def test_sums_to_one(self, logits):
        out = stable_softmax(logits)
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all(out > 0) and np.all(out <= 1)

    @given(finite_vectors, st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
    def test_shift_invariance(self, logits, shift):
        base = stable_softmax(logits)
        shifted = stable_softmax(np.asarray(logits) + shift)
        np.testing.assert_allclose(base, shifted, atol=1e-12)

    def test_no_overflow_at_large_logits(self):
        out = stable_softmax([1000.0, 999.0])
        assert np.all(np.isfinite(out))


class TestLogSumExp:
    def test_single_element_exact(self):
        assert log_sum_exp([3.25]) == 3.25

    def test_two_zeros(self):
        assert abs(log_sum_exp([0.0, 0.0]) - math.log(2)) < 1e-15

    def test_shift_trick_forced(self):
        # raw exp overflows at 1000; the shifted form must not
        assert abs(log_sum_exp([1000.0, 1000.0]) - (1000.0 + math.log(2))) < 1e-12

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            log_sum_exp([])

    @given(finite_vectors)
    def test_shift_identity_and_max_bound(self, logits):
        x = np.asarray(logits)
        lse = log_sum_exp(x)
        assert lse >= x.max() - 1e-12
        assert abs(lse - (log_sum_exp(x - x.max()) + x.max())) <= 1e-12


class TestFiniteDiff:
    def test_quadratic_exact(self):
        grad = finite_diff_gradient(lambda v: float(v[0] ** 2), np.array([3.0]), h=1e-5)
        assert abs(grad[0] - 6.0) < 1e-8

    def test_constant_zero(self):
        grad = finite_diff_gradient(lambda v: 4.2, np.zeros(5), h=1e-5)
        np.testing.assert_array_equal(grad, np.zeros(5))

    def test_matches_ce_analytic(self, rng):
        from came.losses import ce_loss

        logits = rng.normal(size=9)
        target = 4
        _, analytic = ce_loss(logits, target)
        numeric = finite_diff_gradient(lambda z: ce_loss(z, target)[0], logits)
        report = check_gradients(analytic, numeric, tol=1e-4)
        assert report.passed

    def test_nonfinite_error_carries_coordinate(self):
        def f(v):
            return float("nan") if v[2] != 0 else 0.0

        with pytest.raises(GradientEvaluationError) as err:
            finite_diff_gradient(f, np.zeros(4), h=1e-3)
        assert err.value.coordinate == 2

    def test_rejects_nonpositive_step(self):
        with pytest.raises(ValueError):
            finite_diff_gradient(lambda v: 0.0, np.zeros(2), h=0.0)


class TestCheckGradients:
    def test_identical_pass(self):
        report = check_gradients([1.0, -2.0], [1.0, -2.0], tol=1e-6)
        assert report.passed and report.max_rel_error == 0.0

    def test_known_failure_value(self):
        report = check_gradients([1.0], [1.1], tol=0.01)
        assert not report.passed
        assert abs(report.max_rel_error - 0.1 / 2.1) < 1e-12

    def test_both_zero_pass(self):
        assert check_gradients(np.zeros(4), np.zeros(4), tol=1e-8).passed

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            check_gradients([1.0], [1.0, 2.0], tol=0.1)


class TestRng:
    def test_same_seed_same_stream(self):
        a = make_rng(99).normal(size=32)
        b = make_rng(99).normal(size=32)
        np.testing.assert_array_equal(a, b)

    def test_cross_process_identical(self):
        code = (
            "from came.numerics import make_rng;"
            "print(make_rng(5).integers(0, 2**60, 8).tolist())"
        )
        outs = {
            subprocess.run(
                [sys.executable, "-c", code], capture_output=True, text=True, check=True
            ).stdout
            for _ in range(2)
        }
        assert len(outs) == 1

    def test_derive_seed_stable_and_distinct(self):
        assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
        assert derive_seed(0, 1, 2) != derive_seed(0, 1, 3)
        assert derive_seed(0, 1) != derive_seed(1, 1)


class TestLargestRemainder:
    @given(
        st.lists(st.floats(min_value=0.01, max_value=100), min_size=1, max_size=20),
        st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=200)
    def test_sums_exactly(self, weights, total):
        counts = largest_remainder(weights, total)
        assert counts.sum() == total
        assert np.all(counts >= 0)

    def test_exact_proportions(self):
        np.testing.assert_array_equal(largest_remainder([6, 3, 2], 1100), [600, 300, 200])
