import numpy as np
import pytest

from hiersum.numerics import (
    ShapeError,
    affine,
    make_rng,
    sigmoid,
    stable_softmax,
    tanh_vec,
)


class TestAffine:
    def test_identity_and_zero(self):
        out = affine(np.eye(2), [1.0, 2.0], np.zeros((2, 2)), [5.0, 5.0], [0.0, 0.0])
        np.testing.assert_array_equal(out, [1.0, 2.0])

    def test_bias_only(self):
        out = affine(
            np.zeros((2, 3)), [9.0, 9.0, 9.0], np.zeros((2, 2)), [7.0, 7.0], [3.0, -1.0]
        )
        np.testing.assert_array_equal(out, [3.0, -1.0])

    def test_hand_case(self):
        out = affine([[1.0, 1.0], [0.0, 2.0]], [1.0, 1.0], np.eye(2), [1.0, 0.0], [0.0, 0.0])
        np.testing.assert_array_equal(out, [3.0, 2.0])

    @pytest.mark.parametrize(
        "shapes",
        [
            ((2, 3), 2, (2, 2), 2, 2),  # x too short for W
            ((2, 3), 3, (2, 4), 2, 2),  # h too short for U
            ((2, 3), 3, (3, 2), 2, 2),  # W/U output dims disagree
            ((2, 3), 3, (2, 2), 2, 3),  # bias length off
        ],
    )
    def test_shape_mismatch_rejected(self, shapes):
        w, nx, u, nh, nb = shapes
        with pytest.raises(ShapeError):
            affine(np.ones(w), np.ones(nx), np.ones(u), np.ones(nh), np.ones(nb))

    def test_linearity(self):
        rng = make_rng(11)
        for _ in range(200):
            k, d, kp = rng.integers(1, 6, size=3)
            W = rng.normal(size=(k, d))
            U = rng.normal(size=(k, kp))
            x1, x2 = rng.normal(size=(2, d))
            h1, h2 = rng.normal(size=(2, kp))
            b1, b2 = rng.normal(size=(2, k))
            joint = affine(W, x1 + x2, U, h1 + h2, b1 + b2)
            split = affine(W, x1, U, h1, b1) + affine(W, x2, U, h2, b2)
            np.testing.assert_allclose(joint, split, atol=1e-12)


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_saturation(self):
        assert abs(sigmoid(np.array([50.0]))[0] - 1.0) <= 1e-15

    def test_scalar_value(self):
        # frozen from 1 / (1 + exp(-1.5))
        np.testing.assert_allclose(
            sigmoid(np.array([1.5]))[0], 0.8175744761936437, rtol=0, atol=1e-15
        )

    def test_open_range(self):
        # float64 saturates to exactly 0/1 beyond |v| ~ 36; test inside that
        rng = make_rng(1)
        v = rng.uniform(-36, 36, size=2000)
        out = sigmoid(v)
        assert np.all(out > 0.0) and np.all(out < 1.0)

    def test_no_overflow_warnings(self):
        with np.errstate(over="raise"):
            out = sigmoid(np.array([-1e4, 1e4]))
        np.testing.assert_array_equal(out, [0.0, 1.0])


class TestTanh:
    def test_zero(self):
        assert tanh_vec(np.array([0.0]))[0] == 0.0

    def test_antisymmetry(self):
        rng = make_rng(2)
        v = rng.normal(scale=3.0, size=1000)
        np.testing.assert_array_equal(tanh_vec(-v), -tanh_vec(v))

    def test_scalar_value(self):
        np.testing.assert_allclose(
            tanh_vec(np.array([1.0]))[0], 0.7615941559557649, rtol=0, atol=1e-15
        )

    def test_open_range(self):
        rng = make_rng(3)
        out = tanh_vec(rng.uniform(-18, 18, size=2000))
        assert np.all(out > -1.0) and np.all(out < 1.0)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_array_equal(stable_softmax([0.0, 0.0]), [0.5, 0.5])

    def test_shift_invariance(self):
        rng = make_rng(4)
        for _ in range(300):
            v = rng.normal(scale=10.0, size=rng.integers(2, 7))
            c = rng.normal(scale=100.0)
            np.testing.assert_allclose(
                stable_softmax(v + c), stable_softmax(v), rtol=0, atol=1e-12
            )

    def test_scalar_values(self):
        np.testing.assert_allclose(
            stable_softmax([1.0, 2.0]),
            [0.2689414213699951, 0.7310585786300049],
            rtol=0,
            atol=1e-15,
        )

    def test_simplex_at_large_magnitudes(self):
        rng = make_rng(5)
        for _ in range(1000):
            v = rng.uniform(-1e3, 1e3, size=rng.integers(2, 6))
            p = stable_softmax(v)
            assert abs(p.sum() - 1.0) <= 1e-12
            assert np.all(p >= 0)


class TestRng:
    def test_same_seed_same_stream(self):
        a = make_rng(99).uniform(-1, 1, size=100)
        b = make_rng(99).uniform(-1, 1, size=100)
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        a = make_rng(1).uniform(-1, 1, size=100)
        b = make_rng(2).uniform(-1, 1, size=100)
        assert not np.array_equal(a, b)

    def test_uniform_bounds_exhaustive(self):
        draws = make_rng(7).uniform(-0.08, 0.08, size=1_000_000)
        assert draws.min() >= -0.08 and draws.max() <= 0.08
