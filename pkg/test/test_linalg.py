import numpy as np
import pytest

from riiu.errors import ConvergenceError, InsufficientDataError
from riiu.linalg import (
    RngStream,
    as_matrix,
    as_vector,
    covariance,
    frobenius_norm,
    gelu,
    gelu_grad,
    matmul,
    sym_eig,
)


class TestRngStream:
    def test_same_seed_same_draws(self):
        a = RngStream(7).normal(size=5)
        b = RngStream(7).normal(size=5)
        np.testing.assert_array_equal(a, b)

    def test_named_substreams(self):
        rng = RngStream(7)
        a = rng.spawn("init").uniform(size=4)
        b = rng.spawn("actions").uniform(size=4)
        c = RngStream(7).spawn("init").uniform(size=4)
        assert not np.allclose(a, b)
        np.testing.assert_array_equal(a, c)

    def test_nested_spawn_differs_from_parent(self):
        rng = RngStream(3)
        assert not np.allclose(rng.spawn("a").normal(size=3), rng.spawn("a").spawn("a").normal(size=3))

    def test_negative_seed(self):
        with pytest.raises(ValueError):
            RngStream(-1)

    def test_categorical_degenerate(self):
        probs = np.array([[0.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
        np.testing.assert_array_equal(RngStream(0).categorical(probs), [2, 0])

    def test_categorical_frequencies(self):
        probs = np.tile([0.1, 0.2, 0.3, 0.4], (20000, 1))
        draws = RngStream(11).categorical(probs)
        freq = np.bincount(draws, minlength=4) / len(draws)
        np.testing.assert_allclose(freq, [0.1, 0.2, 0.3, 0.4], atol=0.02)


class TestValidation:
    def test_as_vector(self):
        np.testing.assert_array_equal(as_vector([1, 2, 3]), [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            as_vector([[1, 2]])
        with pytest.raises(ValueError):
            as_vector([1, 2], dim=3)
        with pytest.raises(ValueError):
            as_vector([1, np.nan])

    def test_as_matrix(self):
        assert as_matrix(np.eye(2)).shape == (2, 2)
        with pytest.raises(ValueError):
            as_matrix([1, 2])
        with pytest.raises(ValueError):
            as_matrix(np.eye(2), shape=(3, 3))

    def test_matmul(self):
        a = np.arange(6.0).reshape(2, 3)
        b = np.arange(3.0)
        np.testing.assert_array_equal(matmul(a, b), a @ b)
        with pytest.raises(ValueError):
            matmul(a, np.ones(2))

    def test_frobenius(self):
        assert frobenius_norm([[3.0, 0.0], [0.0, 4.0]]) == pytest.approx(5.0)


class TestCovariance:
    def test_matches_biased_numpy(self):
        z = RngStream(1).normal(size=(30, 4))
        np.testing.assert_allclose(covariance(z), np.cov(z.T, bias=True), atol=1e-12)

    def test_symmetric_psd(self):
        sigma = covariance(RngStream(2).normal(size=(10, 6)))
        np.testing.assert_array_equal(sigma, sigma.T)
        assert np.linalg.eigvalsh(sigma).min() > -1e-12

    def test_sample_order_irrelevant(self):
        z = RngStream(3).normal(size=(30, 4))
        order = np.roll(np.arange(30)[::-1], 11)
        np.testing.assert_allclose(covariance(z[order]), covariance(z), rtol=1e-12, atol=1e-14)

    def test_divides_by_sample_count(self):
        z = np.array([[1.0, 0.0], [-1.0, 0.0]])
        np.testing.assert_array_equal(covariance(z), [[1.0, 0.0], [0.0, 0.0]])

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            covariance(np.ones((1, 3)))

    def test_insufficient_is_value_error(self):
        with pytest.raises(ValueError):
            covariance(np.ones((1, 3)))


class TestSymEig:
    @pytest.mark.parametrize("method", ["jacobi", "lapack"])
    def test_reconstruction(self, method):
        a = RngStream(5).normal(size=(7, 7))
        m = a + a.T
        vals, vecs = sym_eig(m, method=method)
        np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, m, atol=1e-8)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(7), atol=1e-8)

    def test_descending_and_matches_eigh(self):
        a = RngStream(6).normal(size=(9, 9))
        m = a @ a.T
        vals, _ = sym_eig(m)
        assert np.all(np.diff(vals) <= 0)
        np.testing.assert_allclose(vals, np.linalg.eigvalsh(m)[::-1], rtol=1e-8, atol=1e-10)

    def test_sign_convention(self):
        a = RngStream(8).normal(size=(5, 5))
        _, vecs = sym_eig(a + a.T)
        rows = np.argmax(np.abs(vecs), axis=0)
        assert np.all(vecs[rows, np.arange(5)] >= 0)

    def test_methods_agree(self):
        a = RngStream(9).normal(size=(6, 6))
        m = a @ a.T
        v1, u1 = sym_eig(m, method="jacobi")
        v2, u2 = sym_eig(m, method="lapack")
        np.testing.assert_allclose(v1, v2, rtol=1e-8)
        np.testing.assert_allclose(np.abs(u1.T @ u2), np.eye(6), atol=1e-6)

    def test_diagonal_input(self):
        vals, vecs = sym_eig(np.diag([1.0, 3.0, 2.0]))
        np.testing.assert_array_equal(vals, [3.0, 2.0, 1.0])
        np.testing.assert_array_equal(np.abs(vecs), np.eye(3)[:, [1, 2, 0]])

    def test_not_symmetric(self):
        with pytest.raises(ValueError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_not_square(self):
        with pytest.raises(ValueError):
            sym_eig(np.ones((2, 3)))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            sym_eig(np.eye(2), method="qr")

    def test_no_sweeps(self):
        a = RngStream(4).normal(size=(4, 4))
        with pytest.raises(ConvergenceError):
            sym_eig(a + a.T, max_sweeps=0)


class TestGelu:
    def test_values(self):
        assert gelu(0.0) == 0.0
        assert gelu(10.0) == pytest.approx(10.0)
        assert gelu(-10.0) == pytest.approx(0.0, abs=1e-12)
        assert gelu(1.0) == pytest.approx(0.8413447460685429)

    def test_gradient(self):
        x = np.linspace(-3, 3, 13)
        h = 1e-6
        numeric = (gelu(x + h) - gelu(x - h)) / (2 * h)
        np.testing.assert_allclose(gelu_grad(x), numeric, atol=1e-8)
