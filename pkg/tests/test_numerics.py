import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from falcon import numerics
from falcon.errors import ConfigError, NumericError, ShapeError

finite_matrices = arrays(
    np.float64,
    st.tuples(st.integers(1, 5), st.integers(1, 6)),
    elements=st.floats(-50, 50, allow_nan=False),
)


def _matmul_loops(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        a = np.array([[3.0, 5.0], [7.0, 9.0]])
        assert np.array_equal(numerics.matmul(np.eye(2), a), a)
        assert np.array_equal(numerics.matmul(a, np.eye(2)), a)

    def test_hand_case(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        expected = np.array([[19.0, 22.0], [43.0, 50.0]])
        assert np.array_equal(_matmul_loops(a, b), expected)
        assert np.array_equal(numerics.matmul(a, b), expected)

    def test_zero_annihilation(self):
        out = numerics.matmul(np.zeros((3, 4)), np.ones((4, 2)))
        assert np.array_equal(out, np.zeros((3, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            numerics.matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(ShapeError):
            numerics.matmul(np.ones(3), np.ones((3, 2)))

    @given(finite_matrices)
    def test_matches_loop_oracle(self, a):
        b = np.ascontiguousarray(a.T)
        assert np.allclose(numerics.matmul(a, b), _matmul_loops(a, b), atol=1e-9)


class TestSoftmaxRows:
    def test_symmetry(self):
        out = numerics.softmax_rows(np.array([[0.0, 0.0, 0.0]]))
        assert np.allclose(out, 1.0 / 3.0, atol=1e-12)

    def test_large_inputs_stable(self):
        out = numerics.softmax_rows(np.array([[1000.0, 1000.0]]))
        assert np.allclose(out, 0.5, atol=1e-12)

    def test_closed_form(self):
        out = numerics.softmax_rows(np.array([[0.0, math.log(3.0)]]))
        assert np.allclose(out, [[0.25, 0.75]], atol=1e-12)

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            numerics.softmax_rows(np.array([[np.nan, 0.0]]))

    @given(finite_matrices)
    def test_rows_sum_to_one(self, x):
        out = numerics.softmax_rows(x)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)

    @given(finite_matrices, st.floats(-30, 30, allow_nan=False))
    def test_shift_invariance(self, x, c):
        assert np.allclose(
            numerics.softmax_rows(x + c), numerics.softmax_rows(x), atol=1e-6
        )


class TestLayerNorm:
    def test_constant_row_collapses_to_beta(self):
        out = numerics.layer_norm(np.array([[5.0, 5.0, 5.0]]), np.ones(3), np.zeros(3))
        assert np.allclose(out, 0.0, atol=1e-9)

    def test_unit_variance_fixed_point(self):
        out = numerics.layer_norm(
            np.array([[1.0, -1.0]]), np.ones(2), np.zeros(2), eps=1e-12
        )
        assert np.allclose(out, [[1.0, -1.0]], atol=1e-9)

    def test_zero_gamma_gives_beta(self):
        beta = np.array([2.0, -1.0, 0.5])
        out = numerics.layer_norm(np.random.default_rng(0).normal(size=(4, 3)), np.zeros(3), beta)
        assert np.allclose(out, np.broadcast_to(beta, (4, 3)))

    def test_normalizes_rows(self):
        x = np.random.default_rng(1).normal(size=(6, 16)) * 3.0 + 2.0
        out = numerics.layer_norm(x, np.ones(16), np.zeros(16))
        assert np.abs(out.mean(axis=1)).max() < 1e-6
        assert np.allclose(out.var(axis=1), 1.0, atol=1e-3)

    def test_eps_validated(self):
        with pytest.raises(ConfigError):
            numerics.layer_norm(np.ones((1, 2)), np.ones(2), np.zeros(2), eps=0.0)

    @given(
        arrays(
            np.float64,
            st.tuples(st.integers(1, 4), st.integers(2, 8)),
            elements=st.floats(-20, 20, allow_nan=False),
        ),
        st.floats(-10, 10, allow_nan=False),
    )
    def test_shift_invariance(self, x, c):
        g = np.ones(x.shape[1])
        b = np.zeros(x.shape[1])
        assert np.allclose(
            numerics.layer_norm(x + c, g, b), numerics.layer_norm(x, g, b), atol=1e-5
        )


class TestGelu:
    def test_zero(self):
        assert numerics.gelu(0.0) == 0.0

    def test_asymptote(self):
        assert abs(numerics.gelu(10.0) / 10.0 - 1.0) < 1e-6

    def test_high_precision_value(self):
        # Frozen from a 60-digit evaluation of the stated tanh formula.
        assert numerics.gelu(1.0) == pytest.approx(0.8411919906082767, abs=1e-15)

    def test_elementwise_on_arrays(self):
        x = np.array([-2.0, 0.0, 1.0])
        out = numerics.gelu(x)
        assert out.shape == (3,)
        assert out[1] == 0.0


def _splitmix64_reference(seed, n):
    # Independent transcription kept separate from the library code.
    mask = (1 << 64) - 1
    outs = []
    state = seed & mask
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        outs.append((z ^ (z >> 31)) & mask)
    return outs


class TestSplitMix64:
    def test_reference_vector_seed0(self):
        state, out = numerics.splitmix64_next(0)
        assert out == 0xE220A8397B1DCDAF
        assert _splitmix64_reference(0, 1)[0] == out

    def test_sequence_matches_reference(self):
        rng = numerics.SplitMix64(12345)
        got = [rng.next_u64() for _ in range(16)]
        assert got == _splitmix64_reference(12345, 16)

    def test_determinism(self):
        a = numerics.SplitMix64(7)
        b = numerics.SplitMix64(7)
        assert [a.next_u64() for _ in range(8)] == [b.next_u64() for _ in range(8)]

    def test_seed_sensitivity(self):
        assert numerics.SplitMix64(0).next_u64() != numerics.SplitMix64(1).next_u64()
        assert numerics.SplitMix64(1).next_u64() == _splitmix64_reference(1, 1)[0]

    def test_bulk_matches_single_steps(self):
        a = numerics.SplitMix64(99)
        b = numerics.SplitMix64(99)
        bulk = a.fill_u64(1000)
        singles = [b.next_u64() for _ in range(1000)]
        assert bulk.tolist() == singles
        assert a.state == b.state


class TestInitUniform:
    def test_range(self):
        rng = numerics.SplitMix64(3)
        t = numerics.init_uniform((64, 64), 64, 64, rng)
        a = math.sqrt(6.0 / 128.0)
        assert t.min() >= -a and t.max() <= a

    def test_byte_identical_across_runs(self):
        t1 = numerics.init_uniform((17, 9), 17, 9, numerics.SplitMix64(5))
        t2 = numerics.init_uniform((17, 9), 17, 9, numerics.SplitMix64(5))
        assert t1.tobytes() == t2.tobytes()

    def test_empirical_mean_bound(self):
        n = 1_000_000
        rng = numerics.SplitMix64(11)
        t = numerics.init_uniform((n,), 10, 10, rng)
        a = math.sqrt(6.0 / 20.0)
        sigma = a / math.sqrt(3.0)
        assert abs(t.mean()) < 3.0 * sigma / math.sqrt(n)

    def test_fan_validated(self):
        with pytest.raises(ConfigError):
            numerics.init_uniform((2, 2), 0, 4, numerics.SplitMix64(0))
