from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ARCHES, tiny
from reluid.errors import ShapeError
from reluid.network import (
    Architecture,
    NetworkParams,
    activation_margin,
    default_margin_threshold,
    forward,
    forward_batch,
    integer_params,
    is_degenerate_S,
    random_params,
    sign_pattern,
)
from reluid.pathspace import check_linear_representation
from reluid.rescaling import apply_rescaling, random_rescaling


class TestArchitecture:
    def test_needs_two_layers_of_weights(self):
        with pytest.raises(ShapeError):
            Architecture((3, 2))

    def test_positive_widths(self):
        with pytest.raises(ShapeError):
            Architecture((2, 0, 1))

    def test_counts(self):
        a = Architecture((2, 3, 2))
        assert a.depth == 2
        assert a.num_edges == 12
        assert a.num_biases == 5
        assert a.num_hidden == 3
        assert list(a.hidden_units()) == [(1, 0), (1, 1), (1, 2)]


class TestParams:
    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            NetworkParams.create((1, 1, 1), [np.ones((1, 2)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])

    def test_rejects_nan(self):
        with pytest.raises(ShapeError):
            NetworkParams.create((1, 1, 1), [np.array([[np.nan]]), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])

    def test_read_only(self, chain):
        with pytest.raises(ValueError):
            chain.weights[0][0, 0] = 3.0

    @pytest.mark.parametrize("sizes", ARCHES)
    def test_vector_round_trip(self, sizes, rng):
        p = random_params(sizes, rng)
        q = NetworkParams.from_vector(p.arch, p.to_vector())
        np.testing.assert_array_equal(p.to_vector(), q.to_vector())

    def test_fractions_switch_to_exact(self):
        p = NetworkParams.create((1, 1, 1), [[[Fraction(1, 3)]], [[1]]], [[0], [0]])
        assert p.is_exact
        assert p.weight(2)[0, 0] == Fraction(1)


class TestForward:
    def test_identity_chain(self, chain):
        out, tr = forward(chain, [2.0])
        assert out[0] == 2.0
        assert tr.bits[0][0] == 1

    def test_dead_relu(self, chain):
        out, tr = forward(chain, [-2.0])
        assert out[0] == 0.0
        assert tr.bits[0][0] == 0

    def test_tie_is_active(self, chain):
        _, tr = forward(chain, [0.0])
        assert tr.bits[0][0] == 1

    def test_input_shape_error(self, chain):
        with pytest.raises(ShapeError):
            forward(chain, [1.0, 2.0])

    def test_matches_exact_path_sum(self, rng):
        p = integer_params((2, 3, 2), rng)
        X = [[Fraction(int(a)), Fraction(int(b))] for a, b in rng.integers(-4, 5, size=(4, 2))]
        assert check_linear_representation(p, X, rel_tol=0).residual == 0

    @pytest.mark.parametrize("sizes", ARCHES)
    def test_relu_consistency(self, sizes, rng):
        p = random_params(sizes, rng)
        _, tr = forward_batch(p, rng.standard_normal((6, sizes[0])))
        for z, f, a in zip(tr.preactivations, tr.activations, tr.bits):
            np.testing.assert_array_equal(a, (z >= 0).astype(int))
            np.testing.assert_array_equal(f, z * a)
        np.testing.assert_array_equal(tr.activations[-1], tr.preactivations[-1])

    @settings(max_examples=30, deadline=None)
    @given(c=st.floats(0.01, 100.0), seed=st.integers(0, 10**6))
    def test_positive_homogeneity_without_biases(self, c, seed):
        rng = np.random.default_rng(seed)
        p = random_params((3, 4, 2), rng)
        p = p.replace(biases=[np.zeros_like(b) for b in p.biases])
        x = rng.standard_normal(3)
        np.testing.assert_allclose(forward(p, c * x)[0], c * forward(p, x)[0], rtol=1e-10, atol=1e-12)


class TestDegeneracy:
    def test_zero_inflow_and_bias(self):
        assert is_degenerate_S(tiny(w01=0, b1=0), 0) == (True, [(1, 0)])

    def test_nondegenerate(self, chain):
        assert is_degenerate_S(chain, 0) == (False, [])

    def test_tiny_outflow_flagged(self, rng):
        p = random_params((2, 3, 2), rng)
        W2 = np.array(p.weight(2))
        W2[:, 1] = 1e-12
        p = p.replace(weights=[p.weight(1), W2])
        assert is_degenerate_S(p, 1e-9) == (True, [(1, 1)])

    def test_default_tolerance_scales(self, rng):
        p = random_params((2, 3, 2), rng, scale=1e6)
        assert not is_degenerate_S(p)[0]


class TestMargin:
    def test_tiny_margin(self, chain):
        m = activation_margin(chain, [[2.0]])
        assert m.value == 2.0
        assert (m.input_index, m.neuron) == (0, (1, 0))

    def test_on_boundary(self, chain):
        assert activation_margin(chain, [[0.0]]).value == 0.0

    def test_matches_traces(self, rng):
        p = random_params((2, 3, 2), rng)
        X = rng.standard_normal((5, 2))
        z = np.array([forward(p, x)[1].preactivations[0] for x in X])
        m = activation_margin(p, X)
        assert z.size == 15
        assert m.value == np.min(np.abs(z))
        assert abs(z[m.input_index, m.neuron[1]]) == m.value

    def test_threshold(self, chain):
        assert default_margin_threshold(chain, [[2.0], [-5.0]]) == pytest.approx(6e-6)


class TestSigns:
    def test_mixed(self):
        s = sign_pattern(tiny(1, -1, 0, 2))
        np.testing.assert_array_equal(s.as_vector(), [1, -1, 0, 1])

    def test_zero(self):
        assert not np.any(sign_pattern(tiny(0, 0, 0, 0)).as_vector())

    @pytest.mark.parametrize("seed", range(5))
    def test_positive_rescaling_keeps_signs(self, seed):
        p = random_params((2, 3, 3, 2), np.random.default_rng(seed))
        q = apply_rescaling(p, random_rescaling(p.arch, seed))
        assert sign_pattern(p) == sign_pattern(q)
