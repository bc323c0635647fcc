import numpy as np
import pytest

from conftest import ARCHES, tiny
from reluid.charts import (
    build_chart,
    embed,
    in_U_theta,
    jacobian_psi,
    local_lift,
    restricted_from,
)
from reluid.errors import DegenerateParamsError, ShapeError
from reluid.linalg import numerical_rank
from reluid.network import Architecture, NetworkParams, random_params
from reluid.pathspace import lift


def dim_formula(sizes):
    return sum(a * b for a, b in zip(sizes[:-1], sizes[1:])) + sizes[-1]


class TestBuildChart:
    def test_tiny(self, chain):
        ctx = build_chart(chain)
        assert ctx.smax == {(1, 0): 0}
        assert ctx.free_edges == ((1, 0, 0),)
        assert ctx.dim == 3

    def test_232(self, rng):
        ctx = build_chart(random_params((2, 3, 2), rng))
        assert ctx.n_free == 9
        assert ctx.dim == 14 == dim_formula((2, 3, 2))

    @pytest.mark.parametrize("sizes", ARCHES + [(5, 1, 7, 2, 3), (1, 9, 1)])
    def test_dimension_identity(self, sizes, rng):
        ctx = build_chart(random_params(sizes, rng))
        a = Architecture(sizes)
        assert ctx.n_free == a.num_edges - a.num_hidden
        assert ctx.dim == dim_formula(sizes)

    def test_tie_goes_to_smallest_index(self):
        p = NetworkParams.create((1, 1, 3), [np.ones((1, 1)), np.array([[1.0], [5.0], [-5.0]])],
                                 [np.zeros(1), np.zeros(3)])
        assert build_chart(p).smax[(1, 0)] == 1

    @pytest.mark.parametrize("sizes", ARCHES)
    def test_fixed_edges_are_max_and_nonzero(self, sizes, rng):
        p = random_params(sizes, rng)
        ctx = build_chart(p)
        for (l, s, t), w in ctx.fixed_edges():
            assert l >= 2
            assert w != 0
            assert abs(w) == np.max(np.abs(p.weight(l)[:, s]))

    def test_degenerate_anchor(self):
        with pytest.raises(DegenerateParamsError):
            build_chart(tiny(w12=0))
        assert build_chart(tiny(w12=0), allow_degenerate=True).degenerate_witnesses == ((1, 0),)


class TestCoordinates:
    def test_tau_hand(self):
        np.testing.assert_array_equal(restricted_from(build_chart(tiny(3, 2, 5, 7))), [3, 5, 7])

    def test_embed_hand(self):
        ctx = build_chart(tiny(3, 2, 5, 7))
        np.testing.assert_array_equal(embed(ctx, [9.0, 0.0, 1.0]).to_vector(), [9, 2, 0, 1])

    @pytest.mark.parametrize("sizes", ARCHES)
    def test_round_trip(self, sizes, rng):
        p = random_params(sizes, rng)
        ctx = build_chart(p)
        tau = restricted_from(ctx)
        assert tau.shape == (ctx.dim,)
        np.testing.assert_array_equal(embed(ctx, tau).to_vector(), p.to_vector())

    def test_embed_injective(self, rng):
        ctx = build_chart(random_params((2, 3, 2), rng))
        for _ in range(10):
            t1, t2 = rng.standard_normal((2, ctx.dim))
            assert not np.array_equal(embed(ctx, t1).to_vector(), embed(ctx, t2).to_vector())

    def test_embed_wrong_length(self, chain):
        with pytest.raises(ShapeError):
            embed(build_chart(chain), [1.0, 2.0])

    def test_column_labels(self, chain):
        assert build_chart(chain).column_labels() == ["w[1]:0->0", "b[1]:0", "b[2]:0"]


class TestUTheta:
    def test_anchor_inside(self, rng):
        ctx = build_chart(random_params((2, 3, 2), rng))
        assert in_U_theta(ctx, restricted_from(ctx))

    def test_killed_neuron_leaves(self):
        # hidden neuron 1 of [1, 2, 1] has a single incoming edge, which is free
        p = NetworkParams.create((1, 2, 1), [np.array([[1.0], [2.0]]), np.array([[1.0, 3.0]])],
                                 [np.array([0.5, 0.5]), np.array([0.0])])
        ctx = build_chart(p)
        tau = restricted_from(ctx).copy()
        labels = ctx.column_labels()
        tau[labels.index("w[1]:0->1")] = 0.0
        tau[labels.index("b[1]:1")] = 0.0
        assert not in_U_theta(ctx, tau, tol_S=0.0)

    def test_open(self, rng):
        ctx = build_chart(random_params((2, 3, 3, 2), rng))
        tau = restricted_from(ctx)
        for _ in range(10):
            assert in_U_theta(ctx, tau + 1e-6 * rng.standard_normal(ctx.dim))


class TestLocalLift:
    @pytest.mark.parametrize("sizes", ARCHES)
    def test_at_anchor(self, sizes, rng):
        p = random_params(sizes, rng)
        ctx = build_chart(p)
        np.testing.assert_array_equal(local_lift(ctx, restricted_from(ctx)).values, lift(p).values)

    def test_composition(self, rng):
        ctx = build_chart(random_params((2, 3, 2), rng))
        tau = rng.standard_normal(ctx.dim)
        np.testing.assert_array_equal(local_lift(ctx, tau).values, lift(embed(ctx, tau)).values)

    def test_injective_probe(self, rng):
        ctx = build_chart(random_params((2, 3, 3, 2), rng))
        tau = restricted_from(ctx)
        for _ in range(10):
            t1 = tau + 0.01 * rng.standard_normal(ctx.dim)
            t2 = tau + 0.01 * rng.standard_normal(ctx.dim)
            assert np.max(np.abs(local_lift(ctx, t1).values - local_lift(ctx, t2).values)) > 0

    def test_continuity(self, rng):
        ctx = build_chart(random_params((2, 3, 2), rng))
        tau = restricted_from(ctx)
        u = rng.standard_normal(ctx.dim)
        gaps = [np.max(np.abs(local_lift(ctx, tau + u / 2**k).values - local_lift(ctx, tau).values))
                for k in range(4, 20)]
        assert np.all(np.diff(gaps) < 0)
        assert gaps[-1] < 1e-4


class TestJacobianPsi:
    def test_tiny_identity(self, chain):
        ctx = build_chart(chain)
        np.testing.assert_array_equal(jacobian_psi(ctx, restricted_from(ctx)), np.eye(3))

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        ctx = build_chart(random_params((2, 3, 3, 2), rng))
        tau = restricted_from(ctx)
        D = jacobian_psi(ctx, tau)
        FD = np.empty_like(D)
        for k in range(ctx.dim):
            h = 1e-5 * (1 + abs(tau[k]))
            e = np.zeros(ctx.dim)
            e[k] = h
            FD[:, k] = (local_lift(ctx, tau + e).vector() - local_lift(ctx, tau - e).vector()) / (2 * h)
        assert np.max(np.abs(D - FD)) <= 1e-6 * max(1.0, np.max(np.abs(D)))

    @pytest.mark.parametrize("seed", range(20))
    def test_injective_differential(self, seed):
        rng = np.random.default_rng(seed)
        sizes = ARCHES[seed % len(ARCHES)]
        ctx = build_chart(random_params(sizes, rng))
        assert numerical_rank(jacobian_psi(ctx, restricted_from(ctx))).rank == ctx.dim
