from fractions import Fraction

import numpy as np
import pytest

from conftest import ARCHES, tiny
from reluid.charts import build_chart, jacobian_psi, restricted_from
from reluid.identifiability import (
    Verdict,
    analyze,
    decide,
    evaluate,
    gamma_backprop,
    gamma_explicit,
    kernel_directions,
    rank_A,
)
from reluid.linalg import RankPolicy, numerical_rank
from reluid.network import integer_params, random_params
from reluid.pathspace import activation_matrix
from reluid.rescaling import apply_rescaling, random_rescaling

THREE = [[2.0], [-1.0], [5.0]]


class TestGamma:
    def test_single_input(self, chain):
        np.testing.assert_array_equal(gamma_backprop(build_chart(chain), [[2.0]]), [[2, 1, 1]])

    def test_three_inputs(self, chain):
        G = gamma_backprop(build_chart(chain), THREE)
        np.testing.assert_array_equal(G, [[2, 1, 1], [0, 0, 1], [5, 1, 1]])
        assert numerical_rank(G).rank == 3

    def test_explicit_matches_on_tiny(self, chain):
        ctx = build_chart(chain)
        np.testing.assert_array_equal(gamma_explicit(ctx, THREE), gamma_backprop(ctx, THREE))

    def test_output_bias_column_is_one(self, rng):
        p = random_params((2, 3, 2), rng)
        ctx = build_chart(p)
        G = gamma_explicit(ctx, rng.standard_normal((4, 2)))
        out_cols = [ctx.n_free + j for j, (l, _) in enumerate(ctx.bias_units) if l == 2]
        np.testing.assert_array_equal(G[:, out_cols], np.tile(np.eye(2), (4, 1)))

    @pytest.mark.parametrize("seed", range(10))
    def test_cross_formula(self, seed):
        rng = np.random.default_rng(seed)
        sizes = ARCHES[seed % len(ARCHES)]
        ctx = build_chart(random_params(sizes, rng))
        X = rng.standard_normal((5, sizes[0]))
        G = gamma_backprop(ctx, X)
        assert np.max(np.abs(G - gamma_explicit(ctx, X))) < 1e-10 * max(1.0, np.max(np.abs(G)))

    @pytest.mark.parametrize("seed", range(3))
    def test_cross_formula_exact(self, seed):
        rng = np.random.default_rng(seed)
        ctx = build_chart(integer_params((2, 2, 3, 2), rng), tol_S=0, allow_degenerate=True)
        X = [[Fraction(int(a)), Fraction(int(b), 2)] for a, b in rng.integers(-4, 5, size=(4, 2))]
        G = gamma_backprop(ctx, X)
        assert G.dtype == object
        assert np.all(G == gamma_explicit(ctx, X))

    @pytest.mark.parametrize("sizes", ARCHES)
    def test_factorisation_through_lift(self, sizes, rng):
        # Gamma = (alpha kron I) Dpsi
        p = random_params(sizes, rng)
        ctx = build_chart(p)
        X = rng.standard_normal((4, sizes[0]))
        alpha = activation_matrix(p, X).dense()
        D = jacobian_psi(ctx, restricted_from(ctx))
        np.testing.assert_allclose(np.kron(alpha, np.eye(sizes[-1])) @ D, gamma_backprop(ctx, X),
                                   rtol=1e-10, atol=1e-12)


class TestRankA:
    def test_tiny(self, chain):
        R_A, r, _ = rank_A(chain, THREE)
        assert (R_A, r) == (3, 3)

    def test_duplicate_rows(self, rng):
        p = random_params((2, 3, 2), rng)
        X = rng.standard_normal((3, 2))
        assert rank_A(p, np.vstack([X, X]))[1] == rank_A(p, X)[1]

    @pytest.mark.parametrize("sizes", [(1, 1, 1), (2, 2, 2), (2, 3, 2), (1, 2, 2, 2)])
    def test_block_operator(self, sizes, rng):
        p = random_params(sizes, rng)
        X = rng.standard_normal((6, sizes[0]))
        alpha = activation_matrix(p, X).dense()
        block = np.kron(alpha, np.eye(sizes[-1]))
        assert numerical_rank(block).rank == rank_A(p, X)[0]


class TestDecide:
    @pytest.mark.parametrize("R_G,R_A,dim,expected", [
        (3, 3, 3, (True, True, Verdict.LOCALLY_IDENTIFIABLE)),
        (1, 1, 3, (False, False, Verdict.NOT_LOCALLY_IDENTIFIABLE)),
        (1, 2, 3, (True, False, Verdict.INDETERMINATE)),
        (1, None, 3, (None, False, Verdict.INDETERMINATE)),
        (3, None, 3, (True, True, Verdict.LOCALLY_IDENTIFIABLE)),
    ])
    def test_table(self, R_G, R_A, dim, expected):
        assert decide(R_G, R_A, dim) == expected


class TestEvaluate:
    def test_not_identifiable(self, chain):
        rep = evaluate(build_chart(chain), [[2.0]])
        assert (rep.R_Gamma, rep.R_A, rep.dim) == (1, 1, 3)
        assert rep.C_N is False
        assert rep.verdict is Verdict.NOT_LOCALLY_IDENTIFIABLE

    def test_identifiable(self, chain):
        rep = evaluate(build_chart(chain), THREE)
        assert rep.R_Gamma == rep.dim == 3
        assert rep.verdict is Verdict.LOCALLY_IDENTIFIABLE
        assert rep.preconditions_verified and not rep.warnings

    @pytest.mark.parametrize("sizes", ARCHES)
    def test_dimension_bound(self, sizes, rng):
        p = random_params(sizes, rng)
        ctx = build_chart(p)
        n = (ctx.dim - 1) // sizes[-1]
        if n == 0:
            pytest.skip("no sample is small enough")
        rep = evaluate(ctx, rng.standard_normal((n, sizes[0])))
        assert not rep.C_S

    @pytest.mark.parametrize("seed", range(10))
    def test_sandwich_and_monotone(self, seed):
        rng = np.random.default_rng(seed)
        sizes = ARCHES[seed % len(ARCHES)]
        p = random_params(sizes, rng)
        ctx = build_chart(p)
        X = rng.standard_normal((12, sizes[0]))
        prev = (0, 0)
        for n in range(1, 13):
            rep = evaluate(ctx, X[:n])
            assert rep.R_Gamma <= min(rep.R_A, rep.dim, n * sizes[-1])
            assert rep.R_Gamma >= prev[0] and rep.R_A >= prev[1]
            prev = (rep.R_Gamma, rep.R_A)

    @pytest.mark.parametrize("seed", range(5))
    def test_rescaling_covariance(self, seed):
        rng = np.random.default_rng(seed)
        p = random_params((2, 3, 3, 2), rng)
        q = apply_rescaling(p, random_rescaling(p.arch, seed))
        X = rng.standard_normal((int(rng.integers(2, 12)), 2))
        a, b = analyze(p, X), analyze(q, X)
        assert (a.R_Gamma, a.R_A, a.dim, a.C_N, a.C_S) == (b.R_Gamma, b.R_A, b.dim, b.C_N, b.C_S)

    def test_margin_warning(self, chain):
        rep = evaluate(build_chart(chain), [[0.0], [2.0]])
        assert not rep.preconditions_verified
        assert any("margin" in w for w in rep.warnings)

    def test_degenerate_warning(self):
        rep = analyze(tiny(w12=0), THREE)
        assert not rep.preconditions_verified
        assert rep.diagnostics["s_flag"]

    def test_path_cap_makes_R_A_unavailable(self, rng):
        p = random_params((4, 4, 4, 1), rng)
        rep = evaluate(build_chart(p), rng.standard_normal((3, 4)), cap=10)
        assert rep.R_A is None and rep.C_N is None
        assert rep.verdict is Verdict.INDETERMINATE

    def test_report_fields(self, chain):
        d = evaluate(build_chart(chain), THREE, seed=4).to_dict()
        assert d["verdict"] == "LocallyIdentifiable"
        assert d["diagnostics"]["reproducibility"]["seed"] == 4
        assert d["diagnostics"]["rank_policy"] == {"mode": "relative_sv", "tol": 1e-8}

    @pytest.mark.parametrize("tol", [1e-10, 1e-8, 1e-6])
    def test_tolerance_insensitive(self, chain, tol):
        pol = RankPolicy(tol=tol)
        assert evaluate(build_chart(chain), [[2.0]], pol).verdict is Verdict.NOT_LOCALLY_IDENTIFIABLE
        assert evaluate(build_chart(chain), THREE, pol).verdict is Verdict.LOCALLY_IDENTIFIABLE


class TestKernel:
    def test_empty_for_identifiable(self, chain):
        assert kernel_directions(gamma_backprop(build_chart(chain), THREE)).shape[1] == 0

    def test_tiny_kernel(self, chain):
        G = gamma_backprop(build_chart(chain), [[2.0]])
        K = kernel_directions(G)
        assert K.shape == (3, 2)
        assert np.max(np.abs(G @ K)) <= 1e-12
        np.testing.assert_allclose(K.T @ K, np.eye(2), atol=1e-12)
