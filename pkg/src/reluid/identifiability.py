"""Rank conditions for local identifiability.

``Gamma(X, theta)`` is the Jacobian of ``tau -> f_{rho_theta(tau)}(X)`` at
``tau_theta`` with rows ordered ``i * N_L + v_L``.  Its rank ``R_Gamma`` and
the rank ``R_A = N_L rank(alpha)`` decide the conditions

* C_N: ``R_Gamma < R_A`` or ``R_Gamma = dim`` (necessary),
* C_S: ``R_Gamma = dim`` (sufficient),

with ``dim = |F_theta| + |B|``.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from .charts import COLUMN_ORDER, TIE_BREAK_RULE, ChartContext, build_chart
from .errors import PathExplosionError
from .linalg import DEFAULT_POLICY, RankPolicy, RankResult, nullspace, numerical_rank
from .network import (
    NetworkParams,
    _check_inputs,
    activation_margin,
    default_margin_threshold,
    default_s_tol,
    forward_batch,
)
from .pathspace import DEFAULT_PATH_CAP, ORDERING_VERSION, activation_matrix, enumerate_paths

REPORT_FORMAT = "reluid-identifiability-report"
REPORT_VERSION = 1


def gamma_backprop(ctx: ChartContext, X) -> np.ndarray:
    """Per-input, per-output reverse-mode gradients w.r.t. the restricted coordinates.

    Runs one backward sweep per output coordinate over the whole batch,
    keeping per-sample gradients, and drops the columns of frozen edges.
    """
    theta = ctx.anchor
    X = _check_inputs(theta, X)
    _, trace = forward_batch(theta, X)
    L = theta.arch.depth
    NL = theta.arch.n_out
    n = X.shape[0]
    exact = X.dtype == object
    dtype = object if exact else np.float64
    acts = [X] + list(trace.activations[:-1])
    G = np.zeros((n * NL, ctx.dim), dtype=dtype)
    for j in range(NL):
        delta = np.zeros((n, NL), dtype=dtype)
        delta[:, j] = 1
        w_cols, b_cols = [None] * L, [None] * L
        for l in range(L, 0, -1):
            gW = delta[:, :, np.newaxis] * acts[l - 1][:, np.newaxis, :]
            free = ~ctx.fixed_mask[l - 1].T
            w_cols[l - 1] = gW.transpose(0, 2, 1)[:, free]
            b_cols[l - 1] = delta
            if l > 1:
                delta = (delta @ theta.weight(l)) * trace.bits[l - 2]
        G[j::NL] = np.concatenate(w_cols + b_cols, axis=1)
    if not exact:
        G += 0.0  # normalise -0.0 so dumps are stable
    return G


def gamma_explicit(ctx: ChartContext, X, cap: int = DEFAULT_PATH_CAP) -> np.ndarray:
    """``Gamma`` from the closed-form path sums (test oracle; cost grows with |P|).

    Edge column ``v_l -> v_{l+1}``: a sum over input-rooted paths through the
    edge of ``x_{v_0} w_{v_0->v_1} a_{v_l} prod_{k != l} a_{v_k} w_{v_k->v_{k+1}}``
    (the leading weight and bit replaced by 1 when ``l = 0``) plus, for every
    root layer ``1 <= l' <= l``, the bias-rooted analogue with ``b_{v_l'}``.
    Bias column ``v_l``: the sum over outward paths of ``prod a w``.
    """
    enumerate_paths(ctx.arch, cap)
    theta = ctx.anchor
    X = _check_inputs(theta, X)
    _, trace = forward_batch(theta, X)
    s = theta.arch.layer_sizes
    L = theta.arch.depth
    NL = s[L]
    n = X.shape[0]
    exact = X.dtype == object
    G = np.zeros((n * NL, ctx.dim), dtype=object if exact else np.float64)

    def w(k, nodes):
        return theta.weight(k + 1)[nodes[k + 1], nodes[k]]

    for i in range(n):
        x = X[i]

        def a(k, v):
            return trace.bits[k - 1][i, v]

        for vL in range(NL):
            row = i * NL + vL
            for col, (e, src, tgt) in enumerate(ctx.free_edges):
                l = e - 1
                if e == L and tgt != vL:
                    continue
                total = 0
                # input-rooted paths
                free_layers = [k for k in range(0, L) if k not in (l, l + 1)]
                for choice in itertools.product(*(range(s[k]) for k in free_layers)):
                    nodes = dict(zip(free_layers, choice))
                    nodes.update({l: src, l + 1: tgt, L: vL})
                    term = x[nodes[0]]
                    if l >= 1:
                        term = term * w(0, nodes) * a(l, nodes[l])
                    for k in range(1, L):
                        if k != l:
                            term = term * a(k, nodes[k]) * w(k, nodes)
                    total = total + term
                # bias-rooted paths starting at layers 1..l
                for root in range(1, l + 1):
                    free_layers = [k for k in range(root, L) if k not in (l, l + 1)]
                    for choice in itertools.product(*(range(s[k]) for k in free_layers)):
                        nodes = dict(zip(free_layers, choice))
                        nodes.update({l: src, l + 1: tgt, L: vL})
                        term = theta.bias(root)[nodes[root]] * a(l, nodes[l])
                        for k in range(root, L):
                            if k != l:
                                term = term * a(k, nodes[k]) * w(k, nodes)
                        total = total + term
                G[row, col] = total
            for j, (l, v) in enumerate(ctx.bias_units):
                col = ctx.n_free + j
                if l == L:
                    G[row, col] = 1 if v == vL else 0
                    continue
                total = 0
                free_layers = list(range(l + 1, L))
                for choice in itertools.product(*(range(s[k]) for k in free_layers)):
                    nodes = dict(zip(free_layers, choice))
                    nodes.update({l: v, L: vL})
                    term = 1
                    for k in range(l, L):
                        term = term * a(k, nodes[k]) * w(k, nodes)
                    total = total + term
                G[row, col] = total
    return G


def rank_A(params: NetworkParams, X, policy: RankPolicy = DEFAULT_POLICY,
           cap: int = DEFAULT_PATH_CAP) -> tuple[int, int, RankResult]:
    """``R_A = N_L * rank(alpha(X, theta))``; also returns the rank of alpha and its spectrum."""
    alpha = activation_matrix(params, X, cap)
    res = numerical_rank(alpha.matrix, policy)
    return params.arch.n_out * res.rank, res.rank, res


def kernel_directions(gamma: np.ndarray, policy: RankPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Orthonormal basis (columns) of ``Ker Gamma``."""
    return nullspace(gamma, policy)


class Verdict(enum.Enum):
    LOCALLY_IDENTIFIABLE = "LocallyIdentifiable"
    NOT_LOCALLY_IDENTIFIABLE = "NotLocallyIdentifiable"
    INDETERMINATE = "Indeterminate"


@dataclass
class IdentifiabilityReport:
    R_Gamma: int
    R_A: int | None
    rank_alpha: int | None
    dim: int
    n_measurements: int
    C_N: bool | None
    C_S: bool
    verdict: Verdict
    preconditions_verified: bool
    warnings: list[str] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "format_version": REPORT_VERSION,
            "R_Gamma": self.R_Gamma,
            "R_A": self.R_A,
            "rank_alpha": self.rank_alpha,
            "dim": self.dim,
            "n_times_NL": self.n_measurements,
            "C_N": self.C_N,
            "C_S": self.C_S,
            "verdict": self.verdict.value,
            "preconditions": "verified" if self.preconditions_verified else "unverified",
            "warnings": list(self.warnings),
            "diagnostics": self.diagnostics,
        }


def decide(R_Gamma: int, R_A: int | None, dim: int) -> tuple[bool | None, bool, Verdict]:
    """Map ranks to ``(C_N, C_S, verdict)``."""
    C_S = R_Gamma == dim
    if C_S:
        C_N = True
    elif R_A is None:
        C_N = None
    else:
        C_N = R_Gamma < R_A
    if C_S:
        verdict = Verdict.LOCALLY_IDENTIFIABLE
    elif C_N is False:
        verdict = Verdict.NOT_LOCALLY_IDENTIFIABLE
    else:
        verdict = Verdict.INDETERMINATE
    return C_N, C_S, verdict


def evaluate(ctx: ChartContext, X, policy: RankPolicy = DEFAULT_POLICY,
             margin_tol: float | None = None, cap: int = DEFAULT_PATH_CAP,
             tails: int = 5, seed: int | None = None) -> IdentifiabilityReport:
    """Compute both ranks, the two conditions and the verdict for ``(theta, X)``.

    Precondition problems (anchor near S, an input near an activation
    boundary) never raise; they are listed in ``warnings`` and mark the
    verdict as advisory.
    """
    theta = ctx.anchor
    X = _check_inputs(theta, X)
    NL = theta.arch.n_out
    n = X.shape[0]
    gamma = gamma_backprop(ctx, X)
    g_rank = numerical_rank(gamma, policy)
    warnings = []
    diagnostics: dict = {}

    try:
        R_A, r_alpha, a_rank = rank_A(theta, X, policy, cap)
        diagnostics["alpha_spectrum"] = a_rank.tails(tails)
        diagnostics["alpha_gap_at_cut"] = a_rank.gap
    except PathExplosionError as exc:
        R_A = r_alpha = None
        warnings.append(f"R_A unavailable: {exc}")

    C_N, C_S, verdict = decide(g_rank.rank, R_A, ctx.dim)
    if R_A is not None and g_rank.rank > R_A:
        warnings.append(f"rank sandwich violated: R_Gamma={g_rank.rank} > R_A={R_A}")

    margin = activation_margin(theta, X)
    if margin_tol is None:
        margin_tol = default_margin_threshold(theta, X)
    preconditions = True
    if ctx.degenerate_witnesses:
        preconditions = False
        warnings.append(f"anchor near S at neurons {[list(v) for v in ctx.degenerate_witnesses]}")
    if margin.value <= margin_tol:
        preconditions = False
        warnings.append(
            f"activation margin {margin.value!r} <= {margin_tol!r} "
            f"(input {margin.input_index}, neuron {list(margin.neuron)}): theta may lie on Delta_X"
        )

    diagnostics.update({
        "rank_policy": policy.describe(),
        "gamma_threshold": g_rank.threshold,
        "gamma_spectrum": g_rank.tails(tails),
        "gamma_gap_at_cut": g_rank.gap,
        "rank_gap_R_A_minus_R_Gamma": None if R_A is None else R_A - g_rank.rank,
        "s_flag": bool(ctx.degenerate_witnesses),
        "s_witnesses": [list(v) for v in ctx.degenerate_witnesses],
        "margin": margin.value,
        "margin_location": {"input": margin.input_index, "neuron": list(margin.neuron)},
        "margin_threshold": margin_tol,
        "reproducibility": {
            "seed": seed,
            "path_ordering": ORDERING_VERSION,
            "tie_break": TIE_BREAK_RULE,
            "column_order": COLUMN_ORDER,
        },
    })
    return IdentifiabilityReport(
        R_Gamma=g_rank.rank,
        R_A=R_A,
        rank_alpha=r_alpha,
        dim=ctx.dim,
        n_measurements=n * NL,
        C_N=C_N,
        C_S=C_S,
        verdict=verdict,
        preconditions_verified=preconditions,
        warnings=warnings,
        diagnostics=diagnostics,
    )


def analyze(params: NetworkParams, X, policy: RankPolicy = DEFAULT_POLICY,
            tol_S: float | None = None, margin_tol: float | None = None,
            cap: int = DEFAULT_PATH_CAP, seed: int | None = None) -> IdentifiabilityReport:
    """Build the chart (tolerating a degenerate anchor) and evaluate."""
    if tol_S is None:
        tol_S = default_s_tol(params)
    ctx = build_chart(params, tol_S, allow_degenerate=True)
    report = evaluate(ctx, X, policy, margin_tol, cap, seed=seed)
    report.diagnostics["s_tol"] = tol_S
    return report
