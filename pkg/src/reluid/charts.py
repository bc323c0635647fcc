"""Restricted parameterisation around an anchor ``theta``.

For each hidden neuron ``v`` the outgoing edge of largest ``|w|`` (smallest
successor index on ties) is frozen at its anchor value.  The remaining edges
``F_theta`` together with all biases form the restricted coordinates ``tau``,
ordered as free edges in (layer, source, target) order followed by biases in
(layer, neuron) order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateParamsError, ShapeError
from .network import Edge, Neuron, NetworkParams, default_s_tol, is_degenerate_S
from .pathspace import DEFAULT_PATH_CAP, LiftedMatrix, enumerate_paths, lift

TIE_BREAK_RULE = "smax:largest-|w|,ties->smallest-successor-index;v1"
COLUMN_ORDER = "tau:free-edges(layer,source,target),biases(layer,neuron);v1"


@dataclass(frozen=True, eq=False)
class ChartContext:
    anchor: NetworkParams
    smax: dict[Neuron, int]
    fixed_mask: tuple[np.ndarray, ...]  # fixed_mask[l-1][v', v] is True when v -> v' is frozen
    free_edges: tuple[Edge, ...]
    bias_units: tuple[Neuron, ...]
    degenerate_witnesses: tuple[Neuron, ...] = field(default=())

    @property
    def arch(self):
        return self.anchor.arch

    @property
    def n_free(self) -> int:
        return len(self.free_edges)

    @property
    def dim(self) -> int:
        return len(self.free_edges) + len(self.bias_units)

    def column_labels(self) -> list[str]:
        edges = [f"w[{l}]:{s}->{t}" for l, s, t in self.free_edges]
        biases = [f"b[{l}]:{v}" for l, v in self.bias_units]
        return edges + biases

    def fixed_edges(self) -> list[tuple[Edge, object]]:
        out = []
        for (l, v), succ in sorted(self.smax.items()):
            out.append(((l + 1, v, succ), self.anchor.weight(l + 1)[succ, v]))
        return out

    def report(self) -> dict:
        return {
            "tie_break": TIE_BREAK_RULE,
            "column_order": COLUMN_ORDER,
            "smax": [[l, v, s] for (l, v), s in sorted(self.smax.items())],
            "fixed_edges": [
                {"layer": l, "source": s, "target": t, "value": float(w)}
                for (l, s, t), w in self.fixed_edges()
            ],
            "n_free_edges": self.n_free,
            "n_biases": len(self.bias_units),
            "dim": self.dim,
        }


def build_chart(params: NetworkParams, tol_S: float | None = None,
                allow_degenerate: bool = False) -> ChartContext:
    """Select ``s_max`` for every hidden neuron and derive ``F_theta``.

    Raises :class:`DegenerateParamsError` when the anchor lies in S (at
    ``tol_S``) unless ``allow_degenerate`` is set, in which case the offending
    neurons are recorded on the context instead.
    """
    degenerate, witnesses = is_degenerate_S(params, tol_S)
    if degenerate and not allow_degenerate:
        raise DegenerateParamsError(f"anchor lies in S at neurons {witnesses}")
    arch = params.arch
    L = arch.depth
    smax: dict[Neuron, int] = {}
    masks = [np.zeros((arch.layer_sizes[l], arch.layer_sizes[l - 1]), dtype=bool)
             for l in range(1, L + 1)]
    for l, v in arch.hidden_units():
        outgoing = np.abs(np.asarray(params.weight(l + 1)[:, v], dtype=np.float64))
        succ = int(np.argmax(outgoing))  # first maximiser = smallest index
        smax[(l, v)] = succ
        masks[l][succ, v] = True
    free = []
    for l in range(1, L + 1):
        src, tgt = np.nonzero(~masks[l - 1].T)
        free.extend((l, int(s), int(t)) for s, t in zip(src, tgt))
    for m in masks:
        m.setflags(write=False)
    return ChartContext(
        anchor=params,
        smax=smax,
        fixed_mask=tuple(masks),
        free_edges=tuple(free),
        bias_units=tuple(arch.bias_units()),
        degenerate_witnesses=tuple(witnesses),
    )


def restricted_from(ctx: ChartContext) -> np.ndarray:
    """``tau_theta``: anchor values of the free edges, then all anchor biases."""
    a = ctx.anchor
    parts = [a.weight(l).T[~ctx.fixed_mask[l - 1].T] for l in range(1, ctx.arch.depth + 1)]
    parts += [a.bias(l) for l in range(1, ctx.arch.depth + 1)]
    return np.concatenate(parts)


def embed(ctx: ChartContext, tau) -> NetworkParams:
    """``rho_theta(tau)``: free edges and biases from ``tau``, frozen edges from the anchor."""
    tau = np.asarray(tau)
    if tau.shape != (ctx.dim,):
        raise ShapeError(f"tau has shape {tau.shape}, expected ({ctx.dim},)")
    exact = tau.dtype == object or ctx.anchor.is_exact
    dtype = object if exact else np.float64
    L = ctx.arch.depth
    ws, pos = [], 0
    for l in range(1, L + 1):
        Wt = np.array(ctx.anchor.weight(l).T, dtype=dtype)
        free = ~ctx.fixed_mask[l - 1].T
        k = int(free.sum())
        Wt[free] = tau[pos : pos + k]
        pos += k
        ws.append(Wt.T)
    bs = []
    for l in range(1, L + 1):
        n = ctx.arch.layer_sizes[l]
        bs.append(np.array(tau[pos : pos + n], dtype=dtype))
        pos += n
    return NetworkParams.create(ctx.arch, ws, bs)


def in_U_theta(ctx: ChartContext, tau, tol_S: float | None = None) -> bool:
    """True when ``rho_theta(tau)`` lies outside S."""
    theta = embed(ctx, tau)
    if tol_S is None:
        tol_S = default_s_tol(theta)
    return not is_degenerate_S(theta, tol_S)[0]


def local_lift(ctx: ChartContext, tau, cap: int = DEFAULT_PATH_CAP) -> LiftedMatrix:
    """``psi^theta(tau) = phi(rho_theta(tau))``."""
    return lift(embed(ctx, tau), cap)


def jacobian_psi(ctx: ChartContext, tau, cap: int = DEFAULT_PATH_CAP) -> np.ndarray:
    """Explicit Jacobian of ``psi^theta`` at ``tau``.

    Rows are indexed ``p * N_L + v_L`` (canonical path order), columns follow
    the restricted coordinate order.  Entries are assembled from the closed
    form partials: the product of the other edges along ``p + (v_L)`` for a
    free edge on the path (times the root bias for bias-rooted paths), the
    outward product for the root bias, and 1 for the beta / output-bias pairs.
    """
    enum = enumerate_paths(ctx.arch, cap)
    theta = embed(ctx, tau)
    exact = theta.is_exact
    L = ctx.arch.depth
    NL = ctx.arch.n_out
    edge_col = {e: i for i, e in enumerate(ctx.free_edges)}
    bias_col = {u: ctx.n_free + i for i, u in enumerate(ctx.bias_units)}
    D = np.zeros((enum.count * NL, ctx.dim), dtype=object if exact else np.float64)
    if exact:
        D[...] = 0
    for ordinal, path in enumerate(enum):
        if path.is_beta:
            for vL in range(NL):
                D[ordinal * NL + vL, bias_col[(L, vL)]] = 1
            continue
        start = path.start
        for vL in range(NL):
            nodes = path.neurons + (vL,)
            edges = [(start + k + 1, nodes[k], nodes[k + 1]) for k in range(len(nodes) - 1)]
            vals = [theta.weight(l)[t, s] for l, s, t in edges]
            root = 1 if start == 0 else theta.bias(start)[nodes[0]]
            row = ordinal * NL + vL
            for k, e in enumerate(edges):
                col = edge_col.get(e)
                if col is None:
                    continue
                prod = root
                for j, w in enumerate(vals):
                    if j != k:
                        prod = prod * w
                D[row, col] += prod
            if start >= 1:
                prod = 1
                for w in vals:
                    prod = prod * w
                D[row, bias_col[(start, nodes[0])]] += prod
    return D
