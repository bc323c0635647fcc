"""Independent checks: finite differences, perturbation probes, continuation, exact arithmetic."""

from __future__ import annotations

import dataclasses
import logging
import warnings
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .charts import ChartContext, build_chart, embed, jacobian_psi, restricted_from
from .errors import NoWitnessFound, PathExplosionError, PreconditionError, StepTooLargeError
from .identifiability import decide, gamma_backprop, gamma_explicit, kernel_directions
from .linalg import DEFAULT_POLICY, RankPolicy, SolveStatus, exact_rank, gauss_newton, numerical_rank
from .network import NetworkParams, _check_inputs, activation_margin, forward_batch
from .pathspace import activation_matrix, check_linear_representation, enumerate_paths
from .rescaling import Equivalence, are_equivalent

logger = logging.getLogger(__name__)


def _pattern(params: NetworkParams, X) -> tuple[np.ndarray, ...]:
    return forward_batch(params, X)[1].bits


def _same_pattern(p, q) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(p, q))


def _outputs_at(ctx: ChartContext, tau, X) -> tuple[np.ndarray, tuple]:
    out, trace = forward_batch(embed(ctx, tau), X)
    return out, trace.bits


def fd_jacobian(ctx: ChartContext, X, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``tau -> f_{rho(tau)}(X)``, one restricted coordinate at a time.

    The step for coordinate k is ``h * (1 + |tau_k|)``.  Raises
    :class:`StepTooLargeError` if either probe changes the activation pattern.
    """
    X = _check_inputs(ctx.anchor, X)
    tau0 = np.asarray(restricted_from(ctx), dtype=np.float64)
    base = _pattern(ctx.anchor, X)
    labels = ctx.column_labels()
    NL = ctx.arch.n_out
    J = np.empty((X.shape[0] * NL, ctx.dim))
    for k in range(ctx.dim):
        step = h * (1 + abs(tau0[k]))
        tp, tm = tau0.copy(), tau0.copy()
        tp[k] += step
        tm[k] -= step
        fp, bp = _outputs_at(ctx, tp, X)
        fm, bm = _outputs_at(ctx, tm, X)
        if not (_same_pattern(bp, base) and _same_pattern(bm, base)):
            raise StepTooLargeError(f"step {step:g} on coordinate {k} ({labels[k]}) flips an activation")
        J[:, k] = ((fp - fm) / (tp[k] - tm[k])).ravel()
    return J


def fd_directional(ctx: ChartContext, X, u, h: float) -> np.ndarray:
    """Central difference of the outputs along ``u`` (flattened ``i * N_L + v_L``)."""
    tau0 = np.asarray(restricted_from(ctx), dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    base = _pattern(ctx.anchor, X)
    fp, bp = _outputs_at(ctx, tau0 + h * u, X)
    fm, bm = _outputs_at(ctx, tau0 - h * u, X)
    if not (_same_pattern(bp, base) and _same_pattern(bm, base)):
        raise StepTooLargeError(f"directional step {h:g} flips an activation")
    return ((fp - fm) / (2 * h)).ravel()


def richardson_ratio(ctx: ChartContext, X, u, h: float = 1e-2,
                     max_halvings: int = 30) -> tuple[float, float, float]:
    """Deviation of directional differences from ``Gamma u`` at ``h`` and ``h/2``, and their ratio.

    ``h`` is halved until both probes stay inside the activation region.  A
    ratio near 4 shows the second-order agreement of central differences.
    """
    g = gamma_backprop(ctx, X) @ np.asarray(u, dtype=np.float64)
    for _ in range(max_halvings):
        try:
            d1 = float(np.max(np.abs(fd_directional(ctx, X, u, h) - g)))
            d2 = float(np.max(np.abs(fd_directional(ctx, X, u, h / 2) - g)))
            return d1, d2, (d1 / d2 if d2 > 0 else float("inf"))
        except StepTooLargeError:
            h /= 2
    raise StepTooLargeError(f"no admissible step down to {h:g}")


class FlatnessResult(NamedTuple):
    t: np.ndarray
    residuals: np.ndarray
    slope: float
    truncated: bool


def flatness_probe(ctx: ChartContext, X, direction, t_grid) -> FlatnessResult:
    """Output change ``||f_{rho(tau_theta + t h)}(X) - f_theta(X)||_inf`` along a unit direction.

    Grid points whose perturbed parameters change the activation pattern are
    dropped with a warning.  The slope is the least-squares fit of log r on
    log t over residuals above the roundoff floor; it is +inf when every
    residual sits at the floor (the outputs do not move at all).
    """
    X = _check_inputs(ctx.anchor, X)
    h = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(h) - 1) > 1e-8:
        raise ValueError("direction must have unit norm")
    tau0 = np.asarray(restricted_from(ctx), dtype=np.float64)
    f0, base = forward_batch(ctx.anchor, X)[0], _pattern(ctx.anchor, X)
    f0 = np.asarray(f0, dtype=np.float64)
    ts, rs, truncated = [], [], False
    for t in np.asarray(t_grid, dtype=np.float64):
        if t == 0:
            ts.append(0.0)
            rs.append(0.0)
            continue
        f, bits = _outputs_at(ctx, tau0 + t * h, X)
        if not _same_pattern(bits, base):
            truncated = True
            continue
        ts.append(float(t))
        rs.append(float(np.max(np.abs(f - f0))))
    if truncated:
        warnings.warn("flatness probe grid truncated: some steps leave the activation region",
                      stacklevel=2)
    ts, rs = np.array(ts), np.array(rs)
    floor = 64 * np.finfo(float).eps * (1 + float(np.max(np.abs(f0))))
    keep = (ts > 0) & (rs > floor)
    if keep.sum() >= 2:
        slope = float(np.polyfit(np.log(ts[keep]), np.log(rs[keep]), 1)[0])
    elif np.any(ts > 0) and keep.sum() == 0:
        slope = float("inf")
    else:
        slope = float("nan")
    return FlatnessResult(ts, rs, slope, truncated)


class SufficiencyProbe(NamedTuple):
    sigma_min: float
    min_ratio: float  # min over samples of ||delta f||_2 / (sigma_min * t)
    n_samples: int
    n_equal_outputs: int


def sufficiency_probe(ctx: ChartContext, X, n_dirs: int = 20, scales=(1e-4, 1e-3, 1e-2),
                      seed: int = 0) -> SufficiencyProbe:
    """Random unit perturbations of ``tau_theta`` at ``t = scale * margin``.

    Under the sufficient condition each output change should be at least
    ``sigma_min(Gamma) * t / 2``; ``min_ratio >= 0.5`` expresses that.
    """
    X = _check_inputs(ctx.anchor, X)
    rng = np.random.default_rng(seed)
    gamma = np.asarray(gamma_backprop(ctx, X), dtype=np.float64)
    svals = np.linalg.svd(gamma, compute_uv=False)
    sigma_min = float(svals[-1]) if gamma.shape[0] >= gamma.shape[1] else 0.0
    margin = activation_margin(ctx.anchor, X).value
    tau0 = np.asarray(restricted_from(ctx), dtype=np.float64)
    f0 = np.asarray(forward_batch(ctx.anchor, X)[0], dtype=np.float64)
    ratios, equal = [], 0
    for _ in range(n_dirs):
        u = rng.standard_normal(ctx.dim)
        u /= np.linalg.norm(u)
        for sc in scales:
            t = sc * margin
            f, _ = _outputs_at(ctx, tau0 + t * u, X)
            dn = float(np.linalg.norm(f - f0))
            if dn == 0:
                equal += 1
            ratios.append(dn / (sigma_min * t) if sigma_min > 0 else 0.0)
    return SufficiencyProbe(sigma_min, float(min(ratios)), len(ratios), equal)


@dataclasses.dataclass
class TwinResult:
    tau: np.ndarray
    params: NetworkParams
    equivalence: Equivalence
    output_gap: float
    distance: float
    iterations: int
    t0: float
    direction: np.ndarray

    @property
    def is_witness(self) -> bool:
        return self.equivalence is Equivalence.NOT_EQUIVALENT


def _kernel_direction(gamma, policy, seed):
    K = kernel_directions(gamma, policy)
    if K.shape[1] == 0:
        return None
    if seed is None:
        return K[:, 0]
    c = np.random.default_rng(seed).standard_normal(K.shape[1])
    h = K @ c
    return h / np.linalg.norm(h)


def continuation_twin(ctx: ChartContext, X, direction=None, t0: float | None = None,
                      policy: RankPolicy = DEFAULT_POLICY, seed: int | None = None,
                      max_iter: int = 50) -> TwinResult:
    """Search for ``theta~`` near the anchor with equal outputs on X.

    Starts at ``tau_theta + t0 h`` for a kernel direction ``h`` of Gamma and
    runs Gauss-Newton on ``tau -> f_{rho(tau)}(X) - f_theta(X)``, rejecting
    steps that change the activation pattern and projecting iterates to stay
    at least ``t0 / 2`` away from ``tau_theta``.

    Refuses (PreconditionError) when the sufficient condition holds; raises
    NoWitnessFound when the solver stalls.
    """
    X = np.asarray(_check_inputs(ctx.anchor, X), dtype=np.float64)
    theta = ctx.anchor.as_float()
    ctx = dataclasses.replace(ctx, anchor=theta)
    gamma = gamma_backprop(ctx, X)
    R_gamma = numerical_rank(gamma, policy).rank
    if R_gamma == ctx.dim:
        raise PreconditionError("sufficient condition holds: no nearby twin exists")
    h = _kernel_direction(gamma, policy, seed) if direction is None else np.asarray(direction, float)
    h = h / np.linalg.norm(h)
    tau0 = restricted_from(ctx)
    f0 = forward_batch(theta, X)[0]
    base = _pattern(theta, X)
    fscale = 1 + float(np.max(np.abs(f0)))

    def inside(tau):
        return _same_pattern(_outputs_at(ctx, tau, X)[1], base)

    if t0 is None:
        margin = activation_margin(theta, X).value
        t0 = min(0.1, 0.25 * margin)
        for _ in range(60):
            if inside(tau0 + t0 * h) and inside(tau0 + 2 * t0 * h):
                break
            t0 *= 0.5
    if not inside(tau0 + t0 * h):
        raise PreconditionError(f"t0={t0:g} leaves the activation region")

    def residual(tau):
        return (_outputs_at(ctx, tau, X)[0] - f0).ravel()

    def jacobian(tau):
        return gamma_backprop(dataclasses.replace(ctx, anchor=embed(ctx, tau)), X)

    def project(tau):
        d = tau - tau0
        r = np.linalg.norm(d)
        if r >= t0 / 2:
            return tau
        return tau0 + (t0 / 2) * (d / r if r > 0 else h)

    res = gauss_newton(residual, jacobian, tau0 + t0 * h, max_iter=max_iter,
                       res_tol=1e-12 * fscale, accept=inside, project=project)
    if res.status is not SolveStatus.CONVERGED:
        raise NoWitnessFound(f"Gauss-Newton ended {res.status.value} with residual {res.residual_norm:.3g}")
    twin = embed(ctx, res.x)
    gap = float(np.max(np.abs(forward_batch(twin, X)[0] - f0)))
    equivalence = are_equivalent(theta, twin, tol=1e-9)
    logger.debug("twin found after %d iterations, gap %.3g, %s", res.iterations, gap, equivalence.value)
    return TwinResult(
        tau=res.x,
        params=twin,
        equivalence=equivalence,
        output_gap=gap,
        distance=float(np.linalg.norm(res.x - tau0)),
        iterations=res.iterations,
        t0=t0,
        direction=h,
    )


# -- exact rational harness ----------------------------------------------------


def _rational(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, (float, np.floating)) and float(value).is_integer():
        return Fraction(int(value))
    raise TypeError(f"exact verification needs rational entries, got {type(value).__name__}")


class ExactReport(NamedTuple):
    linear_representation: bool
    gamma_cross: bool
    gamma_chart_route: bool
    rank_A: bool
    R_A: int
    rank_alpha: int
    R_Gamma: int
    dim: int

    @property
    def all_exact(self) -> bool:
        return self.linear_representation and self.gamma_cross and self.gamma_chart_route and self.rank_A


def exact_verify(params: NetworkParams, X, cap: int = 10**4) -> ExactReport:
    """Run the linear representation, both Gamma formulas and the R_A identity in rationals.

    Also checks ``Gamma = (alpha kron I) Dpsi`` as a third, chart-level route.
    Every comparison is an exact equality.
    """
    params = NetworkParams.create(
        params.arch,
        [np.vectorize(_rational, otypes=[object])(w) for w in params.weights],
        [np.vectorize(_rational, otypes=[object])(b) for b in params.biases],
    )
    X = np.vectorize(_rational, otypes=[object])(np.asarray(X, dtype=object))
    if X.ndim == 1:
        X = X.reshape(1, -1)
    enum = enumerate_paths(params.arch, cap)
    if enum.count > cap:
        raise PathExplosionError(f"|P| = {enum.count} exceeds the exact-mode cap {cap}")
    lin = check_linear_representation(params, X, rel_tol=0, cap=cap)
    ctx = build_chart(params, tol_S=0, allow_degenerate=True)
    g_bp = gamma_backprop(ctx, X)
    g_ex = gamma_explicit(ctx, X, cap)
    alpha = activation_matrix(params, X, enum=enum).dense()
    NL = params.arch.n_out
    block = np.kron(alpha, np.eye(NL, dtype=np.int64).astype(object))
    D = jacobian_psi(ctx, restricted_from(ctx), cap)
    chart_route = block @ D
    r_alpha = exact_rank(alpha)
    r_block = exact_rank(block)
    return ExactReport(
        linear_representation=lin.residual == 0,
        gamma_cross=bool(np.all(g_bp == g_ex)),
        gamma_chart_route=bool(np.all(chart_route == g_bp)),
        rank_A=r_block == NL * r_alpha,
        R_A=r_block,
        rank_alpha=r_alpha,
        R_Gamma=exact_rank(g_bp),
        dim=ctx.dim,
    )


def exact_verdict(params: NetworkParams, X):
    """Conditions decided from exact ranks (tiny rational instances only)."""
    rep = exact_verify(params, X)
    return decide(rep.R_Gamma, rep.R_A, rep.dim)
