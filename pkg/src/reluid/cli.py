"""Command-line front end.

Exit codes: 0 locally identifiable, 1 not locally identifiable,
2 indeterminate, 3 precondition warnings (verdict advisory), 64 usage error,
65 malformed data, 66 missing input file.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .charts import build_chart
from .errors import (
    FormatError,
    NoWitnessFound,
    PathExplosionError,
    PreconditionError,
    ReluIdError,
    ShapeError,
)
from .identifiability import Verdict, evaluate, gamma_backprop, kernel_directions, rank_A
from .io import dumps, load_model, load_sample, model_to_dict, save_model
from .linalg import RankPolicy, numerical_rank
from .network import default_s_tol
from .oracle import continuation_twin, flatness_probe
from .pathspace import (
    DEFAULT_PATH_CAP,
    ORDERING_VERSION,
    activation_matrix,
    check_linear_representation,
    dense_triplets,
    write_triplets,
)
from .rescaling import canonicalize
from .sweep import DISTRIBUTIONS, run_sweep, smallest_identifying_n

EXIT_LI, EXIT_NLI, EXIT_INDETERMINATE, EXIT_PRECONDITION = 0, 1, 2, 3
EXIT_USAGE, EXIT_DATA, EXIT_NOINPUT = 64, 65, 66

_VERDICT_CODES = {
    Verdict.LOCALLY_IDENTIFIABLE: EXIT_LI,
    Verdict.NOT_LOCALLY_IDENTIFIABLE: EXIT_NLI,
    Verdict.INDETERMINATE: EXIT_INDETERMINATE,
}

class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: Path | None = None
    sample: Path | None = None
    rank_tol: float = 1e-8
    s_tol: float | None = None
    margin_tol: float | None = None
    path_cap: int = DEFAULT_PATH_CAP
    seed: int = 0
    out: Path | None = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("rank_tol", "s_tol", "margin_tol"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive")
        if self.path_cap < 1:
            raise UsageError("--path-cap must be at least 1")

    @property
    def policy(self) -> RankPolicy:
        return RankPolicy("relative_sv", self.rank_tol)

    def describe(self) -> dict:
        return {
            "command": self.command,
            "model": None if self.model is None else str(self.model),
            "sample": None if self.sample is None else str(self.sample),
            "rank_tol": self.rank_tol,
            "s_tol": self.s_tol,
            "margin_tol": self.margin_tol,
            "path_cap": self.path_cap,
            "seed": self.seed,
            # worker count never changes results, so it stays out of reports
            "options": {k: v for k, v in self.options.items() if k != "jobs"},
        }


def _require(config: RunConfig, *names):
    for name in names:
        if getattr(config, name) is None:
            raise UsageError(f"{config.command} needs --{name}")


def _emit(config: RunConfig, text: str):
    if config.out is None:
        sys.stdout.write(text)
    else:
        config.out.write_text(text)


def _load(config: RunConfig, need_sample: bool = True):
    _require(config, "model")
    params = load_model(config.model)
    X = None
    if need_sample:
        _require(config, "sample")
        X = load_sample(config.sample)
        if X.shape[1] != params.arch.n_in:
            raise FormatError(f"{config.sample}: inputs have {X.shape[1]} coordinates, "
                              f"model expects {params.arch.n_in}")
    return params, X


def _s_tol(config: RunConfig, params) -> float:
    return config.s_tol if config.s_tol is not None else default_s_tol(params)


def _report(config: RunConfig, params, X):
    tol_S = _s_tol(config, params)
    ctx = build_chart(params, tol_S, allow_degenerate=True)
    rep = evaluate(ctx, X, config.policy, config.margin_tol, config.path_cap, seed=config.seed)
    rep.diagnostics["s_tol"] = tol_S
    return ctx, rep


def _exit_for(rep) -> int:
    if not rep.preconditions_verified:
        return EXIT_PRECONDITION
    return _VERDICT_CODES[rep.verdict]


def cmd_check(config: RunConfig) -> int:
    params, X = _load(config)
    ctx, rep = _report(config, params, X)
    doc = rep.to_dict()
    doc["config"] = config.describe()
    doc["chart"] = ctx.report()
    _emit(config, dumps(doc))
    return _exit_for(rep)


def cmd_lift_verify(config: RunConfig) -> int:
    params, X = _load(config)
    rel_tol = 0 if params.is_exact and X.dtype == object else config.options.get("rel_tol", 1e-9)
    chk = check_linear_representation(params, X, rel_tol=rel_tol, cap=config.path_cap)
    doc = {
        "format": "reluid-lift-verify",
        "format_version": 1,
        "exact": params.is_exact and X.dtype == object,
        "residual": chk.residual,
        "max_abs_error": chk.max_abs_error,
        "rel_tol": rel_tol,
        "passed": chk.passed,
        "path_ordering": ORDERING_VERSION,
        "config": config.describe(),
    }
    _emit(config, dumps(doc))
    return 0 if chk.passed else 1


def cmd_jacobian(config: RunConfig) -> int:
    params, X = _load(config)
    which = config.options.get("matrix", "gamma")
    if which == "gamma":
        ctx = build_chart(params, _s_tol(config, params), allow_degenerate=True)
        M = gamma_backprop(ctx, X)
        trip, shape = dense_triplets(M), M.shape
        ordering = f"rows:input-major(i*N_L+v_L);cols:{ctx.report()['column_order']}"
    else:
        A = activation_matrix(params, X, config.path_cap)
        trip, shape = A.triplets(), A.shape
        ordering = f"rows:inputs;cols:{ORDERING_VERSION}"
    buf = io.StringIO()
    write_triplets(buf, shape, trip, which, ordering)
    _emit(config, buf.getvalue())
    return 0


def cmd_rank(config: RunConfig) -> int:
    params, X = _load(config)
    ctx = build_chart(params, _s_tol(config, params), allow_degenerate=True)
    g = numerical_rank(gamma_backprop(ctx, X), config.policy)
    doc = {
        "format": "reluid-spectra",
        "format_version": 1,
        "rank_policy": config.policy.describe(),
        "gamma": {"rank": g.rank, "threshold": g.threshold, "gap_at_cut": g.gap,
                  "singular_values": g.singular_values},
        "dim": ctx.dim,
        "config": config.describe(),
    }
    try:
        R_A, r_alpha, a = rank_A(params, X, config.policy, config.path_cap)
        doc["alpha"] = {"rank": r_alpha, "R_A": R_A, "threshold": a.threshold,
                        "gap_at_cut": a.gap, "singular_values": a.singular_values}
    except PathExplosionError as exc:
        doc["alpha"] = {"unavailable": str(exc)}
    _emit(config, dumps(doc))
    return 0


def cmd_sweep(config: RunConfig) -> int:
    params, _ = _load(config, need_sample=False)
    opts = config.options
    seeds = range(config.seed, config.seed + opts["seeds"])
    rows = run_sweep(params, opts["n_grid"], seeds, opts["distribution"], opts["random_params"],
                     config.policy, config.path_cap, opts["jobs"])
    doc = {
        "format": "reluid-sweep",
        "format_version": 1,
        "rows": [r.as_dict() for r in rows],
        "smallest_identifying_n": [{"seed": k, "n": v} for k, v in smallest_identifying_n(rows).items()],
        "config": config.describe(),
    }
    _emit(config, dumps(doc))
    return 0


def cmd_perturb(config: RunConfig) -> int:
    params, X = _load(config)
    opts = config.options
    ctx, rep = _report(config, params, X)
    theta = params.as_float()
    fctx = build_chart(theta, _s_tol(config, params), allow_degenerate=True)
    gamma = gamma_backprop(fctx, X)
    K = kernel_directions(gamma, config.policy)
    rng = np.random.default_rng(config.seed)
    if K.shape[1]:
        h = K @ rng.standard_normal(K.shape[1])
        source = "kernel"
    else:
        h = rng.standard_normal(ctx.dim)
        source = "random"
    h = h / np.linalg.norm(h)
    t_grid = np.logspace(np.log10(opts["t_min"]), np.log10(opts["t_max"]), opts["t_points"])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fl = flatness_probe(fctx, X, h, t_grid)
    doc = {
        "format": "reluid-perturb",
        "format_version": 1,
        "verdict": rep.verdict.value,
        "R_Gamma": rep.R_Gamma,
        "R_A": rep.R_A,
        "dim": rep.dim,
        "direction_source": source,
        "direction": h,
        "flatness": {"t": fl.t, "residual": fl.residuals, "slope": fl.slope,
                     "truncated": fl.truncated, "warnings": [str(w.message) for w in caught]},
        "config": config.describe(),
    }
    if rep.C_S:
        doc["continuation"] = {"status": "skipped", "reason": "sufficient condition holds"}
    else:
        try:
            tw = continuation_twin(fctx, X, direction=h if source == "kernel" else None,
                                   policy=config.policy, seed=config.seed)
            doc["continuation"] = {
                "status": "found",
                "equivalence": tw.equivalence.value,
                "output_gap": tw.output_gap,
                "distance": tw.distance,
                "iterations": tw.iterations,
                "t0": tw.t0,
                "witness": model_to_dict(tw.params),
            }
            if opts.get("witness_out") is not None:
                save_model(tw.params, opts["witness_out"])
        except (NoWitnessFound, PreconditionError) as exc:
            doc["continuation"] = {"status": "inconclusive", "reason": str(exc)}
    _emit(config, dumps(doc))
    return 0


def cmd_canonicalize(config: RunConfig) -> int:
    params, _ = _load(config, need_sample=False)
    canon, lam = canonicalize(params, _s_tol(config, params))
    doc = model_to_dict(canon)
    doc["rescaling"] = [list(v) for v in lam.vectors]
    _emit(config, dumps(doc))
    return 0


COMMANDS = {
    "check": cmd_check,
    "lift-verify": cmd_lift_verify,
    "jacobian": cmd_jacobian,
    "rank": cmd_rank,
    "sweep": cmd_sweep,
    "perturb": cmd_perturb,
    "canonicalize": cmd_canonicalize,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", type=Path)
    common.add_argument("--sample", type=Path)
    common.add_argument("--rank-tol", type=float, default=1e-8)
    common.add_argument("--s-tol", type=float)
    common.add_argument("--margin-tol", type=float)
    common.add_argument("--path-cap", type=int, default=DEFAULT_PATH_CAP)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="reluid", description="Local identifiability tests for ReLU networks.")
    parser.add_argument("--version", action="version", version=f"reluid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("check", parents=[common], help="decide the rank conditions")
    sub.add_parser("lift-verify", parents=[common], help="check f = alpha phi")
    p = sub.add_parser("jacobian", parents=[common], help="dump Gamma or alpha as triplets")
    p.add_argument("--matrix", choices=("gamma", "alpha"), default="gamma")
    sub.add_parser("rank", parents=[common], help="singular value spectra")
    p = sub.add_parser("sweep", parents=[common], help="ranks against sample size")
    p.add_argument("--n-grid", type=_int_list, default=[1, 2, 3, 4, 5])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--distribution", choices=DISTRIBUTIONS, default="gaussian")
    p.add_argument("--random-params", action="store_true",
                   help="draw fresh parameters per seed over the model's architecture")
    p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("perturb", parents=[common], help="flatness probe and continuation")
    p.add_argument("--t-min", type=float, default=1e-4)
    p.add_argument("--t-max", type=float, default=1e-2)
    p.add_argument("--t-points", type=int, default=7)
    p.add_argument("--witness-out", type=Path)
    sub.add_parser("canonicalize", parents=[common], help="normalise outgoing weights")
    return parser


_OPTION_KEYS = ("matrix", "n_grid", "seeds", "distribution", "random_params", "jobs",
                "t_min", "t_max", "t_points", "witness_out")


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    options = {k: getattr(ns, k) for k in _OPTION_KEYS if hasattr(ns, k)}
    if "witness_out" in options and options["witness_out"] is not None:
        options["witness_out"] = str(options["witness_out"])
    if options.get("seeds", 1) < 1 or options.get("jobs", 1) < 1:
        raise UsageError("--seeds and --jobs must be at least 1")
    return RunConfig(
        command=ns.command,
        model=ns.model,
        sample=ns.sample,
        rank_tol=ns.rank_tol,
        s_tol=ns.s_tol,
        margin_tol=ns.margin_tol,
        path_cap=ns.path_cap,
        seed=ns.seed,
        out=ns.out,
        options=options,
    )


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(ns)
        return COMMANDS[config.command](config)
    except UsageError as exc:
        print(f"reluid: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"reluid: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_NOINPUT
    except (FormatError, ShapeError) as exc:
        print(f"reluid: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ReluIdError as exc:
        print(f"reluid: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
