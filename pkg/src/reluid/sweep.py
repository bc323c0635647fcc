"""Sample-size sweeps: how the ranks grow as inputs are added."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .identifiability import Verdict, analyze
from .linalg import DEFAULT_POLICY, RankPolicy
from .network import NetworkParams, random_params
from .pathspace import DEFAULT_PATH_CAP

DISTRIBUTIONS = ("gaussian", "alternating")


def sample_inputs(params: NetworkParams, n: int, rng: np.random.Generator,
                  distribution: str = "gaussian") -> np.ndarray:
    """Draw ``n`` inputs.

    ``gaussian``: i.i.d. standard normal.
    ``alternating``: input ``i`` is a normal draw moved along the incoming
    weight row of first-layer neuron ``(i // 2) mod N_1`` so that its
    preactivation is ``+(0.5 + |g|)`` for even ``i`` and ``-(0.5 + |g|)`` for
    odd ``i`` (``g`` standard normal), guaranteeing both activation signs.
    """
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution!r}")
    X = rng.standard_normal((n, params.arch.n_in))
    if distribution == "gaussian":
        return X
    theta = params.as_float()
    W, b = theta.weight(1), theta.bias(1)
    N1 = params.arch.layer_sizes[1]
    for i in range(n):
        v = (i // 2) % N1
        w = W[v]
        nrm = float(w @ w)
        if nrm == 0:
            continue
        target = (0.5 + abs(rng.standard_normal())) * (1 if i % 2 == 0 else -1)
        X[i] += (target - (w @ X[i] + b[v])) / nrm * w
    return X


@dataclass(frozen=True)
class SweepRow:
    seed: int
    n: int
    n_times_NL: int
    R_Gamma: int
    R_A: int | None
    dim: int
    C_S: bool
    verdict: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _run_seed(args) -> list[SweepRow]:
    base, seed, n_grid, distribution, random_theta, policy, cap = args
    rng = np.random.default_rng(seed)
    params = random_params(base.arch, rng) if random_theta else base
    X = sample_inputs(params, max(n_grid), rng, distribution)
    rows = []
    for n in n_grid:
        rep = analyze(params, X[:n], policy=policy, cap=cap, seed=seed)
        rows.append(SweepRow(seed, n, rep.n_measurements, rep.R_Gamma, rep.R_A, rep.dim,
                             rep.C_S, rep.verdict.value))
    return rows


def run_sweep(base: NetworkParams, n_grid, seeds, distribution: str = "gaussian",
              random_theta: bool = False, policy: RankPolicy = DEFAULT_POLICY,
              cap: int = DEFAULT_PATH_CAP, jobs: int = 1) -> list[SweepRow]:
    """One row per (seed, n); samples are nested within a seed (prefixes of one draw).

    With ``random_theta`` each seed also draws fresh unit-normal parameters
    over the base architecture.  Rows come back ordered by (seed, n)
    regardless of ``jobs``.
    """
    n_grid = sorted({int(n) for n in n_grid})
    if not n_grid or n_grid[0] < 1:
        raise ValueError("n_grid must contain positive sizes")
    tasks = [(base.as_float(), int(s), n_grid, distribution, random_theta, policy, cap) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_seed, tasks))
    else:
        chunks = [_run_seed(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def smallest_identifying_n(rows: list[SweepRow]) -> dict[int, int | None]:
    """Per seed, the smallest n whose verdict is locally identifiable (None if never)."""
    out: dict[int, int | None] = {}
    for row in rows:
        out.setdefault(row.seed, None)
        if row.verdict == Verdict.LOCALLY_IDENTIFIABLE.value and out[row.seed] is None:
            out[row.seed] = row.n
    return out
