"""Neuron-wise rescalings and the equivalences they generate.

A family ``lam = (lam^0, ..., lam^L)`` relates ``theta`` and ``theta~`` when
``W_l = diag(lam^l) W~_l diag(lam^{l-1})^{-1}`` and ``b_l = diag(lam^l) b~_l``.
:func:`apply_rescaling` returns the ``theta~`` that ``lam`` carries to
``theta``; :func:`recover_rescaling` inverts it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateParamsError, ShapeError
from .network import Architecture, NetworkParams, is_degenerate_S, sign_pattern


@dataclass(frozen=True, eq=False)
class RescalingVectors:
    """One nonzero scale per neuron; input and output layers are all ones."""

    arch: Architecture
    vectors: tuple[np.ndarray, ...]

    def __post_init__(self):
        s = self.arch.layer_sizes
        if len(self.vectors) != len(s):
            raise ShapeError(f"need {len(s)} rescaling vectors, got {len(self.vectors)}")
        for l, (lam, n) in enumerate(zip(self.vectors, s)):
            if np.shape(lam) != (n,):
                raise ShapeError(f"lambda^{l} has shape {np.shape(lam)}, expected ({n},)")
        if not (np.all(self.vectors[0] == 1) and np.all(self.vectors[-1] == 1)):
            raise ValueError("boundary rescaling vectors must be all ones")
        if any(np.any(lam == 0) for lam in self.vectors):
            raise ValueError("rescaling entries must be nonzero")

    @classmethod
    def from_hidden(cls, arch: Architecture, hidden) -> "RescalingVectors":
        """Build from the concatenated hidden-layer scales."""
        s = arch.layer_sizes
        hidden = np.asarray(hidden, dtype=np.float64)
        vecs, pos = [np.ones(s[0])], 0
        for l in arch.hidden_layers:
            vecs.append(hidden[pos : pos + s[l]])
            pos += s[l]
        vecs.append(np.ones(s[-1]))
        return cls(arch, tuple(vecs))

    @classmethod
    def identity(cls, arch: Architecture) -> "RescalingVectors":
        return cls(arch, tuple(np.ones(n) for n in arch.layer_sizes))

    def hidden(self) -> np.ndarray:
        return np.concatenate([self.vectors[l] for l in self.arch.hidden_layers])

    def inverse(self) -> "RescalingVectors":
        return RescalingVectors(self.arch, tuple(1 / lam for lam in self.vectors))

    def compose(self, other: "RescalingVectors") -> "RescalingVectors":
        return RescalingVectors(self.arch, tuple(a * b for a, b in zip(self.vectors, other.vectors)))

    @property
    def is_positive(self) -> bool:
        return all(np.all(lam > 0) for lam in self.vectors)


def apply_rescaling(params: NetworkParams, lam: RescalingVectors) -> NetworkParams:
    """Return ``theta~`` with ``w~ = (lam^{l-1}_v / lam^l_v') w`` and ``b~ = b / lam^l``."""
    if lam.arch != params.arch:
        raise ShapeError("rescaling and parameters use different architectures")
    ws, bs = [], []
    for l in range(1, params.arch.depth + 1):
        lo, hi = lam.vectors[l - 1], lam.vectors[l]
        ws.append(params.weight(l) * lo[np.newaxis, :] / hi[:, np.newaxis])
        bs.append(params.bias(l) / hi)
    return NetworkParams.create(params.arch, ws, bs)


def random_rescaling(arch, seed: int, positive: bool = True, spread: float = 2.0) -> RescalingVectors:
    """Hidden scales log-uniform on ``[1/spread, spread]``, optionally with random signs."""
    if spread <= 0:
        raise ValueError("spread must be positive")
    if not isinstance(arch, Architecture):
        arch = Architecture(tuple(arch))
    rng = np.random.default_rng(seed)
    m = arch.num_hidden
    hidden = np.exp(rng.uniform(-np.log(spread), np.log(spread), size=m))
    if not positive:
        hidden = hidden * rng.choice([-1.0, 1.0], size=m)
    return RescalingVectors.from_hidden(arch, hidden)


def close(a, b, tol: float) -> bool:
    """Entrywise ``|a - b| <= tol (1 + |a| + |b|)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return bool(np.all(np.abs(a - b) <= tol * (1 + np.abs(a) + np.abs(b))))


def outward_path(params: NetworkParams, layer: int, v: int, tol: float = 0.0) -> tuple[int, ...]:
    """Greedy path ``(v, ..., v_L)`` following the first outgoing weight with ``|w| > tol``."""
    path = [v]
    for l in range(layer, params.arch.depth):
        col = params.weight(l + 1)[:, path[-1]]
        nz = np.nonzero(np.abs(np.asarray(col, dtype=np.float64)) > tol)[0]
        if nz.size == 0:
            raise DegenerateParamsError(f"neuron {(l, path[-1])} has no outgoing weight above {tol}")
        path.append(int(nz[0]))
    return tuple(path)


def recover_rescaling(theta: NetworkParams, theta_t: NetworkParams, tol: float = 1e-9,
                      tol_S: float | None = None) -> RescalingVectors | None:
    """Find ``lam`` with ``apply_rescaling(theta, lam) == theta_t``, or None.

    Each hidden scale is the ratio of outward path products along a path with
    nonzero product on ``theta``; the candidate is then validated by
    reconstruction, so a None result means the pair is not rescaling-equivalent
    within ``tol``.
    """
    from .pathspace import theta_out

    if theta.arch != theta_t.arch:
        return None
    degenerate, witnesses = is_degenerate_S(theta, tol_S)
    if degenerate:
        raise DegenerateParamsError(f"reference parameters lie in S at neurons {witnesses}")
    if tol_S is None:
        tol_S = 0.0
    s = theta.arch.layer_sizes
    vecs = [np.ones(s[0])]
    for l in theta.arch.hidden_layers:
        lam = np.empty(s[l])
        for v in range(s[l]):
            p = outward_path(theta, l, v, tol_S)
            ref = float(theta_out(theta, l, p))
            lam[v] = float(theta_out(theta_t, l, p)) / ref
        if np.any(lam == 0) or not np.all(np.isfinite(lam)):
            return None
        vecs.append(lam)
    vecs.append(np.ones(s[-1]))
    candidate = RescalingVectors(theta.arch, tuple(vecs))
    rebuilt = apply_rescaling(theta.as_float(), candidate)
    if close(rebuilt.to_vector(), theta_t.as_float().to_vector(), tol):
        return candidate
    return None


class Equivalence(enum.Enum):
    POSITIVE_RESCALING = "PositiveRescaling"
    RESCALING_ONLY = "RescalingOnly"
    NOT_EQUIVALENT = "NotEquivalent"


def are_equivalent(theta: NetworkParams, theta_t: NetworkParams, tol: float = 1e-9,
                   tol_S: float | None = None) -> Equivalence:
    lam = recover_rescaling(theta, theta_t, tol, tol_S)
    if lam is None:
        return Equivalence.NOT_EQUIVALENT
    if sign_pattern(theta) == sign_pattern(theta_t):
        return Equivalence.POSITIVE_RESCALING
    return Equivalence.RESCALING_ONLY


def canonicalize(params: NetworkParams, tol_S: float | None = None) -> tuple[NetworkParams, RescalingVectors]:
    """Positively rescale so each hidden neuron's largest outgoing |weight| is 1."""
    degenerate, witnesses = is_degenerate_S(params, tol_S)
    if degenerate:
        raise DegenerateParamsError(f"cannot canonicalize: degenerate neurons {witnesses}")
    params = params.as_float()
    s = params.arch.layer_sizes
    L = params.arch.depth
    vecs = [None] * (L + 1)
    vecs[L] = np.ones(s[L])
    for l in range(L - 1, 0, -1):
        # |w~_{v->v'}| = lam_v |w_{v->v'}| / lam_{v'}
        ratios = np.abs(params.weight(l + 1)) / vecs[l + 1][:, np.newaxis]
        vecs[l] = 1.0 / ratios.max(axis=0)
    vecs[0] = np.ones(s[0])
    lam = RescalingVectors(params.arch, tuple(vecs))
    return apply_rescaling(params, lam), lam
