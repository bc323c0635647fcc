"""Fully-connected ReLU networks: architectures, parameters, forward passes.

Layers are numbered 0..L as usual: layer 0 holds the inputs, layers 1..L-1 are
hidden ReLU layers and layer L is the affine output layer.  A neuron is
addressed by ``(layer, index)``.  ``weights[l - 1]`` is the matrix ``W_l`` of
shape ``(N_l, N_{l-1})`` whose entry ``(v', v)`` is the weight of the edge
``v -> v'``; ``biases[l - 1]`` is ``b_l``.

Parameters may be stored either as float64 arrays or as object arrays of
:class:`fractions.Fraction`; every operation in this module works on both,
which is what the exact-rational oracles rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ShapeError

Neuron = tuple[int, int]
Edge = tuple[int, int, int]  # (layer of target, source index, target index)


@dataclass(frozen=True)
class Architecture:
    """Layer widths ``(N_0, ..., N_L)`` with ``L >= 2``."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.layer_sizes)
        if len(sizes) < 3:
            raise ShapeError(f"need at least 3 layers (L >= 2), got {len(sizes)}")
        if any(n < 1 for n in sizes):
            raise ShapeError(f"layer sizes must be positive, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def depth(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def hidden_layers(self) -> range:
        return range(1, self.depth)

    @property
    def num_edges(self) -> int:
        s = self.layer_sizes
        return sum(s[l - 1] * s[l] for l in range(1, len(s)))

    @property
    def num_biases(self) -> int:
        return sum(self.layer_sizes[1:])

    @property
    def num_hidden(self) -> int:
        return sum(self.layer_sizes[1:-1])

    def edges(self) -> Iterator[Edge]:
        """All edges in (layer, source, target) lexicographic order."""
        s = self.layer_sizes
        for l in range(1, len(s)):
            for src in range(s[l - 1]):
                for tgt in range(s[l]):
                    yield (l, src, tgt)

    def bias_units(self) -> Iterator[Neuron]:
        """All non-input neurons in (layer, index) order."""
        for l in range(1, len(self.layer_sizes)):
            for v in range(self.layer_sizes[l]):
                yield (l, v)

    def hidden_units(self) -> Iterator[Neuron]:
        for l in self.hidden_layers:
            for v in range(self.layer_sizes[l]):
                yield (l, v)


def _as_array(values, shape: tuple[int, ...], what: str) -> np.ndarray:
    exact = _contains_fraction(values)
    arr = np.array(values, dtype=object if exact else np.float64)
    if arr.shape != shape:
        raise ShapeError(f"{what} has shape {arr.shape}, expected {shape}")
    if exact:
        arr = np.vectorize(Fraction, otypes=[object])(arr) if arr.size else arr
    elif not np.all(np.isfinite(arr)):
        raise ShapeError(f"{what} contains non-finite entries")
    arr.setflags(write=False)
    return arr


def _contains_fraction(values) -> bool:
    if isinstance(values, np.ndarray):
        return values.dtype == object
    if isinstance(values, Fraction):
        return True
    if isinstance(values, (list, tuple)):
        return any(_contains_fraction(v) for v in values)
    return False


@dataclass(frozen=True, eq=False)
class NetworkParams:
    """Weights and biases of a network over a fixed architecture."""

    arch: Architecture
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    @classmethod
    def create(cls, arch, weights: Sequence, biases: Sequence) -> "NetworkParams":
        if not isinstance(arch, Architecture):
            arch = Architecture(tuple(arch))
        L = arch.depth
        if len(weights) != L or len(biases) != L:
            raise ShapeError(f"expected {L} weight matrices and bias vectors")
        s = arch.layer_sizes
        exact = _contains_fraction(list(weights)) or _contains_fraction(list(biases))
        ws, bs = [], []
        for l in range(1, L + 1):
            w, b = weights[l - 1], biases[l - 1]
            if exact:
                w = _to_fractions(w)
                b = _to_fractions(b)
            ws.append(_as_array(w, (s[l], s[l - 1]), f"W_{l}"))
            bs.append(_as_array(b, (s[l],), f"b_{l}"))
        return cls(arch, tuple(ws), tuple(bs))

    @classmethod
    def from_vector(cls, arch, vec) -> "NetworkParams":
        """Inverse of :meth:`to_vector`."""
        if not isinstance(arch, Architecture):
            arch = Architecture(tuple(arch))
        vec = np.asarray(vec, dtype=object if _contains_fraction(vec) else np.float64)
        if vec.shape != (arch.num_edges + arch.num_biases,):
            raise ShapeError(
                f"parameter vector has shape {vec.shape}, "
                f"expected ({arch.num_edges + arch.num_biases},)"
            )
        s = arch.layer_sizes
        ws, bs, pos = [], [], 0
        for l in range(1, arch.depth + 1):
            k = s[l - 1] * s[l]
            ws.append(vec[pos : pos + k].reshape(s[l - 1], s[l]).T)
            pos += k
        for l in range(1, arch.depth + 1):
            bs.append(vec[pos : pos + s[l]])
            pos += s[l]
        return cls.create(arch, ws, bs)

    def weight(self, l: int) -> np.ndarray:
        """``W_l`` for ``l`` in ``1..L``."""
        return self.weights[l - 1]

    def bias(self, l: int) -> np.ndarray:
        """``b_l`` for ``l`` in ``1..L``."""
        return self.biases[l - 1]

    @property
    def is_exact(self) -> bool:
        return self.weights[0].dtype == object

    def to_vector(self) -> np.ndarray:
        """Flatten as all edges in (layer, source, target) order, then all biases."""
        parts = [w.T.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    def max_abs(self):
        return max(abs(v) for v in self.to_vector())

    def as_float(self) -> "NetworkParams":
        if not self.is_exact:
            return self
        return NetworkParams.create(
            self.arch,
            [w.astype(np.float64) for w in self.weights],
            [b.astype(np.float64) for b in self.biases],
        )

    def replace(self, weights=None, biases=None) -> "NetworkParams":
        return NetworkParams.create(
            self.arch,
            self.weights if weights is None else weights,
            self.biases if biases is None else biases,
        )

    def __repr__(self):
        return f"NetworkParams(layer_sizes={list(self.arch.layer_sizes)}, exact={self.is_exact})"


def _to_fractions(values) -> np.ndarray:
    arr = np.array(values, dtype=object)
    return np.vectorize(Fraction, otypes=[object])(arr) if arr.size else arr


def random_params(arch, rng: np.random.Generator, scale: float = 1.0) -> NetworkParams:
    """Unit-normal (times ``scale``) weights and biases."""
    if not isinstance(arch, Architecture):
        arch = Architecture(tuple(arch))
    s = arch.layer_sizes
    ws = [scale * rng.standard_normal((s[l], s[l - 1])) for l in range(1, len(s))]
    bs = [scale * rng.standard_normal(s[l]) for l in range(1, len(s))]
    return NetworkParams.create(arch, ws, bs)


def integer_params(arch, rng: np.random.Generator, low: int = -3, high: int = 3,
                   denominator: int = 1) -> NetworkParams:
    """Rational parameters ``k / denominator`` with integer ``k`` in ``[low, high]``."""
    if not isinstance(arch, Architecture):
        arch = Architecture(tuple(arch))
    s = arch.layer_sizes

    def draw(shape):
        ints = rng.integers(low, high + 1, size=shape)
        return np.vectorize(lambda k: Fraction(int(k), denominator), otypes=[object])(ints)

    ws = [draw((s[l], s[l - 1])) for l in range(1, len(s))]
    bs = [draw((s[l],)) for l in range(1, len(s))]
    return NetworkParams.create(arch, ws, bs)


@dataclass(frozen=True)
class ForwardTrace:
    """Intermediate values of a forward pass.

    For a single input each entry is a vector; for a batch each entry has a
    leading input axis.  ``preactivations[l - 1]`` is ``z_l``,
    ``activations[l - 1]`` is ``f_l`` and ``bits[l - 1]`` holds the activation
    indicators ``a_v`` of hidden layer ``l`` (0/1 integers).
    """

    preactivations: tuple[np.ndarray, ...]
    activations: tuple[np.ndarray, ...]
    bits: tuple[np.ndarray, ...]

    def hidden_preactivations(self) -> tuple[np.ndarray, ...]:
        return self.preactivations[:-1]


def _check_inputs(params: NetworkParams, X) -> np.ndarray:
    exact = params.is_exact or _contains_fraction(X)
    X = np.array(X, dtype=object if exact else np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != params.arch.n_in:
        raise ShapeError(f"inputs have shape {X.shape}, expected (n, {params.arch.n_in})")
    if exact:
        X = _to_fractions(X)
    elif not np.all(np.isfinite(X)):
        raise ShapeError("inputs contain non-finite entries")
    return X


def forward_batch(params: NetworkParams, X, masks=None) -> tuple[np.ndarray, ForwardTrace]:
    """Run the network on every row of ``X``.

    ``masks`` optionally freezes the hidden activation pattern (a list of 0/1
    arrays of shape ``(n, N_l)``); the ReLU is then replaced by multiplication
    with the given bits.  Returns the ``(n, N_L)`` outputs and the trace.
    """
    X = _check_inputs(params, X)
    L = params.arch.depth
    f = X
    zs, fs, bits = [], [], []
    for l in range(1, L + 1):
        z = f @ params.weight(l).T + params.bias(l)
        if l < L:
            a = (z >= 0).astype(np.int64) if masks is None else np.asarray(masks[l - 1])
            f = z * a
            bits.append(a)
        else:
            f = z
        zs.append(z)
        fs.append(f)
    return f, ForwardTrace(tuple(zs), tuple(fs), tuple(bits))


def forward(params: NetworkParams, x) -> tuple[np.ndarray, ForwardTrace]:
    """Single-input forward pass: returns ``f_theta(x)`` and its trace."""
    x = np.asarray(x, dtype=object if (params.is_exact or _contains_fraction(x)) else np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a single input vector, got shape {x.shape}")
    out, tr = forward_batch(params, x.reshape(1, -1))
    single = ForwardTrace(
        tuple(z[0] for z in tr.preactivations),
        tuple(f[0] for f in tr.activations),
        tuple(a[0] for a in tr.bits),
    )
    return out[0], single


def outputs(params: NetworkParams, X) -> np.ndarray:
    return forward_batch(params, X)[0]


def default_s_tol(params: NetworkParams) -> float:
    return 1e-12 * (1.0 + float(params.max_abs()))


def is_degenerate_S(params: NetworkParams, tol_S: float | None = None) -> tuple[bool, list[Neuron]]:
    """Flag hidden neurons whose outflow, or inflow together with bias, vanishes.

    A neuron ``v`` is reported when ``max|w_{v->.}| <= tol_S`` or
    ``max|(w_{.->v}, b_v)| <= tol_S``.  With ``tol_S = 0`` this is exact
    membership in S.
    """
    if tol_S is None:
        tol_S = default_s_tol(params)
    witnesses = []
    for l, v in params.arch.hidden_units():
        out_norm = max(abs(w) for w in params.weight(l + 1)[:, v])
        in_norm = max(max(abs(w) for w in params.weight(l)[v, :]), abs(params.bias(l)[v]))
        if out_norm <= tol_S or in_norm <= tol_S:
            witnesses.append((l, v))
    return bool(witnesses), witnesses


class Margin(NamedTuple):
    value: float
    input_index: int
    neuron: Neuron


def activation_margin(params: NetworkParams, X) -> Margin:
    """Smallest ``|z_v(x^i)|`` over inputs and hidden neurons, with its location."""
    _, trace = forward_batch(params, X)
    best = None
    for l, z in enumerate(trace.hidden_preactivations(), start=1):
        absz = np.abs(np.asarray(z, dtype=np.float64))
        i, v = np.unravel_index(int(np.argmin(absz)), absz.shape)
        cand = Margin(float(absz[i, v]), int(i), (l, int(v)))
        if best is None or cand.value < best.value:
            best = cand
    return best


def default_margin_threshold(params: NetworkParams, X) -> float:
    _, trace = forward_batch(params, X)
    zmax = max(float(np.max(np.abs(np.asarray(z, dtype=np.float64))))
               for z in trace.hidden_preactivations())
    return 1e-6 * (1.0 + zmax)


@dataclass(frozen=True, eq=False)
class SignPattern:
    """Entrywise signs of weights and biases (values in {-1, 0, 1})."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def as_vector(self) -> np.ndarray:
        parts = [w.T.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        return np.concatenate(parts)

    def __eq__(self, other):
        if not isinstance(other, SignPattern):
            return NotImplemented
        a, b = self.as_vector(), other.as_vector()
        return a.shape == b.shape and bool(np.all(a == b))

    def __hash__(self):
        return hash(tuple(self.as_vector().tolist()))


def _sgn(arr: np.ndarray) -> np.ndarray:
    return (arr > 0).astype(np.int64) - (arr < 0).astype(np.int64)


def sign_pattern(params: NetworkParams) -> SignPattern:
    return SignPattern(
        tuple(_sgn(w) for w in params.weights),
        tuple(_sgn(b) for b in params.biases),
    )
