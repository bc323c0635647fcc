"""Path enumeration, the lifting phi(theta) and the activation operator alpha.

A path starting at layer ``l < L`` is a neuron tuple ``(v_l, ..., v_{L-1})``.
The empty path beta (which carries the output biases) is represented as
``PathIndex(start=L, neurons=())`` so that bias-rooted and beta rows follow
the same product rules.

Canonical order: all of P_0 in lexicographic neuron order, then P_1, ...,
P_{L-1}, then beta.  Rows of ``phi`` and columns of ``alpha`` use this order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, NamedTuple, TextIO

import numpy as np
from scipy import sparse

from .errors import PathExplosionError, ShapeError
from .network import Architecture, NetworkParams, _check_inputs, forward_batch

DEFAULT_PATH_CAP = 10**7
ORDERING_VERSION = "paths:P0-lex..P(L-1)-lex,beta-last;v1"
DENSE_ENTRY_LIMIT = 10**5


class PathIndex(NamedTuple):
    start: int
    neurons: tuple[int, ...]

    @property
    def is_beta(self) -> bool:
        return len(self.neurons) == 0


@dataclass(frozen=True)
class PathEnumeration:
    """Bijection between paths and column ordinals."""

    arch: Architecture
    offsets: tuple[int, ...]  # offsets[l] = ordinal of the first path in P_l; offsets[L] = beta

    @property
    def count(self) -> int:
        return self.offsets[-1] + 1

    @property
    def beta(self) -> int:
        return self.offsets[-1]

    def block(self, l: int) -> slice:
        """Ordinals of P_l (``l = L`` gives the beta singleton)."""
        return slice(self.offsets[l], self.offsets[l + 1] if l < self.arch.depth else self.count)

    def index_of(self, path: PathIndex) -> int:
        L = self.arch.depth
        start, neurons = path
        if start == L and not neurons:
            return self.beta
        dims = self.arch.layer_sizes[start:L]
        if not 0 <= start < L or len(neurons) != len(dims):
            raise ShapeError(f"malformed path {path!r}")
        if any(not 0 <= v < d for v, d in zip(neurons, dims)):
            raise ShapeError(f"path {path!r} leaves its layers")
        return self.offsets[start] + int(np.ravel_multi_index(neurons, dims))

    def path_at(self, ordinal: int) -> PathIndex:
        L = self.arch.depth
        if ordinal == self.beta:
            return PathIndex(L, ())
        if not 0 <= ordinal < self.beta:
            raise IndexError(ordinal)
        l = max(k for k in range(L) if self.offsets[k] <= ordinal)
        dims = self.arch.layer_sizes[l:L]
        local = np.unravel_index(ordinal - self.offsets[l], dims)
        return PathIndex(l, tuple(int(v) for v in local))

    def __iter__(self) -> Iterator[PathIndex]:
        L = self.arch.depth
        for l in range(L):
            for neurons in np.ndindex(*self.arch.layer_sizes[l:L]):
                yield PathIndex(l, tuple(int(v) for v in neurons))
        yield PathIndex(L, ())

    def __len__(self):
        return self.count


def path_count(arch: Architecture) -> int:
    s = arch.layer_sizes
    L = arch.depth
    return sum(math.prod(s[l:L]) for l in range(L)) + 1


def enumerate_paths(arch, cap: int = DEFAULT_PATH_CAP) -> PathEnumeration:
    if not isinstance(arch, Architecture):
        arch = Architecture(tuple(arch))
    s = arch.layer_sizes
    L = arch.depth
    biggest = math.prod(s[:L])
    if biggest > cap:
        raise PathExplosionError(
            f"|P_0| = {' x '.join(map(str, s[:L]))} = {biggest} exceeds the path cap {cap}"
        )
    offsets, pos = [], 0
    for l in range(L):
        offsets.append(pos)
        pos += math.prod(s[l:L])
    offsets.append(pos)
    return PathEnumeration(arch, tuple(offsets))


def _suffix_weight_products(params: NetworkParams, l: int) -> np.ndarray:
    """Tensor ``T[v_l, ..., v_L] = prod_{k=l}^{L-1} w_{v_k -> v_{k+1}}``."""
    L = params.arch.depth
    T = params.weight(L).T
    for k in range(L - 2, l - 1, -1):
        Wt = params.weight(k + 1).T
        T = Wt.reshape(Wt.shape + (1,) * (T.ndim - 1)) * T[np.newaxis]
    return T


@dataclass(frozen=True, eq=False)
class LiftedMatrix:
    """``phi(theta)`` as a ``|P| x N_L`` array, rows in canonical path order."""

    enum: PathEnumeration
    values: np.ndarray

    def row(self, path: PathIndex) -> np.ndarray:
        return self.values[self.enum.index_of(path)]

    def vector(self) -> np.ndarray:
        """Row-major flattening, index ``p * N_L + v_L``."""
        return self.values.ravel()


def lift(params: NetworkParams, cap: int = DEFAULT_PATH_CAP,
         enum: PathEnumeration | None = None) -> LiftedMatrix:
    """Compute ``phi(theta)``: per-path weight products, bias-premultiplied for l >= 1."""
    enum = enum or enumerate_paths(params.arch, cap)
    L = params.arch.depth
    blocks = []
    for l in range(L):
        T = _suffix_weight_products(params, l)
        if l >= 1:
            b = params.bias(l)
            T = b.reshape(b.shape + (1,) * (T.ndim - 1)) * T
        blocks.append(T.reshape(-1, params.arch.n_out))
    blocks.append(params.bias(L).reshape(1, -1))
    values = np.concatenate(blocks, axis=0)
    values.setflags(write=False)
    return LiftedMatrix(enum, values)


def _activation_block(bits, X: np.ndarray, l: int, L: int) -> np.ndarray:
    """Rows of alpha restricted to P_l, shape ``(n, |P_l|)``."""
    n = X.shape[0]
    G = np.asarray(bits[L - 2])  # a_{L-1}
    for k in range(L - 2, max(l, 1) - 1, -1):
        a = np.asarray(bits[k - 1])
        G = a.reshape(a.shape + (1,) * (G.ndim - 1)) * G[:, np.newaxis]
    if l == 0:
        G = X.reshape(X.shape + (1,) * (G.ndim - 1)) * G[:, np.newaxis]
    return G.reshape(n, -1)


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    """``alpha(X, theta)``: one row per input, one column per path.

    ``matrix`` is a dense array when small (or in exact mode) and a CSR
    sparse array otherwise.
    """

    enum: PathEnumeration
    matrix: object

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def is_sparse(self) -> bool:
        return sparse.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)

    def triplets(self) -> list[tuple[int, int, object]]:
        if self.is_sparse:
            coo = self.matrix.tocoo()
            trip = sorted(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))
            return [(r, c, v) for r, c, v in trip if v != 0]
        M = np.asarray(self.matrix)
        rows, cols = np.nonzero(M != 0)
        return [(int(r), int(c), M[r, c]) for r, c in zip(rows, cols)]

    def __matmul__(self, other):
        return self.matrix @ other


def activation_matrix(params: NetworkParams, X, cap: int = DEFAULT_PATH_CAP,
                      enum: PathEnumeration | None = None) -> ActivationMatrix:
    """Stack ``alpha(x^i, theta)`` for every input row."""
    enum = enum or enumerate_paths(params.arch, cap)
    X = _check_inputs(params, X)
    _, trace = forward_batch(params, X)
    L = params.arch.depth
    n = X.shape[0]
    exact = X.dtype == object
    if exact or n * enum.count < DENSE_ENTRY_LIMIT:
        blocks = [_activation_block(trace.bits, X, l, L) for l in range(L)]
        ones = np.full((n, 1), Fraction(1) if exact else 1.0, dtype=object if exact else np.float64)
        M = np.concatenate([np.asarray(b, dtype=ones.dtype) for b in blocks] + [ones], axis=1)
        return ActivationMatrix(enum, M)
    chunk = max(1, DENSE_ENTRY_LIMIT // enum.count)
    pieces = []
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        bits = [np.asarray(a)[sl] for a in trace.bits]
        blocks = [_activation_block(bits, X[sl], l, L) for l in range(L)]
        rows = np.concatenate(blocks + [np.ones((X[sl].shape[0], 1))], axis=1)
        pieces.append(sparse.csr_array(rows))
    return ActivationMatrix(enum, sparse.vstack(pieces, format="csr"))


def activation_row(params: NetworkParams, x, cap: int = DEFAULT_PATH_CAP) -> np.ndarray:
    """``alpha(x, theta)`` for a single input, as a dense vector of length |P|."""
    x = np.asarray(x, dtype=object if params.is_exact else np.float64)
    return activation_matrix(params, x.reshape(1, -1), cap).dense()[0]


class LinearCheck(NamedTuple):
    residual: object
    max_abs_error: object
    passed: bool


def check_linear_representation(params: NetworkParams, X, rel_tol: float = 1e-9,
                                cap: int = DEFAULT_PATH_CAP) -> LinearCheck:
    """Compare ``f_theta(X)`` with ``alpha(X, theta) phi(theta)``.

    The residual is ``||f - alpha phi||_inf / max(1, ||f||_inf)``.  In exact
    mode it is a Fraction and must be exactly zero.
    """
    enum = enumerate_paths(params.arch, cap)
    f = forward_batch(params, X)[0]
    alpha = activation_matrix(params, X, enum=enum)
    phi = lift(params, enum=enum)
    diff = f - alpha @ phi.values
    err = max(abs(v) for v in np.asarray(diff).ravel())
    scale = max(1, max(abs(v) for v in np.asarray(f).ravel()))
    residual = err / scale
    return LinearCheck(residual, err, bool(residual <= rel_tol))


def theta_in(params: NetworkParams, start: int, neurons) -> object:
    """``theta_{p_i}`` for ``p_i = (v_start, ..., v_end)``: bias at the root when start >= 1."""
    neurons = tuple(neurons)
    _validate_segment(params.arch, start, neurons)
    prod = 1 if start == 0 else params.bias(start)[neurons[0]]
    for k in range(len(neurons) - 1):
        prod = prod * params.weight(start + k + 1)[neurons[k + 1], neurons[k]]
    return prod


def theta_out(params: NetworkParams, start: int, neurons) -> object:
    """``theta_{p_o}`` for ``p_o = (v_start, ..., v_L)``: pure weight product (1 if empty)."""
    neurons = tuple(neurons)
    _validate_segment(params.arch, start, neurons)
    if start + len(neurons) - 1 != params.arch.depth:
        raise ShapeError("an output path must end in layer L")
    prod = 1
    for k in range(len(neurons) - 1):
        prod = prod * params.weight(start + k + 1)[neurons[k + 1], neurons[k]]
    return prod


def path_products(params: NetworkParams, start: int, neurons, kind: str) -> object:
    if kind == "in":
        return theta_in(params, start, neurons)
    if kind == "out":
        return theta_out(params, start, neurons)
    raise ValueError(f"kind must be 'in' or 'out', got {kind!r}")


def _validate_segment(arch: Architecture, start: int, neurons: tuple[int, ...]):
    s = arch.layer_sizes
    if not neurons or start < 0 or start + len(neurons) - 1 > arch.depth:
        raise ShapeError(f"malformed path segment starting at layer {start}: {neurons}")
    for k, v in enumerate(neurons):
        if not 0 <= v < s[start + k]:
            raise ShapeError(f"neuron {v} out of range in layer {start + k}")


# -- triplet export ------------------------------------------------------------

TRIPLET_FORMAT = "reluid-triplets"


def _fmt(v) -> str:
    if isinstance(v, Fraction):
        return str(v)
    return repr(float(v))


def write_triplets(fh: TextIO, shape: tuple[int, int], triplets, name: str,
                   ordering: str = ORDERING_VERSION) -> None:
    """Write ``(row, col, value)`` entries with a small self-describing header."""
    fh.write(f"# {TRIPLET_FORMAT} v1\n")
    fh.write(f"# matrix: {name}\n")
    fh.write(f"# ordering: {ordering}\n")
    fh.write(f"# shape: {shape[0]} {shape[1]}\n")
    for r, c, v in triplets:
        fh.write(f"{r} {c} {_fmt(v)}\n")


def read_triplets(fh: TextIO) -> tuple[dict, np.ndarray]:
    header, entries = {}, []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            header[key.strip()] = val.strip()
            continue
        r, c, v = line.split()
        entries.append((int(r), int(c), float(Fraction(v)) if "/" in v else float(v)))
    rows, cols = (int(t) for t in header["shape"].split())
    M = np.zeros((rows, cols))
    for r, c, v in entries:
        M[r, c] = v
    return header, M


def dense_triplets(M: np.ndarray) -> list[tuple[int, int, object]]:
    M = np.asarray(M)
    rows, cols = np.nonzero(M != 0)
    return [(int(r), int(c), M[r, c]) for r, c in zip(rows, cols)]
