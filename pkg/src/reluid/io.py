"""Reading and writing models, samples and reports.

Models and samples are JSON documents with a ``format`` name and a
``format_version``.  Numbers may be JSON numbers or rational strings such as
``"3/4"``; a model containing any rational string is loaded in exact mode.
Samples may also be plain whitespace-separated text, one input per line.
"""

from __future__ import annotations

import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import FormatError
from .network import Architecture, NetworkParams

MODEL_FORMAT = "reluid-model"
SAMPLE_FORMAT = "reluid-sample"
FORMAT_VERSION = 1


def _parse_number(value, where: str):
    if isinstance(value, bool):
        raise FormatError(f"{where}: expected a number, got a boolean")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise FormatError(f"{where}: non-finite value")
        return value
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError):
            raise FormatError(f"{where}: cannot parse {value!r} as a rational") from None
    raise FormatError(f"{where}: expected a number, got {type(value).__name__}")


def _parse_array(value, where: str, ndim: int):
    if ndim == 0:
        return _parse_number(value, where)
    if not isinstance(value, list):
        raise FormatError(f"{where}: expected a list")
    return [_parse_array(v, f"{where}[{i}]", ndim - 1) for i, v in enumerate(value)]


def _has_fraction(rows) -> bool:
    if isinstance(rows, list):
        return any(_has_fraction(r) for r in rows)
    return isinstance(rows, Fraction)


def _to_array(rows, exact: bool) -> np.ndarray:
    if exact:
        arr = np.array(rows, dtype=object)
        return np.vectorize(Fraction, otypes=[object])(arr) if arr.size else arr
    return np.array(rows, dtype=np.float64)


def _load_json(path: Path, where: str) -> dict:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{where}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise FormatError(f"{where}: top level must be an object")
    return doc


def _check_header(doc: dict, expected: str, where: str):
    if doc.get("format") != expected:
        raise FormatError(f"{where}: field 'format' must be {expected!r}, got {doc.get('format')!r}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{where}: unsupported format_version {doc.get('format_version')!r}")


def model_from_dict(doc: dict, where: str = "model") -> NetworkParams:
    _check_header(doc, MODEL_FORMAT, where)
    for key in ("layer_sizes", "weights", "biases"):
        if key not in doc:
            raise FormatError(f"{where}: missing field {key!r}")
    try:
        arch = Architecture(tuple(doc["layer_sizes"]))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: field 'layer_sizes': {exc}") from None
    ws = _parse_array(doc["weights"], f"{where}.weights", 3)
    bs = _parse_array(doc["biases"], f"{where}.biases", 2)
    exact = _has_fraction(ws) or _has_fraction(bs)
    if len(ws) != arch.depth or len(bs) != arch.depth:
        raise FormatError(f"{where}: expected {arch.depth} weight matrices and bias vectors")
    try:
        weights = [_to_array(w, exact) for w in ws]
        biases = [_to_array(b, exact) for b in bs]
        return NetworkParams.create(arch, weights, biases)
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None


def _encode(value, exact: bool):
    if exact:
        f = Fraction(value)
        return str(f) if f.denominator != 1 else int(f)
    return float(value)


def model_to_dict(params: NetworkParams) -> dict:
    exact = params.is_exact
    return {
        "format": MODEL_FORMAT,
        "format_version": FORMAT_VERSION,
        "layer_sizes": list(params.arch.layer_sizes),
        "weights": [[[_encode(v, exact) for v in row] for row in W] for W in params.weights],
        "biases": [[_encode(v, exact) for v in b] for b in params.biases],
    }


def load_model(path) -> NetworkParams:
    path = Path(path)
    return model_from_dict(_load_json(path, str(path)), str(path))


def save_model(params: NetworkParams, path) -> None:
    Path(path).write_text(dumps(model_to_dict(params)))


def sample_from_dict(doc: dict, where: str = "sample") -> np.ndarray:
    _check_header(doc, SAMPLE_FORMAT, where)
    if "inputs" not in doc:
        raise FormatError(f"{where}: missing field 'inputs'")
    rows = _parse_array(doc["inputs"], f"{where}.inputs", 2)
    if rows and len({len(r) for r in rows}) != 1:
        raise FormatError(f"{where}: inputs have unequal lengths")
    return _to_array(rows, _has_fraction(rows))


def _sample_from_text(text: str, where: str) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        row = []
        for tok in line.replace(",", " ").split():
            try:
                row.append(float(tok))
            except ValueError:
                raise FormatError(f"{where}: line {lineno}: cannot parse {tok!r}") from None
        if rows and len(row) != len(rows[0]):
            raise FormatError(f"{where}: line {lineno}: expected {len(rows[0])} values, got {len(row)}")
        rows.append(row)
    if not rows:
        raise FormatError(f"{where}: no inputs")
    return np.array(rows, dtype=np.float64)


def load_sample(path) -> np.ndarray:
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("{"):
        return sample_from_dict(_load_json(path, str(path)), str(path))
    return _sample_from_text(text, str(path))


def sample_to_dict(X) -> dict:
    X = np.asarray(X)
    exact = X.dtype == object
    return {
        "format": SAMPLE_FORMAT,
        "format_version": FORMAT_VERSION,
        "inputs": [[_encode(v, exact) for v in row] for row in X],
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, fixed indentation, non-finite floats as strings."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"
