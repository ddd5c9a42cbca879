"""Model files (JSON manifest + little-endian float32 blobs), IDX images, CSV features."""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .network.layers import AvgPool, Conv, Dense, Network, NetworkError, ShapeError, Softmax, Square
from .network.quantize import QuantizationPolicy

MANIFEST_VERSION = 1


class FormatError(ValueError):
    """A file could not be parsed."""


# ---------------------------------------------------------------------------
# model files


def _read_blob(base: Path, spec, where: str) -> np.ndarray:
    try:
        name, shape = spec["file"], [int(s) for s in spec["shape"]]
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"{where}: blob needs 'file' and integer 'shape'") from None
    path = base / name
    if not path.is_file():
        raise FormatError(f"{where}: missing blob {name}")
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected or path.stat().st_size != 4 * expected:
        raise ShapeError(f"{where}: blob {name} holds {path.stat().st_size} bytes, shape {shape} needs {4 * expected}")
    return data.astype(np.float64).reshape(shape)


def _layer(base: Path, i: int, d: dict):
    where = f"layer {i}"
    if not isinstance(d, dict) or "type" not in d:
        raise FormatError(f"{where}: expected an object with a 'type'")
    kind = d["type"]
    try:
        if kind == "conv":
            return Conv(int(d["maps"]), d["window"], d.get("stride", 1), d.get("padding", 0),
                        _read_blob(base, d["weights"], where), _read_blob(base, d["bias"], where), d.get("scale"))
        if kind == "dense":
            return Dense(int(d["outputs"]), _read_blob(base, d["weights"], where),
                         _read_blob(base, d["bias"], where), d.get("scale"))
        if kind == "avgpool":
            return AvgPool(d["window"], d.get("stride"), d.get("padding", 0))
        if kind == "square":
            return Square()
        if kind == "softmax":
            return Softmax()
    except KeyError as e:
        raise FormatError(f"{where}: missing field {e}") from None
    except (TypeError, ValueError) as e:
        if isinstance(e, (ShapeError, FormatError)):
            raise
        raise FormatError(f"{where}: {e}") from None
    raise FormatError(f"{where}: unknown layer type {kind!r}")


def load_model(path: str | Path) -> tuple[Network, QuantizationPolicy]:
    """Read a manifest (JSON) and the weight blobs it names (paths relative to it)."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, UnicodeDecodeError) as e:
        raise FormatError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(manifest, dict) or "version" not in manifest:
        raise FormatError(f"{path}: manifest has no version field")
    if manifest["version"] != MANIFEST_VERSION:
        raise FormatError(f"{path}: unsupported manifest version {manifest['version']!r}")
    try:
        shape = tuple(int(s) for s in manifest["input_shape"])
        layers = [_layer(path.parent, i, d) for i, d in enumerate(manifest["layers"])]
    except KeyError as e:
        raise FormatError(f"{path}: missing field {e}") from None
    q = manifest.get("quantization", {})
    try:
        policy = QuantizationPolicy(float(q.get("input_scale", 1.0)), float(q.get("weight_scale", 16.0)),
                                    tuple(float(s) for s in q["stage_scales"]) if q.get("stage_scales") else None,
                                    float(q.get("input_bound", 255.0)))
    except (TypeError, ValueError) as e:
        raise FormatError(f"{path}: bad quantization block ({e})") from None
    try:
        return Network(shape, tuple(layers)), policy
    except NetworkError as e:
        raise ShapeError(str(e)) from None


def save_model(path: str | Path, net: Network, policy: QuantizationPolicy = QuantizationPolicy()) -> Path:
    """Write ``net`` as a manifest plus one blob per weight tensor next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stem = path.stem

    def blob(arr, name):
        fname = f"{stem}.{name}.f32"
        np.asarray(arr, dtype="<f4").tofile(path.parent / fname)
        return {"file": fname, "shape": list(np.shape(arr))}

    layers = []
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Conv):
            d = {"type": "conv", "maps": layer.maps, "window": list(layer.window), "stride": list(layer.stride),
                 "padding": [list(p) for p in layer.padding],
                 "weights": blob(layer.weights, f"l{i}.w"), "bias": blob(layer.bias, f"l{i}.b")}
            if layer.scale:
                d["scale"] = layer.scale
        elif isinstance(layer, Dense):
            d = {"type": "dense", "outputs": layer.outputs,
                 "weights": blob(layer.weights, f"l{i}.w"), "bias": blob(layer.bias, f"l{i}.b")}
            if layer.scale:
                d["scale"] = layer.scale
        elif isinstance(layer, AvgPool):
            d = {"type": "avgpool", "window": list(layer.window), "stride": list(layer.stride),
                 "padding": [list(p) for p in layer.padding]}
        else:
            d = {"type": "square" if isinstance(layer, Square) else "softmax"}
        layers.append(d)
    quant = {"input_scale": policy.input_scale, "weight_scale": policy.weight_scale,
             "input_bound": policy.input_bound}
    if policy.stage_scales is not None:
        quant["stage_scales"] = list(policy.stage_scales)
    manifest = {"version": MANIFEST_VERSION, "input_shape": list(net.input_shape),
                "quantization": quant, "layers": layers}
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# inputs

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def load_idx(path: str | Path) -> np.ndarray:
    """Array stored in the (big-endian) IDX format used by MNIST."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated IDX header")
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in _IDX_TYPES:
        raise FormatError(f"{path}: bad IDX magic {raw[:4].hex()}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    dtype = np.dtype(_IDX_TYPES[code])
    need = int(np.prod(dims)) * dtype.itemsize
    if len(raw) - head < need:
        raise FormatError(f"{path}: truncated IDX data ({len(raw) - head} of {need} bytes)")
    if len(raw) - head > need:
        raise FormatError(f"{path}: {len(raw) - head - need} trailing bytes after IDX data")
    return np.frombuffer(raw, dtype=dtype, count=int(np.prod(dims)), offset=head).reshape(dims)


def save_idx(path: str | Path, array: np.ndarray) -> None:
    a = np.asarray(array)
    code = {np.dtype("u1"): 0x08, np.dtype("i1"): 0x09}.get(a.dtype)
    if code is None:
        a = a.astype(">f8")
        code = 0x0E
    header = struct.pack(">HBB", 0, code, a.ndim) + struct.pack(f">{a.ndim}I", *a.shape)
    Path(path).write_bytes(header + a.astype(np.dtype(_IDX_TYPES[code])).tobytes())


def load_csv_features(path: str | Path) -> np.ndarray:
    """All numeric fields of a CSV file, in reading order, as one float vector."""
    values = []
    try:
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                for field in row:
                    field = field.strip()
                    if not field:
                        continue
                    try:
                        values.append(float(field))
                    except ValueError:
                        raise FormatError(f"{path}:{lineno}: non-numeric field {field!r}") from None
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from None
    if not values:
        raise FormatError(f"{path}: no values")
    return np.array(values)


def load_input(path: str | Path, index: int = 0) -> np.ndarray:
    """One sample from an IDX file (``index`` selects along the first axis) or a CSV file."""
    path = Path(path)
    if path.suffix.lower() in (".csv", ".txt"):
        return load_csv_features(path)
    a = load_idx(path)
    if a.ndim >= 3 or (a.ndim == 2 and a.shape[0] > 1 and index):
        if not 0 <= index < a.shape[0]:
            raise FormatError(f"{path}: sample {index} out of range (0..{a.shape[0] - 1})")
        a = a[index]
    return a.astype(np.float64).reshape(-1)
