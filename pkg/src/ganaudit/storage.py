"""On-disk formats: the GTEN tensor container plus JSON manifests for models and datasets.

GTEN layout (all little-endian)::

    b"GTEN" | u16 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim | u64 dims[ndim] | payload

The payload is the row-major array, ``prod(dims) * itemsize`` bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ganaudit.models import GeneratorModel, constant_model, linear_model, mlp_model, spiral_model

MAGIC = b"GTEN"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_HEADER = struct.Struct("<4sHBB")

MODEL_FORMAT = "ganaudit-model"


class FormatError(ValueError):
    """A file does not follow the expected on-disk format."""


def encode_gten(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in DTYPE_CODES:
        if np.issubdtype(arr.dtype, np.number) or arr.dtype == bool:
            arr = arr.astype(np.float64)
        else:
            raise FormatError(f"GTEN stores float32/float64 only, got {arr.dtype}")
    code = DTYPE_CODES[arr.dtype]
    if arr.ndim > 255:
        raise FormatError("GTEN supports at most 255 dimensions")
    head = _HEADER.pack(MAGIC, VERSION, code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes(order="C")
    return head + dims + payload


def decode_gten(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise FormatError("GTEN header truncated")
    magic, version, code, ndim = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported GTEN version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    off = _HEADER.size
    if len(data) < off + 8 * ndim:
        raise FormatError("GTEN dims truncated")
    dims = struct.unpack_from(f"<{ndim}Q", data, off)
    off += 8 * ndim
    dtype = DTYPES[code]
    expected = int(np.prod(dims, dtype=np.uint64)) * dtype.itemsize
    if len(data) - off != expected:
        raise FormatError(f"payload is {len(data) - off} bytes, header implies {expected}")
    arr = np.frombuffer(data, dtype=dtype, offset=off).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_gten(path, array) -> None:
    Path(path).write_bytes(encode_gten(array))


def read_gten(path) -> np.ndarray:
    return decode_gten(Path(path).read_bytes())


# --- models ------------------------------------------------------------------

def save_model(model: GeneratorModel, path, sigma2: float | None = None) -> Path:
    """Write ``<path>`` (JSON manifest) with GTEN weight files beside it.

    Tensors are referenced by name from ``params`` and listed with their file
    in ``weights``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    weights = []

    def tensor(key, arr):
        fname = f"{path.stem}.{key}.gten"
        write_gten(path.parent / fname, np.asarray(arr, dtype=np.float64))
        weights.append({"name": key, "file": fname})
        return key

    p = model.params
    if model.kind == "linear":
        params = {"weight": tensor("weight", p["weight"]), "mean": tensor("mean", p["mean"])}
    elif model.kind == "constant":
        params = {"value": tensor("value", p["value"])}
    elif model.kind == "spiral":
        params = {k: p[k] for k in ("a", "b", "c")}
    else:
        layers = []
        for i, layer in enumerate(p["layers"]):
            entry = {"type": layer["type"]}
            if layer["type"] == "dense":
                entry["weight"] = tensor(f"layer{i}.weight", layer["weight"])
                entry["bias"] = tensor(f"layer{i}.bias", layer["bias"])
            elif layer["type"] == "reshape":
                entry["shape"] = list(layer["shape"])
            elif layer["type"] == "leaky_relu" and "slope" in layer:
                entry["slope"] = layer["slope"]
            layers.append(entry)
        params = {"layers": layers}
    manifest = {
        "format": MODEL_FORMAT,
        "version": 1,
        "kind": model.kind,
        "name": model.name,
        "latent_dim": model.latent_dim,
        "output_shape": list(model.output_shape),
        "params": params,
        "weights": weights,
    }
    if sigma2 is not None:
        manifest["sigma2"] = float(sigma2)
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def load_model(path) -> tuple[GeneratorModel, float | None]:
    """Returns ``(model, sigma2)``; ``sigma2`` is None when the manifest has none."""
    path = Path(path)
    try:
        m = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(m, dict) or m.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: not a model manifest")
    try:
        files = {w["name"]: w["file"] for w in m.get("weights", [])}
        params = m["params"]
        kind = m["kind"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing manifest field {exc}") from None

    def tensor(name):
        if name not in files:
            raise FormatError(f"{path}: no weight file for {name!r}")
        return read_gten(path.parent / files[name])

    name = m.get("name", "")
    try:
        if kind == "linear":
            model = linear_model(tensor(params["weight"]), tensor(params["mean"]), name, m.get("output_shape"))
        elif kind == "constant":
            model = constant_model(tensor(params["value"]), m.get("latent_dim", 1), name)
        elif kind == "spiral":
            model = spiral_model(params["a"], params["b"], params["c"], name)
        elif kind == "mlp":
            layers = []
            for entry in params["layers"]:
                layer = dict(entry)
                if layer["type"] == "dense":
                    layer["weight"] = tensor(layer["weight"])
                    layer["bias"] = tensor(layer["bias"])
                layers.append(layer)
            model = mlp_model(layers, m["latent_dim"], name)
        else:
            raise FormatError(f"{path}: unknown model kind {kind!r}")
    except KeyError as exc:
        raise FormatError(f"{path}: missing parameter {exc}") from None
    if list(model.output_shape) != list(m.get("output_shape", model.output_shape)):
        raise FormatError(f"{path}: output_shape disagrees with the stored tensors")
    return model, m.get("sigma2")


# --- datasets ------------------------------------------------------------------

def save_dataset(path, samples, labels=None, group: str = "train", classes=None) -> Path:
    """``<path>`` holds the GTEN tensor ``(N, *shape)``; a ``.json`` sidecar the labels."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = np.asarray(samples, dtype=np.float64)
    write_gten(path, samples)
    labels = [0] * len(samples) if labels is None else [int(v) for v in labels]
    if len(labels) != len(samples):
        raise ValueError("labels and samples differ in length")
    side = {"group": group, "labels": labels,
            "classes": sorted(set(labels)) if classes is None else list(classes)}
    sidecar(path).write_text(json.dumps(side) + "\n", encoding="utf-8")
    return path


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_dataset(path):
    """Returns ``(samples, labels, group)``; labels default to 0 without a sidecar."""
    samples = read_gten(path)
    side = sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        labels = np.asarray(meta.get("labels", [0] * len(samples)), dtype=int)
        group = meta.get("group", "train")
    else:
        labels, group = np.zeros(len(samples), dtype=int), "train"
    if len(labels) != len(samples):
        raise FormatError(f"{side}: {len(labels)} labels for {len(samples)} samples")
    return samples, labels, group
