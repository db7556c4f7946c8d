"""File formats: binary datasets, JSON model/report files and YAML run configs.

Dataset container
    ``WROMDS01`` magic (8 bytes), header length as little-endian uint64,
    UTF-8 JSON header, then each array listed in ``header["arrays"]`` as
    little-endian float64 with real and imaginary parts interleaved.

Model and report files
    JSON; numeric arrays are embedded as ``{"dtype", "shape", "b64"}``
    blocks holding the raw little-endian bytes.
"""

from __future__ import annotations

import base64
import copy
import hashlib
import json
import struct
from dataclasses import asdict, is_dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import yaml

from .core import (CascadeCoefficients, CascadeModel, ComplexSeries, ModelOrders, NoiseModel,
                   WienerROMError)
from .predictors import BasisSpec

MAGIC = b"WROMDS01"
DATASET_SCHEMA_VERSION = 1
MODEL_FORMAT_VERSION = 1


def code_version() -> str:
    from . import __version__
    return __version__


class ConfigError(WienerROMError):
    """A configuration file failed validation."""


# ---------------------------------------------------------------- hashing

def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def config_hash(obj) -> str:
    """sha256 (first 16 hex digits) of the canonical JSON form."""
    text = json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------- array blocks

def encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a)
    dt = np.dtype(a.dtype).newbyteorder("<")
    return {"dtype": dt.str, "shape": list(a.shape),
            "b64": base64.b64encode(np.ascontiguousarray(a, dtype=dt).tobytes()).decode()}


def decode_array(block: dict) -> np.ndarray:
    raw = base64.b64decode(block["b64"])
    return np.frombuffer(raw, dtype=np.dtype(block["dtype"])).reshape(block["shape"]).copy()


# ---------------------------------------------------------------- datasets

def write_dataset(path, arrays: dict[str, np.ndarray], header: dict) -> None:
    """Write named complex arrays (time on axis 0) with a JSON header."""
    path = Path(path)
    meta = copy.deepcopy(_jsonable(header))
    meta["schema_version"] = DATASET_SCHEMA_VERSION
    meta.setdefault("code_version", code_version())
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype="<c16"))
        if a.ndim == 1:
            a = a[:, None]
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blob = a.view("<f8").tobytes()
        blobs.append(blob)
        offset += len(blob)
    meta["arrays"] = entries
    head = json.dumps(meta, sort_keys=True).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a dataset file")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n))


def read_dataset(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, arrays)``."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a dataset file")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        if header.get("schema_version") != DATASET_SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported schema version {header.get('schema_version')}")
        body = fh.read()
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) * 2
        flat = np.frombuffer(body, dtype="<f8", count=count, offset=e["offset"])
        arrays[e["name"]] = flat.view("<c16").reshape(e["shape"]).astype(complex)
    return header, arrays


def load_series(path, name: str = "observed") -> tuple[dict, ComplexSeries]:
    header, arrays = read_dataset(path)
    return header, ComplexSeries(arrays[name], header["dt"], header.get("label", name))


def export_csv(path, series: ComplexSeries, t0: float = 0.0) -> None:
    """Plot-ready text with header ``t,re_u1,im_u1,...``."""
    v = series.values
    cols = ["t"] + [f"{p}_u{k + 1}" for k in range(v.shape[1]) for p in ("re", "im")]
    t = t0 + series.dt * np.arange(v.shape[0])
    data = np.empty((v.shape[0], 1 + 2 * v.shape[1]))
    data[:, 0] = t
    data[:, 1::2] = v.real
    data[:, 2::2] = v.imag
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


# ---------------------------------------------------------------- models

def model_to_dict(model: CascadeModel, noise: NoiseModel | None = None,
                  provenance: dict | None = None) -> dict:
    c = model.cascade
    out = {
        "format": "wienerrom-model",
        "format_version": MODEL_FORMAT_VERSION,
        "orders": {"p": model.p, "r": model.r},
        "cascade": {"pairs": [list(pq) for pq in c.pairs], "linear": c.linear,
                    "margin": c.margin},
        "weights": encode_array(model.weights),
        "forcing_weights": None if model.forcing_weights is None
        else encode_array(model.forcing_weights),
        "basis": None if model.basis is None else model.basis.to_dict(),
        "state_dim": model.state_dim,
        "predictor_dim": model.predictor_dim,
        "noise": None if noise is None else {
            "real": noise.real, "seed": noise.seed, "factors": encode_array(noise.factors)},
        "provenance": _jsonable(provenance or {}),
    }
    return out


def model_from_dict(d: dict) -> tuple[CascadeModel, NoiseModel | None, dict]:
    if d.get("format") != "wienerrom-model":
        raise ValueError("not a model file")
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')}")
    cs = d["cascade"]
    coeffs = CascadeCoefficients(tuple(tuple(pq) for pq in cs["pairs"]), cs["linear"],
                                 cs["margin"], check=False)
    basis = None if d["basis"] is None else BasisSpec.from_dict(d["basis"])
    fw = d.get("forcing_weights")
    model = CascadeModel(ModelOrders(d["orders"]["p"], d["orders"]["r"]), coeffs,
                         decode_array(d["weights"]), basis, d["state_dim"], d["predictor_dim"],
                         None if fw is None else decode_array(fw))
    nz = d.get("noise")
    noise = None if nz is None else NoiseModel(decode_array(nz["factors"]), nz["real"],
                                               nz["seed"])
    return model, noise, d.get("provenance", {})


def save_model(path, model: CascadeModel, noise: NoiseModel | None = None,
               provenance: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, noise, provenance), indent=1))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))


def save_json(path, obj: Any) -> None:
    def enc(o):
        if isinstance(o, np.ndarray):
            return encode_array(o) if o.size > 64 else (
                {"re": o.real.tolist(), "im": o.imag.tolist()} if np.iscomplexobj(o) else o.tolist())
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, complex):
            return {"re": o.real, "im": o.imag}
        if is_dataclass(o):
            return asdict(o)
        raise TypeError(f"cannot serialize {type(o).__name__}")
    Path(path).write_text(json.dumps(obj, indent=1, default=enc))


# ---------------------------------------------------------------- configs

_NUM = {"type": "number"}
_INT = {"type": "integer"}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "name": {"type": "string"},
        "warning": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["ks", "burgers"]},
                "L": {"type": "number", "exclusiveMinimum": 0},
                "n_modes": {"type": "integer", "minimum": 2},
                "nu": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "stride": {"type": "integer", "minimum": 1},
                "steps": {"type": "integer", "minimum": 1},
                "burn_in_steps": {"type": "integer", "minimum": 0},
                "n_observed": {"type": "integer", "minimum": 1},
                "sigma": {"type": "array", "items": _NUM},
                "forced_modes": {"type": "integer", "minimum": 0},
                "seed": _INT,
                "ic_amplitude": _NUM,
                "record_forcing": {"type": "boolean"},
            },
        },
        "basis": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "conjugate": {"type": "boolean"},
                "first_factor": {"enum": ["same", "previous"]},
            },
        },
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "p": {"type": "integer", "minimum": 0},
                "r": {"type": "integer", "minimum": 0},
                "method": {"enum": ["nonlinear", "linear"]},
                "margin": {"type": "number", "minimum": 0},
                "ridge": {"type": "number", "minimum": 0},
                "forcing": {"type": "boolean"},
                "forcing_order": {"type": "integer", "minimum": 0},
                "fit_internal_ics": {"type": "boolean"},
                "max_evals": {"type": "integer", "minimum": 1},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "optimizer": {"enum": ["cobyqa", "cobyla"]},
                "discard": {"type": "integer", "minimum": 0},
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid": {"type": "integer", "minimum": 8},
                "trim": {"type": "integer", "minimum": 0},
            },
        },
    },
}


def validate_config(cfg: dict) -> dict:
    """Validate against :data:`CONFIG_SCHEMA`; errors name the offending key path."""
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    return cfg


PRESETS = ("ks-desk", "ks-large", "burgers-desk", "burgers-large")


def load_config(source: str | Path) -> dict:
    """Load a YAML config from a path or a preset name."""
    name = str(source)
    if name in PRESETS:
        text = resources.files("wienerrom.presets").joinpath(f"{name}.yaml").read_text()
    else:
        text = Path(source).read_text()
    cfg = yaml.safe_load(text)
    if not isinstance(cfg, dict):
        raise ConfigError("configuration must be a mapping")
    return validate_config(cfg)
