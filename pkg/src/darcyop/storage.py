"""Bit-exact persistence: raw little-endian float64 files plus a JSON manifest.

Dataset directory::

    manifest.json   version, grid, physics, snapshot times, seeds, config, fields
    perm.f64        [N, nz, ny, nx]
    press.f64       [N, M, nz, ny, nx]
    satw.f64        [N, M, nz, ny, nx]   (two-phase only)
    trans.f64       [N, ncell, 6]        (optional cache)

Model directory::

    model.json      version, architecture, normalization, parameter count, extras
    params.f64      flat parameter vector
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptData, InvalidArgument, UnsupportedVersion
from .network import Architecture, Normalization, OperatorNet

FORMAT_VERSION = 1
LE_F64 = np.dtype("<f8")
FIELD_FILES = {"perm": "perm.f64", "press": "press.f64", "satw": "satw.f64",
               "trans": "trans.f64"}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorruptData(f"{path}: missing") from None
    except json.JSONDecodeError as err:
        raise CorruptData(f"{path}: not valid JSON ({err})") from None


def write_array(path: Path, array) -> dict:
    raw = np.ascontiguousarray(array, dtype=LE_F64).tobytes()
    path.write_bytes(raw)
    return {"file": path.name, "shape": list(np.shape(array)), "bytes": len(raw),
            "sha256": hashlib.sha256(raw).hexdigest()}


def read_array(directory: Path, entry: dict) -> np.ndarray:
    path = Path(directory) / entry["file"]
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CorruptData(f"{path.name}: missing") from None
    expected = 8 * int(np.prod(entry["shape"]))
    if len(raw) != expected or len(raw) != entry["bytes"]:
        raise CorruptData(f"{path.name}: {len(raw)} bytes, expected {expected}")
    if hashlib.sha256(raw).hexdigest() != entry["sha256"]:
        raise CorruptData(f"{path.name}: checksum mismatch")
    return np.frombuffer(raw, dtype=LE_F64).reshape(entry["shape"]).astype(float)


def _check_version(manifest, path):
    version = manifest.get("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format version {version!r}, "
                                 f"this reader understands {FORMAT_VERSION}")


@dataclass
class Dataset:
    """Fields in their file layout plus generation metadata."""

    grid: dict
    physics: str  # "single" | "two"
    times: list  # snapshot step indices (1-based)
    perm: np.ndarray
    press: np.ndarray
    satw: np.ndarray | None = None
    trans: np.ndarray | None = None
    seeds: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    normalization: dict | None = None

    def __len__(self):
        return len(self.perm)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def write_dataset(path, data: Dataset) -> dict:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n = len(data)
    if data.physics not in ("single", "two"):
        raise InvalidArgument(f"unknown physics {data.physics!r}")
    if data.physics == "two" and data.satw is None:
        raise InvalidArgument("two-phase dataset needs a saturation field")
    fields = {}
    for name in FIELD_FILES:
        array = getattr(data, name)
        if array is None:
            continue
        if len(array) != n:
            raise InvalidArgument(f"field {name} has {len(array)} samples, expected {n}")
        fields[name] = write_array(path / FIELD_FILES[name], array)
    manifest = {
        "version": FORMAT_VERSION,
        "dtype": "float64-le",
        "order": "row-major [sample, time, z, y, x]",
        "grid": data.grid,
        "physics": data.physics,
        "num_samples": n,
        "times": [int(t) for t in data.times],
        "seeds": [int(s) for s in data.seeds],
        "config": data.config,
        "config_hash": data.config_hash,
        "normalization": data.normalization,
        "fields": fields,
    }
    _write_json(path / "manifest.json", manifest)
    return manifest


def read_manifest(path) -> dict:
    path = Path(path)
    manifest = _read_json(path / "manifest.json")
    _check_version(manifest, path / "manifest.json")
    return manifest


def read_dataset(path) -> Dataset:
    path = Path(path)
    manifest = read_manifest(path)
    arrays = {name: read_array(path, entry) for name, entry in manifest["fields"].items()}
    for name, array in arrays.items():
        if len(array) != manifest["num_samples"]:
            raise CorruptData(f"{FIELD_FILES[name]}: sample count disagrees with manifest")
    return Dataset(manifest["grid"], manifest["physics"], manifest["times"], arrays["perm"],
                   arrays["press"], arrays.get("satw"), arrays.get("trans"), manifest["seeds"],
                   manifest["config"], manifest.get("normalization"))


def dataset_digest(path) -> str:
    """Hash over the manifest's field checksums and config: identifies the data."""
    manifest = read_manifest(path)
    return config_hash({"config": manifest["config_hash"], "seeds": manifest["seeds"],
                        "fields": {k: v["sha256"] for k, v in manifest["fields"].items()}})


@dataclass
class SavedModel:
    net: OperatorNet
    stats: Normalization
    extras: dict = field(default_factory=dict)


def write_model(path, net: OperatorNet, stats: Normalization, extras: dict | None = None) -> dict:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = net.parameter_vector().numpy()
    entry = write_array(path / "params.f64", params)
    manifest = {
        "version": FORMAT_VERSION,
        "architecture": net.arch.to_dict(),
        "parameter_count": int(params.size),
        "normalization": stats.to_dict(),
        "params": entry,
        "extras": extras or {},
    }
    _write_json(path / "model.json", manifest)
    return manifest


def read_model_descriptor(path) -> tuple[Architecture, dict]:
    """Architecture and manifest without loading parameters."""
    path = Path(path)
    manifest = _read_json(path / "model.json")
    _check_version(manifest, path / "model.json")
    try:
        arch = Architecture(**manifest["architecture"])
    except (TypeError, InvalidArgument) as err:
        raise CorruptData(f"model.json: bad architecture ({err})") from None
    if manifest.get("parameter_count") != arch.parameter_count():
        raise CorruptData(f"model.json: parameter count {manifest.get('parameter_count')} does "
                          f"not match architecture ({arch.parameter_count()})")
    return arch, manifest


def read_model(path) -> SavedModel:
    path = Path(path)
    arch, manifest = read_model_descriptor(path)
    params = read_array(path, manifest["params"])
    if params.shape != (arch.parameter_count(),):
        raise CorruptData(f"params.f64: {params.size} values, architecture needs "
                          f"{arch.parameter_count()}")
    net = OperatorNet(arch)
    with torch.no_grad():
        net.load_parameter_vector(torch.from_numpy(params))
    return SavedModel(net, Normalization.from_dict(manifest["normalization"]),
                      manifest.get("extras", {}))


def atomic_write_text(path, text: str):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
