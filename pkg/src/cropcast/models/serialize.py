"""Model persistence: JSON manifest plus one little-endian float64 blob.

The blob holds every parameter array raveled C-order, concatenated in the
model's fixed ``param_names`` order; the manifest records kind, constructor
meta, per-parameter shapes, and an optional scaler reference so a loaded
model knows which scaling its inputs expect.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from .core import Model
from .nets import Logreg, Lstm, Mlp


def save_model(model: Model, stem, scaler_ref: str | None = None) -> Path:
    """Write ``<stem>.json`` + ``<stem>.f64``; returns the manifest path."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": model.kind,
        "meta": model.meta,
        "params": [{"name": k, "shape": list(model.params[k].shape)}
                   for k in model.param_names],
        "scaler": scaler_ref,
        "dtype": "f64",
    }
    manifest_path = stem.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n",
                             encoding="utf-8")
    blob = np.concatenate([model.params[k].ravel() for k in model.param_names])
    blob.astype("<f8").tofile(stem.with_suffix(".f64"))
    return manifest_path


def load_model(stem) -> Model:
    """Rebuild a model from its manifest + blob pair."""
    stem = Path(stem)
    manifest_path = stem if stem.suffix == ".json" else stem.with_suffix(".json")
    if not manifest_path.exists():
        raise DataError(f"missing model manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    kind = manifest.get("kind")
    meta = manifest.get("meta", {})
    if kind == "logreg":
        model = Logreg(meta["n_features"], seed=meta.get("seed", 0))
    elif kind == "mlp":
        model = Mlp(meta["n_features"], hidden=tuple(meta["hidden"]),
                    seed=meta.get("seed", 0))
    elif kind == "lstm":
        model = Lstm(meta["n_channels"], hidden=meta["hidden"],
                     seed=meta.get("seed", 0))
    else:
        raise DataError(f"unknown model kind {kind!r} in {manifest_path}")

    blob_path = manifest_path.with_suffix(".f64")
    if not blob_path.exists():
        raise DataError(f"missing model blob {blob_path}")
    blob = np.fromfile(blob_path, dtype="<f8")
    offset = 0
    for entry in manifest["params"]:
        name, shape = entry["name"], tuple(entry["shape"])
        want = model.params[name].shape
        if shape != want:
            raise DataError(f"parameter {name} shape {shape} does not match "
                            f"architecture {want}")
        size = int(np.prod(shape))
        if offset + size > blob.size:
            raise DataError(f"model blob {blob_path} too short at {name}")
        model.params[name] = blob[offset:offset + size].reshape(shape).copy()
        offset += size
    if offset != blob.size:
        raise DataError(f"model blob {blob_path} has {blob.size - offset} "
                        "trailing values")
    model.meta["scaler"] = manifest.get("scaler")
    return model
