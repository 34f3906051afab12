"""Model checkpoints as uncompressed ``.npz`` archives.

Layout: one ``float64`` array per parameter, keyed by its ModelParams name,
plus a ``__meta__`` entry holding a UTF-8 JSON document::

    {"format": "gcae-checkpoint", "version": 1,
     "variant": {"task", "gate", "baseline"},
     "dims": {...ModelDims fields...},
     "vocab_sha256": str | null, "vocab": [tokens] | null, "aspects": [names] | null,
     "param_order": [names], "shapes": {name: [rows, cols]}, "extra": {...}}

Arrays are stored raw, so save -> load -> forward is bit-exact.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import ModelDims, ModelParams, ModelVariant

FORMAT = "gcae-checkpoint"


def vocab_digest(tokens: list[str]) -> str:
    return hashlib.sha256("\n".join(tokens).encode("utf-8")).hexdigest()


def save_checkpoint(path, params: ModelParams, vocab=None, aspects=None, extra=None) -> Path:
    path = Path(path)
    tokens = list(vocab.itos) if vocab is not None else None
    meta = {
        "format": FORMAT,
        "version": 1,
        "variant": {
            "task": params.variant.task.value,
            "gate": params.variant.gate.value,
            "baseline": params.variant.baseline.value,
        },
        "dims": asdict(params.dims),
        "vocab_sha256": vocab_digest(tokens) if tokens is not None else None,
        "vocab": tokens,
        "aspects": list(aspects) if aspects is not None else None,
        "param_order": list(params.arrays),
        "shapes": {k: list(v.shape) for k, v in params.arrays.items()},
        "extra": extra or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **params.arrays)
    return path


def load_checkpoint(path):
    """Return ``(params, meta)``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != FORMAT:
            raise ValueError(f"{path} is not a {FORMAT} file")
        arrays = {name: np.array(data[name]) for name in meta["param_order"]}
    for name, shape in meta["shapes"].items():
        if list(arrays[name].shape) != shape:
            raise ValueError(f"checkpoint array {name} has shape {arrays[name].shape}, header says {shape}")
    if meta["vocab"] is not None and vocab_digest(meta["vocab"]) != meta["vocab_sha256"]:
        raise ValueError("checkpoint vocabulary does not match its digest")
    variant = ModelVariant(**meta["variant"])
    dims = ModelDims(**meta["dims"])
    return ModelParams(variant, dims, arrays), meta
