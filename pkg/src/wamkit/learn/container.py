"""Versioned model container: one .npz holding a JSON meta blob (kind,
params, seed) plus the numeric arrays, so trained models replay exactly."""

from __future__ import annotations

import json

import numpy as np

FORMAT_VERSION = 1


def save_payload(path, meta: dict, arrays: dict) -> None:
    meta = dict(meta)
    meta["format_version"] = FORMAT_VERSION
    blob = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                      dtype=np.uint8)}
    for key, arr in arrays.items():
        if key.startswith("__"):
            raise ValueError("array names must not start with '__'")
        blob[key] = np.asarray(arr)
    np.savez(path, **blob)


def load_payload(path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {meta.get('format_version')}")
    return meta, arrays
