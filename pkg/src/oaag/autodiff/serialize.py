"""Parameter checkpoint files.

Format (JSON, version 1)::

    {"format": "oaag-params", "version": 1, "dtype": "float64",
     "params": {name: {"shape": [...], "values": [row-major floats]}},
     "meta": {...}}

Floats are written with ``repr`` so values round-trip bit-exactly.
"""
import json

import numpy as np

FORMAT = "oaag-params"
VERSION = 1


def params_to_json(params, meta=None):
    dtypes = {str(t.data.dtype) for t in params.values()}
    body = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": dtypes.pop() if len(dtypes) == 1 else "mixed",
        "params": {
            name: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
            for name, t in sorted(params.items())
        },
        "meta": meta or {},
    }
    return body


def save_params(path, params, meta=None):
    with open(path, "w") as fh:
        json.dump(params_to_json(params, meta), fh, separators=(",", ":"))
        fh.write("\n")


def arrays_from_json(body):
    if body.get("format") != FORMAT:
        raise ValueError("not an oaag parameter file")
    if body.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {body.get('version')}")
    dtype = np.float32 if body.get("dtype") == "float32" else np.float64
    out = {}
    for name, rec in body["params"].items():
        out[name] = np.asarray(rec["values"], dtype=dtype).reshape(rec["shape"])
    return out, body.get("meta", {})


def load_params(path):
    """Return ``(arrays, meta)`` from a checkpoint file."""
    with open(path) as fh:
        return arrays_from_json(json.load(fh))
