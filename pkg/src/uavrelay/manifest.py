"""Per-artifact manifests: input hashes, parameters, versions.

Every CLI stage writes ``<artifact>.manifest.json`` next to its output.
``reproduce`` skips a stage when the recorded inputs, parameters, and the
artifact's own hash all still match, which makes multi-hour pipelines
resumable.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys

import numpy as np

from . import __version__


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(artifact_path) -> str:
    return str(artifact_path) + ".manifest.json"


def _canonical(params: dict) -> str:
    return json.dumps(params, sort_keys=True)


def write_manifest(artifact_path, command: str, params: dict, inputs: dict) -> str:
    """Record how ``artifact_path`` was produced. Returns the manifest path."""
    doc = {
        "command": command,
        "params": json.loads(_canonical(params)),
        "inputs": {
            name: {"path": str(p), "sha256": file_sha256(p), "bytes": os.path.getsize(p)}
            for name, p in inputs.items()
        },
        "output": {
            "path": str(artifact_path),
            "sha256": file_sha256(artifact_path),
            "bytes": os.path.getsize(artifact_path),
        },
        "versions": {
            "uavrelay": __version__,
            "numpy": np.__version__,
            "python": f"{sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}",
        },
    }
    out = manifest_path(artifact_path)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    return out


def manifest_matches(artifact_path, command: str, params: dict, inputs: dict) -> bool:
    """True iff the artifact exists and was produced from identical inputs/params."""
    mpath = manifest_path(artifact_path)
    if not (os.path.exists(mpath) and os.path.exists(artifact_path)):
        return False
    try:
        with open(mpath, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError):
        return False
    if doc.get("command") != command:
        return False
    if _canonical(doc.get("params", {})) != _canonical(params):
        return False
    recorded = doc.get("inputs", {})
    if set(recorded) != set(inputs):
        return False
    for name, p in inputs.items():
        if not os.path.exists(p):
            return False
        if recorded[name].get("sha256") != file_sha256(p):
            return False
    out = doc.get("output", {})
    if out.get("sha256") != file_sha256(artifact_path):
        return False
    return True
