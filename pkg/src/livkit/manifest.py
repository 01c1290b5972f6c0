"""Canonical JSON, content hashing, and run manifests.

Canonical JSON fixes key order and float formatting (17 significant digits)
so that configs hash identically across runs and platforms.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

TOOL_VERSION = "0.1.0"


def canonical_json(obj) -> str:
    out: list[str] = []
    _emit(obj, out)
    return "".join(out)


def _emit(obj, out: list[str]) -> None:
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float in canonical JSON: {obj!r}")
        out.append(format(obj, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"non-string key in canonical JSON: {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _emit(obj[key], out)
        out.append("}")
    else:
        raise TypeError(f"unsupported type in canonical JSON: {type(obj).__name__}")


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def fingerprint_dir(path) -> str:
    """Hash of every regular file under `path` (sorted relative names + bytes)."""
    path = Path(path)
    h = hashlib.sha256()
    for p in sorted(path.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(path)).encode())
            h.update(b"\x00")
            h.update(p.read_bytes())
    return h.hexdigest()


def write_run_manifest(out_dir, command: str, config: dict, inputs: dict[str, str], seed) -> None:
    """Record what produced an artifact directory. No timestamps: manifests
    must be byte-identical across reruns with identical inputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "tool_version": TOOL_VERSION,
        "seed": seed,
    }
    (out_dir / "run_manifest.json").write_text(canonical_json(doc) + "\n")
