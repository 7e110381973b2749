"""Versioned single-file checkpoints with content checksums.

A checkpoint captures everything the optimizer owns: current prompt,
technique state, history, RNG state, and call counters. Data subsets are
not stored; they re-derive from the seed. The checksum covers the whole
payload, so silent corruption surfaces as ChecksumMismatch at load time.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Union

from .errors import ChecksumMismatch, IoFailure

CHECKPOINT_VERSION = 1


def _payload_checksum(payload: dict[str, Any]) -> str:
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_checkpoint(path: Union[str, Path], state: dict[str, Any]) -> str:
    """Write the state dict plus version and checksum; returns the checksum."""
    payload = {"version": CHECKPOINT_VERSION, **state}
    checksum = _payload_checksum(payload)
    document = {**payload, "checksum": checksum}
    try:
        Path(path).write_text(
            json.dumps(document, sort_keys=True, ensure_ascii=True), encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc
    return checksum


def load_checkpoint(path: Union[str, Path]) -> dict[str, Any]:
    """Read and verify a checkpoint; any corruption raises ChecksumMismatch."""
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        document = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ChecksumMismatch(f"checkpoint {path} is not valid JSON") from exc
    if not isinstance(document, dict) or "checksum" not in document:
        raise ChecksumMismatch(f"checkpoint {path} has no checksum")
    stored = document.pop("checksum")
    if _payload_checksum(document) != stored:
        raise ChecksumMismatch(f"checkpoint {path} failed checksum verification")
    if document.get("version") != CHECKPOINT_VERSION:
        raise ChecksumMismatch(
            f"checkpoint {path} has unsupported version {document.get('version')!r}"
        )
    return document
