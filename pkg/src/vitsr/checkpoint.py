"""Checkpoint format shared by all phases: one flat little-endian float64
array file (.bin) plus a plain-text manifest (.manifest) listing tensor
name, byte offset, and shape per line, tab separated, in write order."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError, DependencyError, MissingPathError


def save_checkpoint(stem, arrays: dict[str, np.ndarray]):
    """Write <stem>.bin and <stem>.manifest."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    offset = 0
    lines = []
    with open(stem.with_suffix(".bin"), "wb") as fh:
        for name, arr in arrays.items():
            flat = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(flat.tobytes())
            shape = ",".join(str(v) for v in arr.shape) or "scalar"
            lines.append(f"{name}\t{offset}\t{shape}")
            offset += flat.nbytes
    manifest = stem.with_suffix(".manifest")
    manifest.write_text("\n".join(lines) + "\n")
    return stem.with_suffix(".bin"), manifest


def load_checkpoint(stem) -> dict[str, np.ndarray]:
    stem = Path(stem)
    bin_path = stem.with_suffix(".bin")
    manifest = stem.with_suffix(".manifest")
    if not bin_path.exists() or not manifest.exists():
        raise MissingPathError(f"checkpoint {stem} not found (need .bin and .manifest)")
    blob = bin_path.read_bytes()
    arrays: dict[str, np.ndarray] = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        try:
            name, offset_s, shape_s = line.split("\t")
            offset = int(offset_s)
            shape = () if shape_s == "scalar" else tuple(int(v) for v in shape_s.split(","))
        except ValueError:
            raise DataError(f"malformed manifest line {line!r} in {manifest}") from None
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise DataError(f"manifest entry {name} overruns {bin_path} ({end} > {len(blob)})")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset) \
            .reshape(shape).copy()
    return arrays


def require_checkpoint(stem, what: str) -> dict[str, np.ndarray]:
    """Load a prerequisite checkpoint or raise DependencyError naming it."""
    try:
        return load_checkpoint(stem)
    except MissingPathError:
        raise DependencyError(
            f"missing {what} checkpoint at {stem}; run the earlier phase first") from None
