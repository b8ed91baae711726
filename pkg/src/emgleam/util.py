"""Small shared helpers: seed derivation and deterministic JSON."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def derive_seed(base_seed: int, *labels) -> int:
    """Derive a child seed from a base seed and a sequence of stage labels.

    All randomness in the toolkit fans out from one user seed through this
    function, so any stage can be re-run in isolation.  The derivation is
    sha256 over the decimal seed and the labels, keeping the result stable
    across platforms and releases.
    """
    text = str(int(base_seed)) + "".join("/" + str(lab) for lab in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def dump_json(path, obj) -> None:
    """Write JSON with a fixed layout so equal inputs give equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
