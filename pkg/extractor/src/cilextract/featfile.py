"""Writer for the engine's binary feature-file format.

Layout (little-endian): magic "CILF1"; task mode byte (0 detection,
1 classification); u32 feature dim; u32 class count then u16-length-prefixed
utf-8 class names; u32 instance count then per instance a length-prefixed
id, a split byte (0 train / 1 dev / 2 test), an i32 gold label index with
-1 meaning the none-of-the-above class, and the float32 feature values.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CILF1"
MODE_CODE = {"detection": 0, "classification": 1}
SPLIT_CODE = {"train": 0, "dev": 1, "test": 2}


def write_feature_file(
    path: str | Path,
    mode: str,
    dim: int,
    classes: list[str],
    records: list[tuple[str, str, int, np.ndarray]],
) -> None:
    """records: (instance id, split name, label index or -1, float32 vector)."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", MODE_CODE[mode]))
    buf.write(struct.pack("<I", dim))
    buf.write(struct.pack("<I", len(classes)))
    for name in classes:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
    buf.write(struct.pack("<I", len(records)))
    for inst_id, split, label, vec in records:
        vec = np.ascontiguousarray(vec, dtype="<f4")
        if vec.shape != (dim,):
            raise ValueError(f"record {inst_id!r}: vector shape {vec.shape} != ({dim},)")
        raw = inst_id.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", SPLIT_CODE[split]))
        buf.write(struct.pack("<i", label))
        buf.write(vec.tobytes())
    Path(path).write_bytes(buf.getvalue())
