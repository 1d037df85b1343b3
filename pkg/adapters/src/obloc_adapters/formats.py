"""Writers for the localization engine's on-disk formats.

Kept self-contained so the adapters have no runtime dependency on the engine;
the engine's readers are the validation oracle in the test suite. Files are
written atomically (temp file in the target directory, then rename).
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

MATCHES_HEADER = "MATCHES v1"
DESCRIPTOR_MAGIC = b"GDSC"


def atomic_write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_descriptor_file(records: list[tuple[str, np.ndarray]], path) -> None:
    """records: (image id, L2-normalized float vector); all same dimension."""
    dim = len(records[0][1]) if records else 0
    parts = [DESCRIPTOR_MAGIC, struct.pack("<II", len(records), dim)]
    for ident, vec in records:
        raw = ident.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(np.asarray(vec, dtype="<f4").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def write_matches_file(blocks: list[tuple[str, str, np.ndarray]], path) -> None:
    """blocks: (id_a, id_b, rows (n, 5) of x_a y_a x_b y_b conf)."""
    lines = [MATCHES_HEADER]
    for id_a, id_b, rows in blocks:
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, 5)
        lines.append(f"PAIR {id_a} {id_b} {len(rows)}")
        for row in rows:
            lines.append(" ".join(f"{v:.17g}" for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_labelmap_png(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 0xFFFF:
        raise ValueError("labels must fit 16-bit unsigned")
    buf = Image.fromarray(labels.astype(np.uint16))
    fd, tmp = tempfile.mkstemp(dir=Path(path).parent, suffix=".png")
    os.close(fd)
    buf.save(tmp, format="PNG")
    os.replace(tmp, path)


def write_mask_png(mask: np.ndarray, path) -> None:
    img = Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0)
                          .astype(np.uint8))
    fd, tmp = tempfile.mkstemp(dir=Path(path).parent, suffix=".png")
    os.close(fd)
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def load_image(path) -> np.ndarray:
    img = Image.open(path)
    img.load()
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    return np.asarray(img)


def image_files(directory) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
