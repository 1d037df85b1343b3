"""File formats: scenes, matches, descriptors, label maps, rasters, results.

All text formats round-trip reals at 17 significant digits, which is exact
for float64. Scene records keep the quaternion exactly as parsed so that
write -> read -> write is byte-stable.
"""

from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (
    CameraPose,
    Intrinsics,
    quaternion_from_rotation,
    rotation_from_quaternion,
)
from .pipeline import GlobalDescriptor, ImageView, MatchSet

SCENE_HEADER = "SCENE v1"
MATCHES_HEADER = "MATCHES v1"
DESCRIPTOR_MAGIC = b"GDSC"
RESULTS_HEADER = ["query_id", "pos_err_m", "rot_err_deg", "num_inliers", "status"]


class ParseError(Exception):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class MissingFile(Exception):
    pass


class DecodeError(Exception):
    pass


def _fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass(frozen=True)
class SceneRecord:
    """One posed reference or query image.

    The rotation is stored as the scalar-first world-to-camera quaternion so
    serialization is canonical; the pose matrix is derived.
    """

    image_id: str
    intrinsics: Intrinsics
    quaternion: np.ndarray
    translation: np.ndarray
    raster_path: str | None = None
    labelmap_path: str | None = None

    @staticmethod
    def from_pose(image_id: str, intrinsics: Intrinsics, pose: CameraPose,
                  raster_path: str | None = None,
                  labelmap_path: str | None = None) -> "SceneRecord":
        return SceneRecord(image_id, intrinsics,
                           quaternion_from_rotation(pose.rotation),
                           pose.translation.copy(), raster_path, labelmap_path)

    @property
    def pose(self) -> CameraPose:
        return CameraPose(rotation_from_quaternion(self.quaternion),
                          self.translation)

    def view(self) -> ImageView:
        return ImageView(self.image_id, self.intrinsics, self.pose)


@dataclass
class SceneDatabase:
    """Ordered collection of posed, calibrated images with unique ids."""

    records: list[SceneRecord] = field(default_factory=list)

    def __post_init__(self):
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate image ids in scene")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, image_id: str) -> SceneRecord:
        for r in self.records:
            if r.image_id == image_id:
                return r
        raise KeyError(image_id)

    def views(self) -> dict[str, ImageView]:
        return {r.image_id: r.view() for r in self.records}

    def bounds(self) -> dict[str, tuple[int, int]]:
        return {r.image_id: (r.intrinsics.width, r.intrinsics.height)
                for r in self.records}


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------

def write_scene(db: SceneDatabase, path) -> None:
    lines = [SCENE_HEADER]
    for r in db:
        k = r.intrinsics
        fields = [r.image_id,
                  _fmt(k.fx), _fmt(k.fy), _fmt(k.cx), _fmt(k.cy),
                  str(k.width), str(k.height),
                  *(_fmt(v) for v in r.quaternion),
                  *(_fmt(v) for v in r.translation)]
        if r.raster_path is not None:
            fields.append(r.raster_path)
            if r.labelmap_path is not None:
                fields.append(r.labelmap_path)
        elif r.labelmap_path is not None:
            fields.extend(["-", r.labelmap_path])
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + "\n")


def read_scene(path) -> SceneDatabase:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    records = []
    with path.open() as fh:
        header = fh.readline().rstrip("\n")
        if header != SCENE_HEADER:
            raise ParseError(path, 1, f"expected header {SCENE_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 14 or len(parts) > 16:
                raise ParseError(path, lineno,
                                 f"expected 14-16 fields, got {len(parts)}")
            image_id = parts[0]
            try:
                vals = [float(v) for v in parts[1:5]]
                width, height = int(parts[5]), int(parts[6])
                q = np.array([float(v) for v in parts[7:11]])
                t = np.array([float(v) for v in parts[11:14]])
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad number: {exc}") from None
            if not all(math.isfinite(v) for v in [*vals, *q, *t]):
                raise ParseError(path, lineno, "non-finite value")
            qn = float(np.linalg.norm(q))
            if abs(qn - 1.0) > 1e-6:
                raise ParseError(path, lineno,
                                 f"quaternion norm {qn:.9f} is not 1")
            try:
                intr = Intrinsics(vals[0], vals[1], vals[2], vals[3],
                                  width, height)
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            raster = parts[14] if len(parts) > 14 and parts[14] != "-" else None
            labelmap = parts[15] if len(parts) > 15 else None
            records.append(SceneRecord(image_id, intr, q, t, raster, labelmap))
    try:
        return SceneDatabase(records)
    except ValueError as exc:
        raise ParseError(path, 0, str(exc)) from None


# ---------------------------------------------------------------------------
# matches files
# ---------------------------------------------------------------------------

def write_matches(matches: list[MatchSet], path) -> None:
    lines = [MATCHES_HEADER]
    for m in matches:
        lines.append(f"PAIR {m.id_a} {m.id_b} {len(m)}")
        for row in m.data:
            lines.append(" ".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_matches(path, bounds: dict | None = None) -> list[MatchSet]:
    """Parse a matches file, validating coordinates against image bounds.

    bounds maps image id -> (width, height); ids without an entry are not
    bounds-checked.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    matches = []
    with path.open() as fh:
        header = fh.readline().rstrip("\n")
        if header != MATCHES_HEADER:
            raise ParseError(path, 1, f"expected header {MATCHES_HEADER!r}")
        lineno = 1
        current = None  # (id_a, id_b, expected, rows, start_line)
        for line in fh:
            lineno += 1
            line = line.strip()
            if not line:
                continue
            if line.startswith("PAIR"):
                if current is not None and len(current[3]) != current[2]:
                    raise ParseError(path, lineno,
                                     f"pair {current[0]}-{current[1]} expected "
                                     f"{current[2]} rows, got {len(current[3])}")
                parts = line.split()
                if len(parts) != 4:
                    raise ParseError(path, lineno, "PAIR needs id_a id_b count")
                try:
                    count = int(parts[3])
                except ValueError:
                    raise ParseError(path, lineno, "bad match count") from None
                if count < 0:
                    raise ParseError(path, lineno, "negative match count")
                if current is not None:
                    matches.append(MatchSet(current[0], current[1],
                                            np.array(current[3]).reshape(-1, 5)))
                current = (parts[1], parts[2], count, [], lineno)
                continue
            if current is None:
                raise ParseError(path, lineno, "match row before any PAIR")
            parts = line.split()
            if len(parts) != 5:
                raise ParseError(path, lineno,
                                 f"expected 5 fields, got {len(parts)}")
            try:
                row = [float(v) for v in parts]
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad number: {exc}") from None
            if not all(math.isfinite(v) for v in row):
                raise ParseError(path, lineno, "non-finite value")
            if not 0.0 <= row[4] <= 1.0:
                raise ParseError(path, lineno,
                                 f"confidence {row[4]} outside [0, 1]")
            if bounds is not None:
                for (ident, xi, yi) in [(current[0], row[0], row[1]),
                                        (current[1], row[2], row[3])]:
                    if ident in bounds:
                        w, h = bounds[ident]
                        if not (0 <= xi < w and 0 <= yi < h):
                            raise ParseError(
                                path, lineno,
                                f"coordinate ({xi}, {yi}) outside {ident!r} "
                                f"bounds {w}x{h}")
            current[3].append(row)
            if len(current[3]) > current[2]:
                raise ParseError(path, lineno,
                                 f"more rows than declared for pair "
                                 f"{current[0]}-{current[1]}")
        if current is not None:
            if len(current[3]) != current[2]:
                raise ParseError(path, lineno,
                                 f"pair {current[0]}-{current[1]} expected "
                                 f"{current[2]} rows, got {len(current[3])}")
            matches.append(MatchSet(current[0], current[1],
                                    np.array(current[3]).reshape(-1, 5)))
    return matches


# ---------------------------------------------------------------------------
# descriptors (binary)
# ---------------------------------------------------------------------------

def write_descriptors(descriptors: list[GlobalDescriptor], path) -> None:
    if descriptors:
        dims = {len(d.vector) for d in descriptors}
        if len(dims) != 1:
            raise ValueError(f"mixed descriptor dimensions: {sorted(dims)}")
        dim = dims.pop()
    else:
        dim = 0
    with open(path, "wb") as fh:
        fh.write(DESCRIPTOR_MAGIC)
        fh.write(struct.pack("<II", len(descriptors), dim))
        for d in descriptors:
            ident = d.image_id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise ValueError(f"id too long: {d.image_id!r}")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(np.asarray(d.vector, dtype="<f4").tobytes())


def read_descriptors(path) -> list[GlobalDescriptor]:
    """Decode a descriptor file; vectors are L2-normalized on read with a
    warning when the stored norm is off by more than 1e-3."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    blob = path.read_bytes()
    if len(blob) < 12 or blob[:4] != DESCRIPTOR_MAGIC:
        raise DecodeError(f"{path}: not a descriptor file")
    count, dim = struct.unpack_from("<II", blob, 4)
    # each record needs at least 2 + 4*dim bytes; reject inflated counts
    if count * (2 + 4 * dim) > len(blob) - 12:
        raise DecodeError(f"{path}: declared {count} records of dim {dim} "
                          f"exceed file size {len(blob)}")
    out = []
    offset = 12
    for i in range(count):
        if offset + 2 > len(blob):
            raise DecodeError(f"{path}: truncated at record {i}")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if offset + id_len + 4 * dim > len(blob):
            raise DecodeError(f"{path}: truncated at record {i}")
        ident = blob[offset:offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(blob, dtype="<f4", count=dim,
                            offset=offset).astype(np.float64)
        offset += 4 * dim
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise DecodeError(f"{path}: zero-norm descriptor for {ident!r}")
        if abs(norm - 1.0) > 1e-3:
            warnings.warn(f"{path}: descriptor {ident!r} has norm {norm:.6f}, "
                          "renormalizing")
        out.append(GlobalDescriptor(ident, vec / norm))
    return out


# ---------------------------------------------------------------------------
# label maps and rasters (PNG via Pillow)
# ---------------------------------------------------------------------------

def write_labelmap(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 0xFFFF:
        raise ValueError("labels must fit 16-bit unsigned")
    Image.fromarray(labels.astype(np.uint16)).save(path, format="PNG")


def read_labelmap(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DecodeError(f"{path}: {exc}") from None
    if img.mode not in ("I", "I;16", "L", "P"):
        raise DecodeError(f"{path}: unsupported label-map mode {img.mode!r}")
    if img.mode == "P":
        img = img.convert("L")
    return np.asarray(img).astype(np.int32)


def write_raster(img: np.ndarray, path) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format="PNG")


def read_raster(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DecodeError(f"{path}: {exc}") from None
    if img.mode not in ("L", "RGB"):
        img = img.convert("RGB")
    return np.asarray(img)


def read_binary_mask(path) -> np.ndarray:
    raster = read_raster(path)
    if raster.ndim == 3:
        raster = raster[:, :, 0]
    return raster > 127


# ---------------------------------------------------------------------------
# per-query results (CSV)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QueryResult:
    query_id: str
    pos_err_m: float
    rot_err_deg: float
    num_inliers: int
    status: str  # "ok" or "failed"


def write_results(rows: list[QueryResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for r in rows:
            writer.writerow([r.query_id, _fmt(r.pos_err_m), _fmt(r.rot_err_deg),
                             r.num_inliers, r.status])


def read_results(path) -> list[QueryResult]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULTS_HEADER:
            raise ParseError(path, 1, f"expected header {','.join(RESULTS_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(path, lineno, f"expected 5 columns, got {len(row)}")
            try:
                rows.append(QueryResult(row[0], float(row[1]), float(row[2]),
                                        int(row[3]), row[4]))
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad value: {exc}") from None
            if rows[-1].status not in ("ok", "failed"):
                raise ParseError(path, lineno, f"unknown status {row[4]!r}")
    return rows
