"""On-disk formats and corpus loading.

Three artifacts make up a corpus:

* LASF feature files: magic ``LASF``, then little-endian u32 version (=1),
  u32 T, u32 D, followed by T*D float32 values in row-major order.
* A JSON-lines manifest, one video per line with keys ``video_id``,
  ``feature_path`` (relative to the manifest), ``y`` (0/1), ``g`` (0..C) and
  optionally ``instances`` ([[start, end, category], ...], inclusive bounds).
* A text bank: two LASF files holding (C+1) x D category-name and
  attribute-description embeddings plus a labels file with one category name
  per line, line 0 being the normal category.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, FormatError, ValidationError

LASF_MAGIC = b"LASF"
LASF_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass
class FeatureSequence:
    """A T x D matrix of per-frame features for one video."""

    video_id: str
    features: np.ndarray

    def __post_init__(self) -> None:
        feats = np.asarray(self.features)
        if feats.ndim != 2:
            raise ValidationError(
                f"{self.video_id}: features must be 2-D, got shape {feats.shape}"
            )
        t, d = feats.shape
        if t < 1:
            raise ValidationError(f"{self.video_id}: need at least one frame")
        if d < 3:
            raise ValidationError(
                f"{self.video_id}: feature dimension must be >= 3, got {d}"
            )
        if not np.isfinite(feats).all():
            raise ValidationError(f"{self.video_id}: features contain NaN/Inf")
        self.features = feats

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class VideoRecord:
    """One manifest row: labels plus the location of the feature file."""

    video_id: str
    feature_path: Path
    binary_label: int
    category_label: int
    instances: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.binary_label not in (0, 1):
            raise ValidationError(
                f"{self.video_id}: y must be 0 or 1, got {self.binary_label}"
            )
        if self.category_label < 0:
            raise ValidationError(
                f"{self.video_id}: g must be >= 0, got {self.category_label}"
            )
        if (self.binary_label == 0) != (self.category_label == 0):
            raise ValidationError(
                f"{self.video_id}: labels inconsistent, "
                f"y={self.binary_label} requires g{'=' if self.binary_label == 0 else '>'}0 "
                f"(got g={self.category_label})"
            )
        if self.binary_label == 0 and self.instances:
            raise ValidationError(
                f"{self.video_id}: normal video must not carry instances"
            )
        for start, end, category in self.instances:
            if not (0 <= start <= end):
                raise ValidationError(
                    f"{self.video_id}: bad instance bounds ({start}, {end})"
                )
            if category < 1:
                raise ValidationError(
                    f"{self.video_id}: instance category must be >= 1, got {category}"
                )


@dataclass
class TextBank:
    """Category-name and attribute embeddings, row 0 = normal."""

    name_embeddings: np.ndarray
    attribute_embeddings: np.ndarray
    category_names: list[str]

    def __post_init__(self) -> None:
        names = np.asarray(self.name_embeddings)
        attrs = np.asarray(self.attribute_embeddings)
        if names.shape != attrs.shape:
            raise FormatError(
                f"text bank misaligned: name embeddings {names.shape} vs "
                f"attribute embeddings {attrs.shape}"
            )
        if names.shape[0] != len(self.category_names):
            raise FormatError(
                f"text bank misaligned: {names.shape[0]} embedding rows vs "
                f"{len(self.category_names)} category names"
            )
        for label, mat in (("name", names), ("attribute", attrs)):
            norms = np.linalg.norm(mat, axis=1)
            if (norms == 0).any():
                row = int(np.argmax(norms == 0))
                raise DegenerateInputError(
                    f"zero row {row} in {label} embeddings"
                )
        self.name_embeddings = names
        self.attribute_embeddings = attrs

    @property
    def num_anomaly_categories(self) -> int:
        return len(self.category_names) - 1

    @property
    def dim(self) -> int:
        return self.name_embeddings.shape[1]


def write_lasf(path: str | Path, matrix: np.ndarray) -> None:
    """Write a 2-D float matrix to a LASF file (values stored as float32)."""
    mat = np.asarray(matrix)
    if mat.ndim != 2:
        raise ValidationError(f"LASF payload must be 2-D, got shape {mat.shape}")
    if not np.isfinite(mat).all():
        raise ValidationError("LASF payload contains NaN/Inf")
    t, d = mat.shape
    payload = np.ascontiguousarray(mat, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(LASF_MAGIC, LASF_VERSION, t, d))
        fh.write(payload.tobytes())


def read_lasf(path: str | Path) -> np.ndarray:
    """Read a LASF file back into a T x D float32 matrix."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, t, d = _HEADER.unpack(header)
        if magic != LASF_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != LASF_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        payload = fh.read(t * d * 4)
    if len(payload) < t * d * 4:
        raise FormatError(
            f"{path}: truncated payload, expected {t * d * 4} bytes, "
            f"got {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(t, d).copy()


def write_feature_file(path: str | Path, sequence: FeatureSequence) -> None:
    write_lasf(path, sequence.features)


def read_feature_file(path: str | Path, video_id: str | None = None) -> FeatureSequence:
    vid = video_id if video_id is not None else Path(path).stem
    return FeatureSequence(video_id=vid, features=read_lasf(path))


def read_manifest(path: str | Path) -> list[VideoRecord]:
    """Parse a JSON-lines manifest into VideoRecords, in file order."""
    base = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON ({exc})")
            if not isinstance(obj, dict):
                raise FormatError(f"{path}: line {lineno}: expected an object")
            try:
                video_id = obj["video_id"]
                feature_path = obj["feature_path"]
                y = obj["y"]
                g = obj["g"]
            except KeyError as exc:
                raise FormatError(f"{path}: line {lineno}: missing key {exc}")
            raw_instances = obj.get("instances", [])
            try:
                instances = [
                    (int(s), int(e), int(c)) for s, e, c in raw_instances
                ]
            except (TypeError, ValueError):
                raise FormatError(
                    f"{path}: line {lineno}: instances must be [start, end, category] triples"
                )
            records.append(
                VideoRecord(
                    video_id=str(video_id),
                    feature_path=base / feature_path,
                    binary_label=int(y),
                    category_label=int(g),
                    instances=instances,
                )
            )
    return records


def write_manifest(path: str | Path, records: list[VideoRecord]) -> None:
    """Write records as JSON-lines, feature paths stored relative to the manifest."""
    base = Path(path).parent
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            feature_path = rec.feature_path
            try:
                feature_path = feature_path.relative_to(base)
            except ValueError:
                pass
            obj = {
                "video_id": rec.video_id,
                "feature_path": feature_path.as_posix(),
                "y": rec.binary_label,
                "g": rec.category_label,
            }
            if rec.instances:
                obj["instances"] = [list(inst) for inst in rec.instances]
            fh.write(json.dumps(obj) + "\n")


def load_text_bank(
    name_path: str | Path,
    attribute_path: str | Path,
    labels_path: str | Path,
) -> TextBank:
    """Load the three text-bank files and check that they line up."""
    names = read_lasf(name_path)
    attrs = read_lasf(attribute_path)
    with open(labels_path, encoding="utf-8") as fh:
        labels = [line.rstrip("\n") for line in fh if line.strip()]
    return TextBank(
        name_embeddings=names,
        attribute_embeddings=attrs,
        category_names=labels,
    )


def text_bank_paths(prefix: str | Path) -> tuple[Path, Path, Path]:
    """Conventional file names for a text bank stored under a common prefix."""
    prefix = Path(prefix)
    parent, stem = prefix.parent, prefix.name
    return (
        parent / f"{stem}_names.lasf",
        parent / f"{stem}_attributes.lasf",
        parent / f"{stem}_labels.txt",
    )


def save_text_bank(prefix: str | Path, bank: TextBank) -> None:
    name_path, attr_path, labels_path = text_bank_paths(prefix)
    write_lasf(name_path, bank.name_embeddings)
    write_lasf(attr_path, bank.attribute_embeddings)
    with open(labels_path, "w", encoding="utf-8") as fh:
        for name in bank.category_names:
            fh.write(name + "\n")


def load_text_bank_prefix(prefix: str | Path) -> TextBank:
    name_path, attr_path, labels_path = text_bank_paths(prefix)
    return load_text_bank(name_path, attr_path, labels_path)
