"""Paired ego/exo dataset model: manifests, frames, flow files, alignment.

A dataset on disk is a single JSON manifest plus per-sequence frame
directories of PNG files named ``%06d.png``. Flow fields live in sibling
binary ``.eflo`` files (magic ``EFLO``, u32 height, u32 width, then
H*W*2 little-endian float32, row-major, x displacement before y).

Everything loaded here is immutable; manifests and sequences are safe to
share across threads. Pair iterators are plain generators, one per consumer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import AlignmentError, MissingFile, SchemaError

REAL_ACTIONS = (
    "walking",
    "jogging",
    "running",
    "waving",
    "boxing",
    "clapping",
    "jumping",
    "push-ups",
)
SYNTHETIC_ACTIONS = ("walking", "running", "crouching", "strafing", "jumping")

MODALITIES = ("real", "synthetic")
EXO_KINDS = ("side", "top")
SPLITS = ("train", "val", "test")

SYNTHESIS_SIZE = 256

EFLO_MAGIC = b"EFLO"


def actions_for(modality: str) -> tuple[str, ...]:
    if modality == "real":
        return REAL_ACTIONS
    if modality == "synthetic":
        return SYNTHETIC_ACTIONS
    raise SchemaError(f"unknown modality {modality!r}")


@dataclass(frozen=True)
class CameraPose:
    """Camera pose: position in meters, orientation as a unit quaternion
    (w, x, y, z) rotating camera-frame vectors into the world frame."""

    position: tuple[float, float, float]
    quaternion: tuple[float, float, float, float]

    def to_list(self) -> list[float]:
        return [*self.position, *self.quaternion]

    @staticmethod
    def from_list(values: Sequence[float]) -> "CameraPose":
        if len(values) != 7:
            raise SchemaError(f"pose must have 7 numbers, got {len(values)}")
        vals = [float(v) for v in values]
        return CameraPose(tuple(vals[:3]), tuple(vals[3:]))


@dataclass(frozen=True)
class FrameRecord:
    view: str  # "ego", "exo_side" or "exo_top"
    time_index: int
    action_label: str
    camera_pose: Optional[CameraPose] = None


@dataclass(frozen=True)
class PairedSequence:
    """Descriptor of one temporally aligned ego/exo video pair.

    ``labels[i]`` is the shared action label of aligned frame i in both
    views; pose lists, when present, carry one entry per frame.
    """

    id: str
    scene_id: str
    actor_id: str
    split: str
    modality: str
    exo_kind: str
    ego_dir: Path
    exo_dir: Path
    length: int
    labels: tuple[str, ...]
    poses_ego: Optional[tuple[Optional[CameraPose], ...]] = None
    poses_exo: Optional[tuple[Optional[CameraPose], ...]] = None
    resolution: Optional[tuple[int, int]] = None  # (height, width), informative

    def validate(self) -> None:
        if self.split not in SPLITS:
            raise SchemaError(f"sequence {self.id}: bad split {self.split!r}")
        if self.exo_kind not in EXO_KINDS:
            raise SchemaError(f"sequence {self.id}: bad exo_kind {self.exo_kind!r}")
        if self.length < 0:
            raise SchemaError(f"sequence {self.id}: negative length")
        if len(self.labels) != self.length:
            raise SchemaError(
                f"sequence {self.id}: {len(self.labels)} labels for length {self.length}"
            )
        vocab = actions_for(self.modality)
        for lab in self.labels:
            if lab not in vocab:
                raise SchemaError(
                    f"sequence {self.id}: label {lab!r} not in the {self.modality} vocabulary"
                )
        for name, poses in (("poses_ego", self.poses_ego), ("poses_exo", self.poses_exo)):
            if poses is not None and len(poses) != self.length:
                raise SchemaError(f"sequence {self.id}: {name} length mismatch")

    @property
    def ego_frames(self) -> tuple[FrameRecord, ...]:
        poses = self.poses_ego or (None,) * self.length
        return tuple(
            FrameRecord("ego", t, self.labels[t], poses[t]) for t in range(self.length)
        )

    @property
    def exo_frames(self) -> tuple[FrameRecord, ...]:
        poses = self.poses_exo or (None,) * self.length
        view = f"exo_{self.exo_kind}"
        return tuple(
            FrameRecord(view, t, self.labels[t], poses[t]) for t in range(self.length)
        )

    def frame_path(self, view: str, t: int) -> Path:
        base = self.ego_dir if view == "ego" else self.exo_dir
        return base / f"{t:06d}.png"


@dataclass(frozen=True)
class Manifest:
    modality: str
    exo_kind: str
    sequences: tuple[PairedSequence, ...]
    root: Optional[Path] = None  # directory the manifest was loaded from
    declared_counts: Optional[dict] = field(default=None, compare=False)

    def validate(self) -> None:
        if self.modality not in MODALITIES:
            raise SchemaError(f"bad modality {self.modality!r}")
        if self.exo_kind not in EXO_KINDS:
            raise SchemaError(f"bad exo_kind {self.exo_kind!r}")
        seen = set()
        for seq in self.sequences:
            if seq.id in seen:
                raise SchemaError(f"duplicate sequence id {seq.id!r}")
            seen.add(seq.id)
            if seq.modality != self.modality:
                raise SchemaError(f"sequence {seq.id}: modality differs from manifest")
            seq.validate()
        if self.declared_counts is not None:
            actual = self.counts()
            if self.declared_counts != actual:
                raise SchemaError(
                    f"counts cache {self.declared_counts} does not match recomputed {actual}"
                )

    def counts(self) -> dict:
        out = {s: {"videos": 0, "frames": 0} for s in SPLITS}
        for seq in self.sequences:
            out[seq.split]["videos"] += 1
            out[seq.split]["frames"] += seq.length
        return out

    def split_sequences(self, split: str) -> tuple[PairedSequence, ...]:
        if split == "all":
            return self.sequences
        return tuple(s for s in self.sequences if s.split == split)


def _parse_poses(raw, seq_id: str, key: str):
    if raw is None:
        return None
    poses = []
    for i, entry in enumerate(raw):
        if entry is None:
            poses.append(None)
        else:
            try:
                poses.append(CameraPose.from_list(entry))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"sequence {seq_id}: {key}[{i}]: {exc}") from exc
    return tuple(poses)


_SEQ_REQUIRED = ("id", "scene_id", "actor_id", "split", "ego_dir", "exo_dir", "length", "labels")


def _parse_sequence(entry: dict, modality: str, exo_kind: str, root: Path) -> PairedSequence:
    if not isinstance(entry, dict):
        raise SchemaError("sequence entry is not an object")
    missing = [k for k in _SEQ_REQUIRED if k not in entry]
    if missing:
        raise SchemaError(f"sequence entry missing keys {missing}")
    seq_id = str(entry["id"])
    length = entry["length"]
    if not isinstance(length, int):
        raise SchemaError(f"sequence {seq_id}: length must be an integer")
    resolution = entry.get("resolution")
    if resolution is not None:
        resolution = (int(resolution[0]), int(resolution[1]))
    return PairedSequence(
        id=seq_id,
        scene_id=str(entry["scene_id"]),
        actor_id=str(entry["actor_id"]),
        split=str(entry["split"]),
        modality=modality,
        exo_kind=exo_kind,
        ego_dir=root / str(entry["ego_dir"]),
        exo_dir=root / str(entry["exo_dir"]),
        length=length,
        labels=tuple(str(x) for x in entry["labels"]),
        poses_ego=_parse_poses(entry.get("poses_ego"), seq_id, "poses_ego"),
        poses_exo=_parse_poses(entry.get("poses_exo"), seq_id, "poses_exo"),
        resolution=resolution,
    )


def _count_frames(directory: Path) -> int:
    """Number of contiguous %06d.png frames starting at 000000."""
    if not directory.is_dir():
        raise MissingFile(f"frame directory {directory} does not exist")
    names = {p.name for p in directory.iterdir() if p.suffix == ".png"}
    n = 0
    while f"{n:06d}.png" in names:
        n += 1
    return n


def _check_sequence_media(seq: PairedSequence) -> None:
    n_ego = _count_frames(seq.ego_dir)
    n_exo = _count_frames(seq.exo_dir)
    if n_ego != n_exo:
        raise AlignmentError(
            f"sequence {seq.id}: {n_ego} ego frames vs {n_exo} exo frames"
        )
    if n_ego != seq.length:
        raise MissingFile(
            f"sequence {seq.id}: manifest declares {seq.length} frames, found {n_ego}"
        )


def load_manifest(path: str | Path, check_media: bool = True) -> Manifest:
    """Load and validate a manifest file.

    Relative media paths resolve against the manifest's directory. With
    ``check_media`` the referenced frame directories are scanned and ego/exo
    frame counts must agree (AlignmentError) and match the declared length.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest {path} does not exist")
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("manifest top level must be an object")
    for key in ("modality", "exo_kind", "sequences", "counts"):
        if key not in raw:
            raise SchemaError(f"manifest missing top-level key {key!r}")
    modality = str(raw["modality"])
    exo_kind = str(raw["exo_kind"])
    root = path.parent
    sequences = tuple(
        _parse_sequence(e, modality, exo_kind, root) for e in raw["sequences"]
    )
    manifest = Manifest(
        modality=modality,
        exo_kind=exo_kind,
        sequences=sequences,
        root=root,
        declared_counts=raw["counts"],
    )
    manifest.validate()
    if check_media:
        for seq in sequences:
            _check_sequence_media(seq)
    return manifest


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    """Write a manifest as JSON. Media paths are stored relative to the
    manifest location when possible, absolute otherwise."""
    path = Path(path)
    root = path.parent

    def rel(p: Path) -> str:
        try:
            return str(p.relative_to(root))
        except ValueError:
            return str(p)

    seqs = []
    for s in manifest.sequences:
        entry = {
            "id": s.id,
            "scene_id": s.scene_id,
            "actor_id": s.actor_id,
            "split": s.split,
            "ego_dir": rel(s.ego_dir),
            "exo_dir": rel(s.exo_dir),
            "length": s.length,
            "labels": list(s.labels),
        }
        if s.poses_ego is not None:
            entry["poses_ego"] = [p.to_list() if p else None for p in s.poses_ego]
        if s.poses_exo is not None:
            entry["poses_exo"] = [p.to_list() if p else None for p in s.poses_exo]
        if s.resolution is not None:
            entry["resolution"] = list(s.resolution)
        seqs.append(entry)

    doc = {
        "modality": manifest.modality,
        "exo_kind": manifest.exo_kind,
        "sequences": seqs,
        "counts": manifest.counts(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1), "utf-8")
    return path


def iterate_aligned_pairs(
    manifest: Manifest, split: str, view_kind: str
) -> Iterator[tuple[FrameRecord, FrameRecord]]:
    """Yield (ego, exo) FrameRecord pairs for a split.

    Sequences whose exo camera kind differs from ``view_kind`` are skipped;
    an empty selection yields an empty stream rather than failing.
    """
    if split not in SPLITS:
        raise SchemaError(f"unknown split {split!r}")
    if view_kind not in EXO_KINDS:
        raise SchemaError(f"unknown view kind {view_kind!r}")
    for seq in manifest.sequences:
        if seq.split != split or seq.exo_kind != view_kind:
            continue
        for ego_rec, exo_rec in zip(seq.ego_frames, seq.exo_frames):
            yield ego_rec, exo_rec


# ---------------------------------------------------------------------------
# frames

def load_frame(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"frame {path} does not exist")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_frame(frame: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(frame), mode="RGB").save(path)
    return path


def validate_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise SchemaError(f"frame must be HxWx3, got shape {frame.shape}")
    if frame.shape[0] < 1 or frame.shape[1] < 1:
        raise SchemaError("frame has empty spatial extent")
    if frame.dtype != np.uint8:
        if frame.min() < 0 or frame.max() > 255:
            raise SchemaError("frame values outside [0, 255]")
        frame = frame.astype(np.uint8)
    return frame


def resize_frame(frame: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with corner alignment: output corners sample source
    corners exactly, and a same-size resize is the identity."""
    frame = validate_frame(frame)
    h_in, w_in = frame.shape[:2]
    h_out, w_out = out_hw
    if h_out < 1 or w_out < 1:
        raise SchemaError("target size must be positive")
    if (h_in, w_in) == (h_out, w_out):
        return frame.copy()

    ys = np.linspace(0.0, h_in - 1.0, h_out) if h_out > 1 else np.zeros(1)
    xs = np.linspace(0.0, w_in - 1.0, w_out) if w_out > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h_in - 1)
    x1 = np.minimum(x0 + 1, w_in - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]

    img = frame.astype(np.float64)
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def resize_for_synthesis(frame: np.ndarray) -> np.ndarray:
    """Resize a frame to the 256x256 input size of the synthesis networks."""
    return resize_frame(frame, (SYNTHESIS_SIZE, SYNTHESIS_SIZE))


# ---------------------------------------------------------------------------
# flow fields (EFLO)

def write_flow(flow: np.ndarray, path: str | Path) -> Path:
    flow = np.asarray(flow, dtype=np.float32)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise SchemaError(f"flow must be HxWx2, got shape {flow.shape}")
    if not np.isfinite(flow).all():
        raise SchemaError("flow contains non-finite values")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(EFLO_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())
    return path


def read_flow(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"flow file {path} does not exist")
    blob = path.read_bytes()
    if blob[:4] != EFLO_MAGIC:
        raise SchemaError(f"{path}: bad magic {blob[:4]!r}, expected {EFLO_MAGIC!r}")
    if len(blob) < 12:
        raise SchemaError(f"{path}: truncated header")
    h, w = struct.unpack("<II", blob[4:12])
    expected = 12 + h * w * 2 * 4
    if len(blob) != expected:
        raise SchemaError(f"{path}: expected {expected} bytes, got {len(blob)}")
    flow = np.frombuffer(blob, dtype="<f4", offset=12).reshape(h, w, 2).copy()
    if not np.isfinite(flow).all():
        raise SchemaError(f"{path}: flow contains non-finite values")
    return flow
