"""On-disk dataset format.

A dataset directory holds ``manifest.json`` plus, per subject,
``frames_<id>.bin`` (16-byte header ``LVQ1`` + u32 F, H, W little-endian,
then F*H*W little-endian float32, row-major) and ``labels_<id>.csv``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, ChecksumError, DatasetError, MissingFileError, SizeMismatchError
from .phantom import CardiacSequence, IndexLabels

MAGIC = b"LVQ1"
HEADER = struct.Struct("<4sIII")
LABEL_COLUMNS = ["frame", "cavity_area", "myo_area", "dim1", "dim2", "dim3",
                 "rwt_is", "rwt_i", "rwt_il", "rwt_al", "rwt_a", "rwt_as", "phase"]


def encode_frames(frames) -> bytes:
    arr = np.asarray(frames, dtype="<f4")
    if arr.ndim != 3:
        raise DatasetError(f"frames must be (F, H, W), got {arr.shape}")
    return HEADER.pack(MAGIC, *arr.shape) + np.ascontiguousarray(arr).tobytes()


def decode_frames(payload: bytes, name: str = "<frames>") -> np.ndarray:
    if len(payload) < HEADER.size:
        raise SizeMismatchError(f"{name}: {len(payload)} bytes is shorter than the 16-byte header")
    magic, f, h, w = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise BadMagicError(f"{name}: bad magic header {magic!r}, expected {MAGIC!r}")
    expected = HEADER.size + 4 * f * h * w
    if len(payload) != expected:
        raise SizeMismatchError(f"{name}: header declares {f}x{h}x{w} floats ({expected} bytes), "
                                f"file has {len(payload)} bytes")
    return np.frombuffer(payload, dtype="<f4", offset=HEADER.size).reshape(f, h, w).astype(np.float32)


def encode_labels(labels) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LABEL_COLUMNS)
    for f, lab in enumerate(labels):
        writer.writerow([f, *(repr(float(v)) for v in lab.as_row()[:11]), int(lab.phase)])
    return buf.getvalue().encode()


def decode_labels(payload: bytes, name: str = "<labels>") -> list[IndexLabels]:
    rows = list(csv.reader(io.StringIO(payload.decode())))
    if not rows or rows[0] != LABEL_COLUMNS:
        raise DatasetError(f"{name}: unexpected CSV header {rows[0] if rows else None}")
    out = []
    for r in rows[1:]:
        if len(r) != len(LABEL_COLUMNS):
            raise SizeMismatchError(f"{name}: row {r!r} has {len(r)} fields")
        out.append(IndexLabels.from_row(r[1:]))
    return out


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_dataset(sequences, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    subjects = []
    for seq in sequences:
        frames_name = f"frames_{seq.subject_id}.bin"
        labels_name = f"labels_{seq.subject_id}.csv"
        fp = encode_frames(seq.frames)
        lp = encode_labels(seq.labels)
        (path / frames_name).write_bytes(fp)
        (path / labels_name).write_bytes(lp)
        entry = {
            "id": seq.subject_id,
            "frames": seq.n_frames,
            "spacing": float(seq.pixel_spacing),
            "landmarks": [[float(v) for v in pt] for pt in np.asarray(seq.landmarks)],
            "frames_file": frames_name,
            "labels_file": labels_name,
            "sha256": {"frames": _sha256(fp), "labels": _sha256(lp)},
        }
        if seq.roi_center is not None:
            entry["roi_center"] = [float(v) for v in seq.roi_center]
        subjects.append(entry)
    manifest = {"format": "LVQ1", "subjects": subjects}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def read_dataset(path, verify_checksums: bool = True) -> list[CardiacSequence]:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise MissingFileError(f"{mpath}: manifest not found")
    try:
        manifest = json.loads(mpath.read_text())
        subjects = manifest["subjects"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetError(f"{mpath}: malformed manifest ({exc})") from None
    out = []
    for entry in subjects:
        sid = entry["id"]
        payloads = {}
        for kind in ("frames", "labels"):
            fpath = path / entry[f"{kind}_file"]
            if not fpath.is_file():
                raise MissingFileError(f"subject {sid}: missing {kind} file {fpath.name}")
            payloads[kind] = fpath.read_bytes()
        frames = decode_frames(payloads["frames"], entry["frames_file"])
        labels = decode_labels(payloads["labels"], entry["labels_file"])
        if len(frames) != entry["frames"] or len(labels) != entry["frames"]:
            raise SizeMismatchError(f"subject {sid}: manifest lists {entry['frames']} frames, "
                                    f"{entry['frames_file']} has {len(frames)}, "
                                    f"{entry['labels_file']} has {len(labels)}")
        if verify_checksums:
            for kind in ("frames", "labels"):
                want = entry.get("sha256", {}).get(kind)
                if want is not None and want != _sha256(payloads[kind]):
                    raise ChecksumError(f"subject {sid}: sha256 mismatch for {entry[f'{kind}_file']}")
        roi = entry.get("roi_center")
        out.append(CardiacSequence(
            subject_id=sid,
            frames=frames,
            landmarks=np.asarray(entry["landmarks"], dtype=np.float64),
            pixel_spacing=float(entry["spacing"]),
            labels=labels,
            roi_center=tuple(roi) if roi is not None else None,
        ))
    return out
