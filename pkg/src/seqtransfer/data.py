"""Dataset containers plus the on-disk frame-file and manifest formats.

A frame file holds one sample's T x D float32 feature matrix:

    bytes 0..3   magic "FRM1"
    bytes 4..7   u32 little-endian T
    bytes 8..11  u32 little-endian D
    then T*D float32 little-endian values, row-major

A manifest is headerless tab-separated text, one sample per row:
sample id, frame-file path relative to the manifest, transcription.
An empty transcription field marks the sample as unlabeled.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

FRAME_MAGIC = b"FRM1"


@dataclass
class Sample:
    sample_id: str
    frames: np.ndarray  # T x D float32
    transcription: str | None = None


@dataclass
class Dataset:
    samples: list[Sample]

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def labeled(self) -> list[Sample]:
        return [s for s in self.samples if s.transcription is not None]


def write_frames(path, frames) -> None:
    arr = np.ascontiguousarray(frames, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"frames must be a nonempty T x D matrix, got shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(FRAME_MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def read_frames(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != FRAME_MAGIC:
        raise FormatError(f"{path}: bad frame-file magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated frame-file header")
    t, d = struct.unpack("<II", blob[4:12])
    if t < 1 or d < 1:
        raise FormatError(f"{path}: degenerate shape {t} x {d}")
    expect = 12 + 4 * t * d
    if len(blob) != expect:
        raise FormatError(f"{path}: payload is {len(blob)} bytes, expected {expect}")
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(t, d).copy()


def write_manifest(dataset: Dataset, manifest_path, frame_dir_name: str = "frames") -> Path:
    """Write frame files under <manifest dir>/<frame_dir_name>/ and the
    manifest rows pointing at them."""
    manifest_path = Path(manifest_path)
    frame_dir = manifest_path.parent / frame_dir_name
    frame_dir.mkdir(parents=True, exist_ok=True)
    with open(manifest_path, "w", encoding="utf-8") as f:
        for s in dataset:
            text = s.transcription or ""
            for bad in ("\t", "\n", "\r"):
                if bad in text or bad in s.sample_id:
                    raise ValueError("tabs and newlines cannot appear in ids or transcriptions")
            rel = f"{frame_dir_name}/{s.sample_id}.frm"
            write_frames(manifest_path.parent / rel, s.frames)
            f.write(f"{s.sample_id}\t{rel}\t{text}\n")
    return manifest_path


def load_manifest(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    samples = []
    with open(manifest_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise FormatError(f"{manifest_path}:{lineno}: expected 3 tab-separated "
                                  f"fields, got {len(fields)}")
            sample_id, rel, text = fields
            frames = read_frames(manifest_path.parent / rel)
            samples.append(Sample(sample_id, frames, text if text else None))
    if not samples:
        raise FormatError(f"{manifest_path}: manifest has no rows")
    return Dataset(samples)
