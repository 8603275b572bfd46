"""Encoded-image dataset caches: an index plus one tensor-cache file per sequence.

A cache directory holds ``index.tsv`` (name, label, train/test role), an
``images/`` directory with one ``.f2ci`` quadruple per sequence, the bone
table used for encoding, and a run manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import read_image_cache
from .errors import ConfigError, FormatError
from .runio import atomic_write_text, sha256_file

INDEX_NAME = "index.tsv"
IMAGES_DIR = "images"


@dataclass
class ImageDataset:
    """All encoded quadruples of one cache directory, loaded into memory."""

    names: list[str]
    labels: np.ndarray  # (N,) int64
    roles: list[str]  # train | test, aligned with names
    images: np.ndarray  # (N, 4, H, W, 3) uint8

    @property
    def image_hw(self) -> tuple[int, int]:
        return self.images.shape[2], self.images.shape[3]

    def indices_for_role(self, role: str) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.roles) if r == role], dtype=np.int64)

    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


def write_index(cache_dir: str | Path, rows: list[tuple[str, int, str]]) -> None:
    lines = ["name\tlabel\trole"]
    for name, label, role in rows:
        lines.append(f"{name}\t{label}\t{role}")
    atomic_write_text(Path(cache_dir) / INDEX_NAME, "\n".join(lines) + "\n")


def read_index(cache_dir: str | Path) -> list[tuple[str, int, str]]:
    path = Path(cache_dir) / INDEX_NAME
    if not path.is_file():
        raise ConfigError(f"no dataset index at {path}; run `f2cskel encode` first")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "name\tlabel\trole":
        raise FormatError(f"{path}: unexpected index header")
    rows = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}: malformed index row {ln!r}")
        rows.append((parts[0], int(parts[1]), parts[2]))
    return rows


def image_path(cache_dir: str | Path, name: str) -> Path:
    return Path(cache_dir) / IMAGES_DIR / f"{name}.f2ci"


def load_image_dataset(cache_dir: str | Path) -> ImageDataset:
    rows = read_index(cache_dir)
    if not rows:
        raise ConfigError(f"dataset index in {cache_dir} is empty")
    names, labels, roles, quads = [], [], [], []
    shape = None
    for name, label, role in rows:
        path = image_path(cache_dir, name)
        if not path.is_file():
            raise ConfigError(f"missing image cache {path}")
        images = read_image_cache(path)
        if len(images) != 4:
            raise FormatError(f"{path}: expected 4 stream images, found {len(images)}")
        quad = np.stack([img.pixels for img in images])
        if shape is None:
            shape = quad.shape
        elif quad.shape != shape:
            raise FormatError(f"{path}: image dims {quad.shape} differ from {shape}")
        names.append(name)
        labels.append(label)
        roles.append(role)
        quads.append(quad)
    return ImageDataset(
        names=names,
        labels=np.asarray(labels, dtype=np.int64),
        roles=roles,
        images=np.stack(quads),
    )


def dataset_digest(cache_dir: str | Path) -> str:
    """Digest of index rows plus per-sequence image-cache digests, name-sorted."""
    h = hashlib.sha256()
    for name, label, role in sorted(read_index(cache_dir)):
        file_digest = sha256_file(image_path(cache_dir, name))
        h.update(f"{name}\t{label}\t{role}\t{file_digest}\n".encode("utf-8"))
    return h.hexdigest()
