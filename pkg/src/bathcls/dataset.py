"""Manifest handling, image decoding, batching and a synthetic stand-in dataset.

Labels follow the positive-class convention used throughout: good = 1, bad = 0.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

LABELS = ("good", "bad")
SPLITS = ("train", "test")
MANIFEST_HEADER = ["path", "label", "split"]
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


class ManifestError(ValueError):
    pass


class ImageDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class Record:
    path: str
    label: str
    split: str

    @property
    def target(self) -> int:
        return 1 if self.label == "good" else 0


@dataclass
class Manifest:
    records: list

    def __len__(self):
        return len(self.records)

    def split(self, name: str) -> list:
        return [r for r in self.records if r.split == name]


@dataclass
class Sample:
    image: np.ndarray
    label: int


@dataclass(frozen=True)
class LazySample:
    """A manifest image decoded on every access; keeps full-size runs out of memory."""

    path: Path
    size: int
    label: int

    @property
    def image(self) -> np.ndarray:
        return load_image(self.path, self.size)


@dataclass
class DatasetStats:
    counts: dict

    def cell(self, label: str, split: str) -> int:
        return self.counts[(label, split)]

    def split_total(self, split: str) -> int:
        return sum(self.counts[(lab, split)] for lab in LABELS)

    def label_total(self, label: str) -> int:
        return sum(self.counts[(label, sp)] for sp in SPLITS)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def table(self) -> str:
        rows = [f"{'':<10}{'Good':>8}{'Bad':>8}{'Total':>8}"]
        for sp in SPLITS:
            rows.append(
                f"{sp.capitalize():<10}{self.cell('good', sp):>8}{self.cell('bad', sp):>8}{self.split_total(sp):>8}"
            )
        rows.append(f"{'Total':<10}{self.label_total('good'):>8}{self.label_total('bad'):>8}{self.total:>8}")
        return "\n".join(rows)


def load_manifest(path) -> Manifest:
    """Parse a ``path,label,split`` CSV, reporting bad rows by line number."""
    path = Path(path)
    records, seen, problems = [], set(), []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestError(f"{path}: missing header, expected {','.join(MANIFEST_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                problems.append(f"line {lineno}: expected 3 fields, got {len(row)}")
                continue
            p, label, split = (c.strip() for c in row)
            if label not in LABELS:
                problems.append(f"line {lineno}: unknown label {label!r}")
            elif split not in SPLITS:
                problems.append(f"line {lineno}: unknown split {split!r}")
            elif p in seen:
                problems.append(f"line {lineno}: duplicate path {p!r}")
            else:
                seen.add(p)
                records.append(Record(p, label, split))
    if problems:
        raise ManifestError(f"{path}: " + "; ".join(problems))
    if not records:
        warnings.warn(f"{path}: manifest has no records", stacklevel=2)
    return Manifest(records)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            w.writerow([r.path, r.label, r.split])


def manifest_from_directory(root) -> Manifest:
    """Build a manifest from a ``<root>/<split>/<label>/<image>`` tree.

    Directory names are matched case-insensitively against train/test and
    good/bad; anything else is ignored.
    """
    root = Path(root)
    records = []
    for split_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        split = split_dir.name.lower()
        if split not in SPLITS:
            continue
        for label_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            label = label_dir.name.lower()
            if label not in LABELS:
                continue
            for img in sorted(label_dir.rglob("*")):
                if img.suffix.lower() in IMAGE_SUFFIXES:
                    records.append(Record(img.relative_to(root).as_posix(), label, split))
    return Manifest(records)


def stats(manifest: Manifest) -> DatasetStats:
    counts = {(lab, sp): 0 for lab in LABELS for sp in SPLITS}
    for r in manifest.records:
        counts[(r.label, r.split)] += 1
    return DatasetStats(counts)


def load_image(path, target_size: int) -> np.ndarray:
    """Decode to float32 RGB in [0, 1], bilinearly resized to a square."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise ImageDecodeError(f"{path}: zero-sized image")
            rgb = im.convert("RGB")
    except (UnidentifiedImageError, OSError) as e:
        raise ImageDecodeError(f"{path}: cannot decode image ({e})") from e
    # Resize each channel in float mode so no rounding back to 8 bits happens.
    channels = [
        np.asarray(Image.fromarray(np.asarray(rgb, dtype=np.float32)[..., c], mode="F").resize(
            (target_size, target_size), Image.BILINEAR
        ))
        for c in range(3)
    ]
    out = np.stack(channels, axis=-1) / np.float32(255.0)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


class ManifestSource:
    """Loads samples for one split of a manifest at a requested image size."""

    def __init__(self, manifest: Manifest, image_root):
        self.manifest = manifest
        self.image_root = Path(image_root)

    def records(self, split: str) -> list:
        return self.manifest.split(split)

    def load(self, records, size: int) -> list:
        missing = [r.path for r in records if not (self.image_root / r.path).is_file()]
        if missing:
            raise FileNotFoundError(f"{len(missing)} manifest images not found under {self.image_root}, e.g. {missing[0]}")
        return [LazySample(self.image_root / r.path, size, r.target) for r in records]


class SyntheticSource:
    """Separable synthetic data standing in for the real images at desk scale."""

    def __init__(self, n_train: int = 64, n_test: int = 32, seed: int = 0):
        self.n_train, self.n_test, self.seed = n_train, n_test, seed
        self._cache = {}

    def records(self, split: str) -> list:
        n = self.n_train if split == "train" else self.n_test
        return [Record(f"synthetic/{split}/{i}", "good" if i % 2 == 0 else "bad", split) for i in range(n)]

    def load(self, records, size: int) -> list:
        out = []
        for r in records:
            key = (r.split, size)
            if key not in self._cache:
                n = self.n_train if r.split == "train" else self.n_test
                self._cache[key] = synth_dataset(n, size, seed=self.seed * 2 + (r.split == "test"))
            out.append(self._cache[key][int(r.path.rsplit("/", 1)[1])])
        return out


def make_batches(samples: list, batch_size: int, seed: int = 0, shuffle: bool = True) -> list:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(samples))
    return [[samples[i] for i in order[s:s + batch_size]] for s in range(0, len(samples), batch_size)]


def stack(batch: list) -> tuple[np.ndarray, np.ndarray]:
    """Images as [N,S,S,3] and labels as [N,1] float32."""
    x = np.stack([s.image for s in batch]).astype(np.float32, copy=False)
    y = np.array([[s.label] for s in batch], dtype=np.float32)
    return x, y


def synth_dataset(n: int, size: int, seed: int = 0) -> list:
    """Half bright low-noise "good" images, half dark salt-noised "bad" ones.

    Samples alternate good, bad, good, ... A good image always has mean pixel
    above 0.5 and a bad one below.
    """
    if n < 2 or n % 2:
        raise ValueError("n must be an even number >= 2")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        good = i % 2 == 0
        if good:
            base = rng.uniform(0.6, 0.9)
            img = base + rng.normal(0, 0.03, (size, size, 3))
        else:
            base = rng.uniform(0.1, 0.35)
            img = base + rng.normal(0, 0.03, (size, size, 3))
            salt = rng.random((size, size, 1)) < 0.05
            img = np.where(salt, 1.0, img)
        # Good means stay above ~0.59 and bad ones below ~0.38 for any draw.
        img = np.clip(img, 0.0, 1.0).astype(np.float32)
        out.append(Sample(img, int(good)))
    return out
