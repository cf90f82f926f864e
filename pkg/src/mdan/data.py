"""Synthetic cross-modal benchmark: the same kind of scene rendered RGB-style
(source) and thermal-style (target), plus PGM/PPM + manifest persistence.

The thermal rendering is the grayscale of the colour scene with intensities
inverted, a mild blur and additive Gaussian noise. Shadows under objects are
dark in the colour image and therefore bright in the thermal one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import load_into, read_config
from .pnm import read_pnm, write_pnm

SPLITS = ("train", "val", "test")
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class GenSpec:
    classes: str = "disk,square,triangle,cross"
    n_train: int = 500  # per class and domain
    n_val: int = 100
    n_test: int = 100
    seed: int = 0
    in_channels: int = 3
    size: int = 32
    shading: float = 0.5
    shadow_offset: float = 3.0
    shadow_strength: float = 0.3
    dark_object_prob: float = 0.5  # share of scenes with a dark object on a bright background
    noise_sigma: float = 0.12
    blur_sigma: float = 0.5

    def __post_init__(self):
        if len(self.class_names) < 2:
            raise ValueError("need at least two classes")
        for name in self.class_names:
            if name not in SHAPES:
                raise ValueError(f"unknown shape class {name!r}; known: {sorted(SHAPES)}")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("per-split counts must be >= 1")
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")

    @property
    def class_names(self) -> list[str]:
        return [c.strip() for c in self.classes.split(",") if c.strip()]

    def count(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides) -> "GenSpec":
        return load_into(cls, read_config(path), str(path), **overrides)


@dataclass
class Sample:
    image: np.ndarray
    label: Optional[int]
    domain: str
    split: str
    id: int


@dataclass
class Dataset:
    """Column-oriented sample collection. ``labels`` holds -1 where withheld."""

    images: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    domains: np.ndarray
    splits: np.ndarray
    num_classes: int = 4
    class_names: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> Sample:
        lab = int(self.labels[i])
        return Sample(self.images[i], None if lab < 0 else lab, str(self.domains[i]),
                      str(self.splits[i]), int(self.ids[i]))

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(len(self)))

    def _take(self, mask) -> "Dataset":
        return Dataset(self.images[mask], self.labels[mask], self.ids[mask], self.domains[mask],
                       self.splits[mask], self.num_classes, list(self.class_names))

    def select(self, domain: Optional[str] = None, split: Optional[str] = None) -> "Dataset":
        mask = np.ones(len(self), dtype=bool)
        if domain is not None:
            mask &= self.domains == domain
        if split is not None:
            mask &= self.splits == split
        return self._take(mask)

    def without_labels(self) -> "Dataset":
        ds = self._take(np.ones(len(self), dtype=bool))
        ds.labels = np.full(len(self), -1, dtype=np.int64)
        return ds

    @property
    def is_labeled(self) -> bool:
        return bool(len(self)) and bool(np.all(self.labels >= 0))

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        first = parts[0]
        return Dataset(np.concatenate([p.images for p in parts]),
                       np.concatenate([p.labels for p in parts]),
                       np.concatenate([p.ids for p in parts]),
                       np.concatenate([p.domains for p in parts]),
                       np.concatenate([p.splits for p in parts]),
                       first.num_classes, list(first.class_names))


# ---------------------------------------------------------------- shapes


def _disk(u, v, r):
    return u * u + v * v <= r * r


def _square(u, v, r):
    a = 0.8 * r
    return (np.abs(u) <= a) & (np.abs(v) <= a)


def _triangle(u, v, r):
    inside = np.ones(u.shape, dtype=bool)
    for k in range(3):
        ang = np.pi / 2 + 2 * np.pi * k / 3
        # edge normals point to the vertices of the dual triangle
        inside &= u * np.cos(ang + np.pi) + v * np.sin(ang + np.pi) <= 0.5 * r
    return inside


def _cross(u, v, r):
    w = 0.3 * r
    return ((np.abs(u) <= r) & (np.abs(v) <= w)) | ((np.abs(v) <= r) & (np.abs(u) <= w))


SHAPES = {"disk": _disk, "square": _square, "triangle": _triangle, "cross": _cross}


def shape_mask(name: str, size: int, cx: float, cy: float, radius: float, angle: float,
               supersample: int = 4) -> np.ndarray:
    """Anti-aliased coverage in [0, 1] of a rotated shape on a size x size grid."""
    s = supersample
    offs = (np.arange(s) + 0.5) / s
    coords = (np.arange(size)[:, None] + offs[None, :]).reshape(-1)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dx, dy = xx - cx, yy - cy
    c, sn = np.cos(angle), np.sin(angle)
    u = c * dx + sn * dy
    v = -sn * dx + c * dy
    hit = SHAPES[name](u, v, radius).astype(np.float64)
    return hit.reshape(size, s, size, s).mean(axis=(1, 3))


def _hue_color(rng, lo, hi) -> np.ndarray:
    """A saturated-ish colour whose luminance lies in [lo, hi]."""
    rgb = rng.uniform(0.0, 1.0, size=3) ** 0.7
    lum = float(LUMA @ rgb)
    target = rng.uniform(lo, hi)
    rgb = rgb * (target / max(lum, 1e-6))
    return np.clip(rgb, 0.0, 1.0)


def render_scene(class_name: str, rng: np.random.Generator, spec: GenSpec) -> np.ndarray:
    """Colour scene [3, H, W] in [0, 1]; consumes a fixed number of rng draws."""
    n = spec.size
    cx, cy = rng.uniform(0.35 * n, 0.65 * n, size=2)
    radius = rng.uniform(0.2 * n, 0.3 * n)
    angle = rng.uniform(0.0, 2 * np.pi)
    dark = rng.uniform() < spec.dark_object_prob
    obj = _hue_color(rng, 0.1, 0.3) if dark else _hue_color(rng, 0.6, 0.95)
    bg = _hue_color(rng, 0.5, 0.8) if dark else _hue_color(rng, 0.05, 0.3)
    shade_dir = rng.uniform(0.0, 2 * np.pi)
    shade_amt = rng.uniform(0.5, 1.0) * spec.shading

    mask = shape_mask(class_name, n, cx, cy, radius, angle)
    img = bg[:, None, None] * (1.0 - mask) + obj[:, None, None] * mask

    yy, xx = np.mgrid[0:n, 0:n] + 0.5
    ramp = ((xx - n / 2) * np.cos(shade_dir) + (yy - n / 2) * np.sin(shade_dir)) / n
    img = img * (1.0 + shade_amt * ramp)

    # shadow blob below the object, on the background only
    sy = cy + radius * 0.6 + spec.shadow_offset
    blob = np.exp(-((xx - cx) ** 2 / (2 * (0.9 * radius) ** 2) + (yy - sy) ** 2 / (2 * (0.45 * radius) ** 2)))
    img = img * (1.0 - spec.shadow_strength * blob * (1.0 - mask))
    return np.clip(img, 0.0, 1.0)


def thermal_from_scene(scene: np.ndarray, rng: np.random.Generator, spec: GenSpec) -> np.ndarray:
    """Inverted grayscale, blurred and noised, as a single channel [1, H, W]."""
    v = 1.0 - np.tensordot(LUMA, scene, axes=(0, 0))
    if spec.blur_sigma > 0:
        v = gaussian_filter(v, spec.blur_sigma, mode="nearest")
    if spec.noise_sigma > 0:
        v = v + rng.normal(0.0, spec.noise_sigma, size=v.shape)
    return np.clip(v, 0.0, 1.0)[None]


def to_channels(img: np.ndarray, channels: int) -> np.ndarray:
    """Match an image to the configured input channel count."""
    if img.shape[0] == channels:
        return img
    if img.shape[0] == 1:
        return np.repeat(img, channels, axis=0)
    if img.shape[0] == 3 and channels == 1:
        return np.tensordot(LUMA, img, axes=(0, 0))[None]
    raise ValueError(f"cannot convert {img.shape[0]} channels to {channels}")


def render_sample(class_index: int, style: str, rng: np.random.Generator, spec: GenSpec,
                  split: str = "train", sample_id: int = 0) -> Sample:
    """Render one sample. The same rng state and class give the same geometry in both styles."""
    name = spec.class_names[class_index]
    scene = render_scene(name, rng, spec)
    if style == "source":
        img = scene
    elif style == "target":
        img = thermal_from_scene(scene, rng, spec)
    else:
        raise ValueError(f"unknown style {style!r}")
    return Sample(to_channels(img, spec.in_channels), class_index, style, split, sample_id)


def generate_dataset(spec: GenSpec) -> tuple[Dataset, Dataset]:
    """Source and target datasets with exactly balanced classes per split.

    Each sample draws from its own rng stream seeded by (seed, id), so the
    output does not depend on generation order.
    """
    k = len(spec.class_names)
    out = []
    next_id = 0
    for domain in ("source", "target"):
        imgs, labels, ids, splits = [], [], [], []
        for split in SPLITS:
            for i in range(spec.count(split) * k):
                cls = i % k
                rng = np.random.default_rng([spec.seed, next_id])
                s = render_sample(cls, domain, rng, spec, split, next_id)
                imgs.append(s.image)
                labels.append(cls)
                ids.append(next_id)
                splits.append(split)
                next_id += 1
        n = len(ids)
        out.append(Dataset(np.stack(imgs), np.array(labels, dtype=np.int64), np.array(ids, dtype=np.int64),
                           np.array([domain] * n), np.array(splits), k, spec.class_names))
    return out[0], out[1]


# ---------------------------------------------------------------- persistence

MANIFEST_FIELDS = ("id", "file", "label", "domain", "split")


def save_dataset(ds: Dataset, path: Union[str, Path], withhold_labels: Optional[set] = None) -> None:
    """Write images (PPM for colour, PGM for single-channel data) and manifest.csv.

    ``withhold_labels`` is a set of (domain, split) pairs whose label column is
    left empty. Target images are stored as PGM since their channels are replicas.
    """
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    withhold = withhold_labels or set()
    rows = []
    for s in ds:
        if s.domain == "target" or s.image.shape[0] == 1:
            img, ext = s.image[:1], "pgm"
        else:
            img, ext = s.image, "ppm"
        fname = f"images/{s.domain}_{s.id:07d}.{ext}"
        write_pnm(path / fname, img)
        label = "" if (s.label is None or (s.domain, s.split) in withhold) else str(s.label)
        rows.append((s.id, fname, label, s.domain, s.split))
    with open(path / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        w.writerows(rows)
    if ds.class_names:
        (path / "classes.txt").write_text("\n".join(ds.class_names) + "\n")


def load_dataset(path: Union[str, Path], in_channels: int = 3) -> Dataset:
    path = Path(path)
    manifest = path / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv in {path}")
    imgs, labels, ids, domains, splits = [], [], [], [], []
    with open(manifest, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise ValueError(f"{manifest}: expected columns {MANIFEST_FIELDS}, got {reader.fieldnames}")
        for row in reader:
            f = path / row["file"]
            if not f.exists():
                raise FileNotFoundError(f"{manifest}: referenced image {row['file']} is missing")
            imgs.append(to_channels(read_pnm(f), in_channels))
            labels.append(int(row["label"]) if row["label"] != "" else -1)
            ids.append(int(row["id"]))
            domains.append(row["domain"])
            splits.append(row["split"])
    names_file = path / "classes.txt"
    names = names_file.read_text().split() if names_file.exists() else []
    k = len(names) if names else int(max(labels)) + 1
    return Dataset(np.stack(imgs), np.array(labels, dtype=np.int64), np.array(ids, dtype=np.int64),
                   np.array(domains), np.array(splits), k, names)
