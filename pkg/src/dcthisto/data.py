"""Datasets: CSV manifests of image files, a synthetic spectral corpus, and augmentation."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import FormatError, InputError, ManifestError
from .frequency import dct_matrix
from .rng import RngState
from .tensor import Tensor

MANIFEST_HEADER = ("path", "label", "magnification", "split")
MAGNIFICATIONS = (40, 100, 200, 400)
SPLITS = ("train", "val")

BINARY_LABELS = ("benign", "malignant")
# benign subtypes first, then malignant
SUBTYPE_LABELS = ("AD", "FA", "PT", "TA", "DC", "LC", "MC", "PC")

IMAGE_SIZE = (224, 224)


def default_labels(num_classes: int) -> tuple[str, ...]:
    if num_classes == 2:
        return BINARY_LABELS
    if num_classes == 8:
        return SUBTYPE_LABELS
    return tuple(f"class{i}" for i in range(num_classes))


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestRow:
    path: Path
    label: str
    magnification: int
    split: str


@dataclass
class Manifest:
    rows: list[ManifestRow]
    labels: tuple[str, ...]

    def __len__(self):
        return len(self.rows)

    def label_index(self, label: str) -> int:
        return self.labels.index(label)

    def counts(self) -> dict[str, int]:
        c = Counter(r.label for r in self.rows)
        return {lab: c.get(lab, 0) for lab in self.labels}

    def breakdown(self) -> dict[str, dict[int, int]]:
        """Image counts per label and magnification."""
        out = {lab: {m: 0 for m in MAGNIFICATIONS} for lab in self.labels}
        for r in self.rows:
            out[r.label][r.magnification] += 1
        return out

    def filter(self, split: str | None = None, magnification: int | None = None) -> "Manifest":
        rows = [
            r
            for r in self.rows
            if (split is None or r.split == split) and (magnification is None or r.magnification == magnification)
        ]
        return Manifest(rows, self.labels)

    def format_breakdown(self) -> str:
        b = self.breakdown()
        head = f"{'Type':<12}" + "".join(f"{m}x".rjust(8) for m in MAGNIFICATIONS) + "All".rjust(8)
        lines = [head]
        for lab in self.labels:
            row = b[lab]
            lines.append(f"{lab:<12}" + "".join(str(row[m]).rjust(8) for m in MAGNIFICATIONS) + str(sum(row.values())).rjust(8))
        totals = [sum(b[lab][m] for lab in self.labels) for m in MAGNIFICATIONS]
        lines.append(f"{'Total (N)':<12}" + "".join(str(t).rjust(8) for t in totals) + str(sum(totals)).rjust(8))
        return "\n".join(lines) + "\n"


def _match_label(raw: str, labels: Sequence[str]) -> str | None:
    for lab in labels:
        if raw == lab or raw.lower() == lab.lower():
            return lab
    return None


def load_manifest(path, labels: Sequence[str] = BINARY_LABELS) -> Manifest:
    """Parse and validate a ``path,label,magnification,split`` CSV.

    Relative image paths resolve against the manifest's directory. Any bad
    row aborts the whole load with a line-numbered error.
    """
    path = Path(path)
    labels = tuple(labels)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e.strerror}") from e
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError(f"manifest {path} is empty") from None
    if tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise ManifestError(f"header must be {','.join(MANIFEST_HEADER)}, got {','.join(header)}", 1)
    rows: list[ManifestRow] = []
    seen: dict[str, int] = {}
    for line, rec in enumerate(reader, start=2):
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != 4:
            raise ManifestError(f"expected 4 fields, got {len(rec)}", line)
        p, lab, mag, split = (f.strip() for f in rec)
        if not p:
            raise ManifestError("empty path", line)
        if p in seen:
            raise ManifestError(f"duplicate path {p!r} (first seen on line {seen[p]})", line)
        seen[p] = line
        label = _match_label(lab, labels)
        if label is None:
            raise ManifestError(f"unknown label {lab!r}; expected one of {list(labels)}", line)
        try:
            m = int(mag)
        except ValueError:
            m = None
        if m not in MAGNIFICATIONS:
            raise ManifestError(f"bad magnification {mag!r}; expected one of {list(MAGNIFICATIONS)}", line)
        if split not in SPLITS:
            raise ManifestError(f"bad split {split!r}; expected one of {list(SPLITS)}", line)
        img = Path(p)
        if not img.is_absolute():
            img = path.parent / img
        rows.append(ManifestRow(img, label, m, split))
    if not rows:
        raise ManifestError(f"manifest {path} has no data rows")
    return Manifest(rows, labels)


def manifest_labels(path) -> list[str]:
    """Distinct raw label strings in a manifest, without validating against a label set."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e.strerror}") from e
    found = set()
    for rec in list(csv.reader(text.splitlines()))[1:]:
        if len(rec) >= 2 and rec[1].strip():
            found.add(rec[1].strip())
    return sorted(found)


def holdout_split(manifest: Manifest, rng: RngState, fraction: float = 0.3) -> tuple[Manifest, Manifest]:
    """Stratified (per label and magnification) random split into train and held-out rows."""
    if not 0 < fraction < 1:
        raise InputError(f"holdout fraction must be in (0, 1), got {fraction}")
    groups: dict[tuple[str, int], list[ManifestRow]] = {}
    for r in manifest.rows:
        groups.setdefault((r.label, r.magnification), []).append(r)
    train_rows, held_rows = [], []
    for key in sorted(groups):
        rows = groups[key]
        order = rng.split(f"{key[0]}/{key[1]}").permutation(len(rows))
        n_held = int(round(fraction * len(rows)))
        held = set(order[:n_held].tolist())
        for i, r in enumerate(rows):
            (held_rows if i in held else train_rows).append(r)
    return Manifest(train_rows, manifest.labels), Manifest(held_rows, manifest.labels)


# ---------------------------------------------------------------------------
# images


def bilinear_resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize ``(C, H, W)`` with corner-aligned bilinear sampling (exact on linear ramps)."""
    _, h, w = img.shape
    oh, ow = size
    if (h, w) == (oh, ow):
        return img.copy()
    ys = np.linspace(0.0, h - 1, oh) if oh > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1, ow) if ow > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, max(h - 2, 0))
    x0 = np.clip(np.floor(xs).astype(int), 0, max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def decode_image(path) -> np.ndarray:
    """RGB ``(3, H, W)`` float64 in [0, 1] from a PNG or binary PPM file."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise FormatError(f"unsupported image container {im.format!r}: {path}")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"cannot decode image {path}: {e}") from e
    return np.ascontiguousarray(arr.transpose(2, 0, 1) / 255.0)


def load_image(path, size: tuple[int, int] | None = IMAGE_SIZE) -> Tensor:
    img = decode_image(path)
    if size is not None:
        img = bilinear_resize(img, tuple(size))
    return Tensor(img)


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    flip: bool = True
    rotate: bool = True
    crop: bool = True
    flip_p: float = 0.5
    max_rotation: float = 15.0
    crop_pad: int = 8


def hflip(x: np.ndarray) -> np.ndarray:
    return x[..., ::-1].copy()


def rotate(x: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate ``(C, H, W)`` about its center; bilinear, edge pixels replicated."""
    out = ndimage.rotate(x, degrees, axes=(2, 1), reshape=False, order=1, mode="nearest")
    return np.clip(out, x.min(), x.max())


def pad_crop(x: np.ndarray, pad: int, top: int, left: int) -> np.ndarray:
    """Reflect-pad by ``pad`` then cut an ``H x W`` window at (top, left)."""
    _, h, w = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    return xp[:, top : top + h, left : left + w].copy()


def augment(x, rng: RngState, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Random flip, rotation and padded crop of one ``(C, H, W)`` image.

    A fixed number of draws is consumed regardless of which toggles are on,
    so enabling one augmentation does not shift the others' randomness.
    """
    x = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    u = rng.random(4)
    if cfg.flip and u[0] < cfg.flip_p:
        x = hflip(x)
    if cfg.rotate and cfg.max_rotation > 0:
        x = rotate(x, (2 * u[1] - 1) * cfg.max_rotation)
    if cfg.crop and cfg.crop_pad > 0:
        span = 2 * cfg.crop_pad + 1
        x = pad_crop(x, cfg.crop_pad, int(u[2] * span), int(u[3] * span))
    return x


# ---------------------------------------------------------------------------
# datasets


@dataclass
class ArrayDataset:
    images: np.ndarray
    labels: np.ndarray
    magnifications: np.ndarray | None = None
    label_names: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise InputError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def num_classes(self) -> int:
        return len(self.label_names) if self.label_names else int(self.labels.max()) + 1

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        return self.images[idx], self.labels[idx]

    def subset(self, indices) -> "ArrayDataset":
        idx = np.asarray(indices, dtype=np.int64)
        mags = None if self.magnifications is None else self.magnifications[idx]
        return ArrayDataset(self.images[idx], self.labels[idx], mags, self.label_names)


class ManifestDataset:
    """Images loaded from disk on demand, in manifest order."""

    def __init__(self, manifest: Manifest, size: tuple[int, int] = IMAGE_SIZE):
        self.manifest = manifest
        self.size = tuple(size)
        self.labels = np.array([manifest.label_index(r.label) for r in manifest.rows], dtype=np.int64)
        self.magnifications = np.array([r.magnification for r in manifest.rows], dtype=np.int64)
        self.label_names = manifest.labels

    def __len__(self):
        return len(self.manifest)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.int64)
        imgs = np.stack([load_image(self.manifest.rows[i].path, self.size).data for i in idx])
        return imgs, self.labels[idx]


# ---------------------------------------------------------------------------
# synthetic spectral corpus


def radial_frequency(size: int) -> np.ndarray:
    """Normalized radius ``sqrt(u^2 + v^2) / size`` of each DCT coefficient."""
    u = np.arange(size)
    return np.sqrt(u[:, None] ** 2 + u[None, :] ** 2) / size


def band_edges(classes: int) -> np.ndarray:
    """Radial band boundaries; class i owns ``[edges[i], edges[i+1])``."""
    lo, hi = (0.1, 0.7) if classes == 2 else (0.1, 0.9)
    return np.linspace(lo, hi, classes + 1)


def band_masks(size: int, classes: int) -> list[np.ndarray]:
    rho = radial_frequency(size)
    e = band_edges(classes)
    return [(rho >= e[i]) & (rho < e[i + 1]) for i in range(classes)]


def synth_dataset(
    rng: RngState,
    n_per_class: int,
    classes: int = 2,
    size: int = 64,
    channels: int = 3,
    blobs: int = 3,
    blob_amplitude: float = 0.3,
) -> ArrayDataset:
    """Class ``i`` is noise confined to radial DCT band ``i`` plus a few class-independent blobs.

    Images are in [0, 1], shape ``(channels, size, size)``; samples are ordered
    by class.
    """
    if classes not in (2, 8):
        raise InputError(f"synthetic dataset supports 2 or 8 classes, got {classes}")
    masks = band_masks(size, classes)
    d = dct_matrix(size)
    yy, xx = np.mgrid[0:size, 0:size] / size
    n = n_per_class * classes
    images = np.empty((n, channels, size, size))
    labels = np.repeat(np.arange(classes), n_per_class)
    for idx, cls in enumerate(labels):
        coeffs = rng.normal((channels, size, size)) * masks[cls]
        img = d.T @ coeffs @ d
        img /= img.std() + 1e-12
        params = rng.random((blobs, 4))
        for cy, cx, sig, amp in params:
            sigma = 0.06 + 0.1 * sig
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
            img += blob_amplitude * (2 * amp - 1) * blob
        images[idx] = np.clip(0.5 + 0.15 * img, 0.0, 1.0)
    names = default_labels(classes) if classes == 8 else ("class0", "class1")
    return ArrayDataset(images, labels, None, names)


def band_energies(images: np.ndarray, classes: int) -> np.ndarray:
    """Mean (over images) total DCT energy in each class band; shape ``(classes,)``."""
    size = images.shape[-1]
    d = dct_matrix(size)
    spec = d @ images @ d.T
    masks = band_masks(size, classes)
    return np.array([float(np.mean(np.sum(spec**2 * m, axis=(-3, -2, -1)))) for m in masks])
