"""Dataset generation, ingestion, augmentation, and noise construction.

Every generator is a pure function of its parameters and seed.  Labels are
1-based.  Binary ingestion is limited to the IDX format; everything else
arrives as CSV with one row per sample and the label in the last column.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "Dataset",
    "two_moons",
    "uniform_noise",
    "permuted_smoothed_noise",
    "permute_pixels",
    "augment",
    "crop_and_flip",
    "load_idx",
    "IdxFormatError",
    "load_csv",
    "save_csv",
]

log = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class Dataset:
    """Immutable-by-convention sample container.

    ``domain`` is either "unbounded" or "unit-box"; unit-box data never
    leaves [0, 1].  ``layout`` carries the (height, width) pixel layout for
    image-shaped data.
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    domain: str = "unbounded"
    name: str = ""
    layout: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape[0] != self.points.shape[0]:
                raise ValueError("one label per point required")
            if self.labels.size and self.labels.min() < 1:
                raise ValueError("labels are 1-based")
        if self.domain not in ("unbounded", "unit-box"):
            raise ValueError("domain must be 'unbounded' or 'unit-box'")
        if self.domain == "unit-box" and self.points.size:
            if self.points.min() < 0.0 or self.points.max() > 1.0:
                raise ValueError("unit-box data must stay inside [0, 1]")
        if self.layout is not None and self.layout[0] * self.layout[1] != self.points.shape[1]:
            raise ValueError("layout does not match the point dimension")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def two_moons(n: int, noise_sd: float = 0.1, seed: int = 0) -> Dataset:
    """Two interleaving half circles with Gaussian jitter, labels 1 and 2."""
    if n < 2:
        raise ValueError("two_moons needs n >= 2")
    n1 = n - n // 2
    n2 = n // 2
    t1 = np.linspace(0.0, np.pi, n1)
    t2 = np.linspace(0.0, np.pi, n2)
    upper = np.column_stack([np.cos(t1), np.sin(t1)])
    lower = np.column_stack([1.0 - np.cos(t2), 0.5 - np.sin(t2)])
    points = np.vstack([upper, lower])
    rng = np.random.default_rng(seed)
    if noise_sd > 0:
        points = points + rng.normal(0.0, noise_sd, points.shape)
    labels = np.concatenate([np.ones(n1, int), np.full(n2, 2)])
    return Dataset(points, labels, "unbounded", "two-moons")


def uniform_noise(n: int, d: int, seed: int = 0) -> Dataset:
    """i.i.d. uniform points on the unit box."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    return Dataset(rng.random((n, d)), None, "unit-box", "uniform")


def permute_pixels(images: Dataset, rng: np.random.Generator) -> Dataset:
    """Shuffle each image's pixels with an independent random permutation."""
    if images.layout is None:
        raise ValueError("pixel permutation needs an image layout")
    shuffled = np.stack([row[rng.permutation(row.size)] for row in images.points])
    return Dataset(shuffled, None, images.domain, images.name + "-shuffled", images.layout)


def permuted_smoothed_noise(
    images: Dataset,
    seed: int = 0,
    width_range: tuple[float, float] = (1.0, 5.0),
) -> Dataset:
    """Per image: shuffle pixels, blur with a Gaussian filter of uniformly
    random width (kernel truncated at 3 sigma, reflect boundary), then
    rescale affinely to full [0, 1] range.

    An image that comes out constant after the blur has no defined rescale
    and is set to 0.5 everywhere (logged).
    """
    if images.layout is None:
        raise ValueError("noise construction needs an image layout")
    h, w = images.layout
    rng = np.random.default_rng(seed)
    out = np.empty_like(images.points)
    for i, row in enumerate(images.points):
        img = row[rng.permutation(row.size)].reshape(h, w)
        width = rng.uniform(*width_range)
        img = gaussian_filter(img, sigma=width, mode="reflect", truncate=3.0)
        lo, hi = float(img.min()), float(img.max())
        if hi - lo < 1e-12:
            log.warning("image %d constant after blur; filled with 0.5", i)
            out[i] = 0.5
        else:
            out[i] = ((img - lo) / (hi - lo)).ravel()
    return Dataset(out, None, "unit-box", images.name + "-noise", images.layout)


def crop_and_flip(
    image: np.ndarray,
    pad: int,
    mode: str,
    off_y: int,
    off_x: int,
    flip: bool,
) -> np.ndarray:
    """Deterministic pad-crop-flip of a single 2-d image.

    ``mode`` is "boundary" (replicate the edge value) or "reflect".
    """
    np_mode = {"boundary": "edge", "reflect": "reflect"}.get(mode)
    if np_mode is None:
        raise ValueError("mode must be 'boundary' or 'reflect'")
    h, w = image.shape
    padded = np.pad(image, pad, mode=np_mode) if pad else image
    window = padded[off_y : off_y + h, off_x : off_x + w]
    return window[:, ::-1] if flip else window


def augment(
    images: Dataset,
    pad: int,
    mode: str = "boundary",
    flip: bool = False,
    seed: int = 0,
) -> Dataset:
    """Random crops after padding, with optional horizontal flips.

    Crop offsets are uniform over the (2 pad + 1)^2 grid; each flip fires
    with probability one half.
    """
    if images.layout is None:
        raise ValueError("augmentation needs an image layout")
    if pad < 0:
        raise ValueError("pad must be >= 0")
    h, w = images.layout
    if pad > min(h, w):
        raise ValueError("pad larger than the image")
    rng = np.random.default_rng(seed)
    out = np.empty_like(images.points)
    for i, row in enumerate(images.points):
        off_y, off_x = rng.integers(0, 2 * pad + 1, size=2)
        do_flip = flip and rng.random() < 0.5
        out[i] = crop_and_flip(row.reshape(h, w), pad, mode, off_y, off_x, do_flip).ravel()
    return Dataset(out, images.labels, images.domain, images.name + "-aug", images.layout)


def _read_be32(data: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(data):
        raise IdxFormatError(f"{path}: truncated header")
    return struct.unpack(">I", data[offset : offset + 4])[0]


def load_idx(images_path: str, labels_path: str | None = None) -> Dataset:
    """Read an IDX image file (and optional label file) into a dataset.

    Pixels are scaled to [0, 1].  Raw label bytes are shifted by +1 so the
    smallest class id is 1.
    """
    with open(images_path, "rb") as fh:
        raw = fh.read()
    magic = _read_be32(raw, 0, images_path)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(f"{images_path}: bad magic 0x{magic:08x} for an image file")
    n = _read_be32(raw, 4, images_path)
    rows = _read_be32(raw, 8, images_path)
    cols = _read_be32(raw, 12, images_path)
    body = raw[16:]
    if len(body) != n * rows * cols:
        raise IdxFormatError(
            f"{images_path}: expected {n * rows * cols} pixel bytes, found {len(body)}"
        )
    points = np.frombuffer(body, dtype=np.uint8).astype(float).reshape(n, rows * cols) / 255.0

    labels = None
    if labels_path is not None:
        with open(labels_path, "rb") as fh:
            raw_l = fh.read()
        magic_l = _read_be32(raw_l, 0, labels_path)
        if magic_l != IDX_LABEL_MAGIC:
            raise IdxFormatError(
                f"{labels_path}: bad magic 0x{magic_l:08x} for a label file"
            )
        n_l = _read_be32(raw_l, 4, labels_path)
        body_l = raw_l[8:]
        if len(body_l) != n_l:
            raise IdxFormatError(f"{labels_path}: expected {n_l} label bytes, found {len(body_l)}")
        if n_l != n:
            raise IdxFormatError(f"label count {n_l} does not match image count {n}")
        labels = np.frombuffer(body_l, dtype=np.uint8).astype(int) + 1
    return Dataset(points, labels, "unit-box", images_path.rsplit("/", 1)[-1], (rows, cols))


def load_csv(path: str, labeled: bool = False, name: str = "") -> Dataset:
    """CSV with one row per sample; when labeled, the label is last."""
    table = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
    if labeled:
        if table.shape[1] < 2:
            raise ValueError(f"{path}: labeled data needs at least two columns")
        return Dataset(table[:, :-1], table[:, -1].astype(int), name=name or path)
    return Dataset(table, None, name=name or path)


def save_csv(path: str, dataset: Dataset) -> None:
    table = dataset.points
    if dataset.labels is not None:
        table = np.column_stack([dataset.points, dataset.labels.astype(float)])
    np.savetxt(path, table, delimiter=",", fmt="%.17g")
