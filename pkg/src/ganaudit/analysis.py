"""Image complexity via the patch coefficient of variation, with correlation and histogram helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CV_GUARD = 1e-8


@dataclass
class PatchStats:
    image_id: int
    mean_cv: float


def patch_cv(image, patch: int = 8) -> float:
    """Mean coefficient of variation over non-overlapping ``patch x patch`` tiles.

    The grid is anchored at the top-left corner; partial tiles at the right
    and bottom edges are dropped. Each channel of each tile contributes
    ``std / (mean + 1e-8)`` with the population std. A 2-D image is treated
    as single-channel.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"expected an HxW or HxWxC image, got shape {img.shape}")
    if patch < 1:
        raise ValueError("patch must be >= 1")
    h, w, c = img.shape
    ph, pw = h // patch, w // patch
    if ph == 0 or pw == 0:
        raise ValueError(f"image {h}x{w} is smaller than one {patch}x{patch} patch")
    tiles = img[:ph * patch, :pw * patch].reshape(ph, patch, pw, patch, c)
    mean = tiles.mean(axis=(1, 3))
    # std is shift-invariant; centring on a tile pixel makes flat tiles exactly 0
    std = (tiles - tiles[:, :1, :, :1]).std(axis=(1, 3))
    return float(np.mean(std / (mean + CV_GUARD)))


def patch_stats(images, patch: int = 8, ids=None) -> list[PatchStats]:
    ids = range(len(images)) if ids is None else ids
    return [PatchStats(int(i), patch_cv(im, patch)) for i, im in zip(ids, images)]


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError("xs and ys differ in length")
    if x.size < 2:
        raise ValueError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.sum(dx * dx))
    sy = np.sqrt(np.sum(dy * dy))
    if sx == 0 or sy == 0:
        raise ValueError("pearson is undefined for zero-variance input")
    return float(np.clip(np.sum(dx * dy) / (sx * sy), -1.0, 1.0))


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    excluded: int


def histogram(values, bins: int, value_range=None) -> Histogram:
    """Uniform-bin histogram; values outside ``value_range`` are counted as excluded.

    Without a range the data extent is used (a single value gets a unit-wide bin).
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("histogram of empty input")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if value_range is None:
        lo, hi = float(v.min()), float(v.max())
        if lo == hi:
            lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = map(float, value_range)
        if not hi > lo:
            raise ValueError("histogram range must have hi > lo")
    inside = (v >= lo) & (v <= hi)
    counts, edges = np.histogram(v[inside], bins=bins, range=(lo, hi))
    return Histogram(edges, counts, int(v.size - inside.sum()))
