"""Deterministic synthetic datasets standing in for image corpora."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ganaudit.models import linear_model, sample_dataset, spiral_model

KINDS = ("two-class-ppca", "spiral", "single-color", "shifted-cluster", "smooth-gradients")


@dataclass
class SyntheticSet:
    name: str
    samples: np.ndarray
    labels: np.ndarray
    group: str


def _shape(params, default):
    shape = params.get("shape", default)
    shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ValueError(f"invalid shape {shape}")
    return shape


def _positive(params, key, default, kind=float):
    v = kind(params.get(key, default))
    if not v > 0:
        raise ValueError(f"{key} must be positive, got {v}")
    return v


def two_class_ppca(params: dict, seed: int) -> list[SyntheticSet]:
    """Two linear-Gaussian classes with means ``+m`` and ``-m`` on every coordinate."""
    dim = _positive(params, "dim", 8, int)
    k = _positive(params, "k", 2, int)
    if k >= dim:
        raise ValueError("k must be smaller than dim")
    m = float(params.get("mean", 3.0))
    sigma2 = _positive(params, "sigma2", 0.1)
    n_train = _positive(params, "n_train", 200, int)
    n_test = _positive(params, "n_test", 50, int)
    scale = _positive(params, "scale", 1.0)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    models = [linear_model(scale * rng.standard_normal((dim, k)) / math.sqrt(k), np.full(dim, s * m))
              for s in (1.0, -1.0)]
    out = []
    for name, n, off in (("train", n_train, 1), ("test", n_test, 2)):
        parts = [sample_dataset(mod, sigma2, n, np.random.SeedSequence([seed, off, c]))
                 for c, mod in enumerate(models)]
        labels = np.repeat([0, 1], n)
        out.append(SyntheticSet(name, np.concatenate(parts), labels, name))
    return out


def spiral(params: dict, seed: int) -> list[SyntheticSet]:
    n = _positive(params, "n", 100, int)
    sigma2 = _positive(params, "sigma2", 0.05)
    xs = sample_dataset(spiral_model(), sigma2, n, seed)
    return [SyntheticSet("spiral", xs, np.zeros(n, dtype=int), "train")]


def single_color(params: dict, seed: int) -> list[SyntheticSet]:
    """Images filled with one intensity (per channel); random colours unless ``value`` is given."""
    n = _positive(params, "n", 50, int)
    shape = _shape(params, (16, 16))
    value = params.get("value")
    channels = shape[-1] if len(shape) == 3 else 1
    if value is None:
        colours = np.random.default_rng(seed).random((n, channels))
    else:
        colours = np.broadcast_to(np.asarray(value, dtype=np.float64).reshape(-1), (n, channels))
    if np.any((colours < 0) | (colours > 1)):
        raise ValueError("single-color values must lie in [0, 1]")
    if len(shape) == 3:
        xs = np.broadcast_to(colours[:, None, None, :], (n, *shape))
    else:
        xs = np.broadcast_to(colours[:, :1].reshape((n,) + (1,) * len(shape)), (n, *shape))
    return [SyntheticSet("single-color", np.array(xs), np.zeros(n, dtype=int), "outlier")]


def shifted_cluster(params: dict, seed: int) -> list[SyntheticSet]:
    """Isotropic Gaussian cluster ``N(center + shift, sd^2 I)``; the OOD stand-in."""
    n = _positive(params, "n", 50, int)
    shape = _shape(params, (8,))
    sd = float(params.get("sd", 0.3))
    if sd < 0:
        raise ValueError("sd must be non-negative")
    center = np.broadcast_to(np.asarray(params.get("center", 0.0), dtype=np.float64), shape)
    shift = float(params.get("shift", 2.0))
    rng = np.random.default_rng(seed)
    xs = center + shift + sd * rng.standard_normal((n, *shape))
    return [SyntheticSet("shifted-cluster", xs, np.zeros(n, dtype=int), "outlier")]


def smooth_gradients(params: dict, seed: int) -> list[SyntheticSet]:
    """Linear intensity ramps at a random angle and contrast, plus mild pixel noise."""
    n = _positive(params, "n", 100, int)
    h, w = _shape(params, (16, 16))[:2]
    noise = float(params.get("noise", 0.02))
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(-0.5, 0.5, h), np.linspace(-0.5, 0.5, w), indexing="ij")
    angle = rng.uniform(0, 2 * math.pi, n)
    contrast = rng.uniform(0.1, 0.8, n)
    base = rng.uniform(0.3, 0.7, n)
    ramp = np.cos(angle)[:, None, None] * xx + np.sin(angle)[:, None, None] * yy
    xs = base[:, None, None] + contrast[:, None, None] * ramp + noise * rng.standard_normal((n, h, w))
    return [SyntheticSet("smooth-gradients", np.clip(xs, 0.0, 1.0), np.zeros(n, dtype=int), "train")]


_BUILDERS = {
    "two-class-ppca": two_class_ppca,
    "spiral": spiral,
    "single-color": single_color,
    "shifted-cluster": shifted_cluster,
    "smooth-gradients": smooth_gradients,
}

PARAMS = {
    "two-class-ppca": {"dim", "k", "mean", "sigma2", "n_train", "n_test", "scale"},
    "spiral": {"n", "sigma2"},
    "single-color": {"n", "shape", "value"},
    "shifted-cluster": {"n", "shape", "sd", "center", "shift"},
    "smooth-gradients": {"n", "shape", "noise"},
}


def make_synthetic(kind: str, params: dict | None = None, seed: int = 0) -> list[SyntheticSet]:
    if kind not in _BUILDERS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {', '.join(KINDS)}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    params = dict(params or {})
    unknown = sorted(set(params) - PARAMS[kind])
    if unknown:
        raise ValueError(f"unknown {kind} parameter(s): {', '.join(unknown)}")
    return _BUILDERS[kind](params, seed)
