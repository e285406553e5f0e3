"""Gaussian observation model with the two exact likelihood oracles.

All log-densities are in nats. Intensities are assumed to live in [0, 1], so
PSNR uses a unit peak.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from ganaudit.autodiff import forward_eval
from ganaudit.models import GeneratorModel

LOG_2PI = math.log(2 * math.pi)


def _check_sigma2(sigma2: float) -> None:
    if not sigma2 > 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")


def log_obs(x, g, sigma2: float):
    """``log N(x; g, sigma2 I)``. Leading axes of ``g`` are treated as a batch."""
    _check_sigma2(sigma2)
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if g.shape[g.ndim - x.ndim:] != x.shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs g {g.shape}")
    axes = tuple(range(g.ndim - x.ndim, g.ndim))
    d = x.size
    sq = np.sum((x - g) ** 2, axis=axes) if axes else (x - g) ** 2
    return -0.5 * d * math.log(2 * math.pi * sigma2) - sq / (2 * sigma2)


def log_prior(z):
    """Standard-normal log-density over the last axis of ``z``."""
    z = np.asarray(z, dtype=np.float64)
    d = z.shape[-1] if z.ndim else 1
    return -0.5 * d * LOG_2PI - 0.5 * np.sum(z * z, axis=-1)


def log_joint_annealed(model: GeneratorModel, x, z, sigma2: float, beta: float):
    """``log p(z) + beta * log p_sigma(x | G(z))``."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    lp = log_prior(z)
    if beta == 0.0:
        return lp
    return lp + beta * log_obs(x, forward_eval(model, z), sigma2)


def ppca_loglik(model: GeneratorModel, sigma2: float, x):
    """Exact ``log N(x; mu, W W^T + sigma2 I)`` for a linear decoder.

    ``x`` may be one sample or a batch with leading axis.
    """
    if model.kind != "linear":
        raise ValueError("ppca_loglik needs a linear model")
    _check_sigma2(sigma2)
    w = model.params["weight"]
    mu = model.params["mean"]
    dim = w.shape[0]
    x = np.asarray(x, dtype=np.float64)
    single = x.size == dim
    r = x.reshape(-1, dim) - mu
    cov = w @ w.T + sigma2 * np.eye(dim)
    cf = cho_factor(cov, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    maha = np.einsum("ij,ij->i", r, cho_solve(cf, r.T).T)
    ll = -0.5 * (dim * LOG_2PI + logdet + maha)
    return float(ll[0]) if single else ll


def gaussian_entropy(model: GeneratorModel, sigma2: float) -> float:
    """Differential entropy of the marginal of a linear (or constant) decoder."""
    _check_sigma2(sigma2)
    if model.kind == "constant":
        dim = model.output_dim
        return 0.5 * dim * math.log(2 * math.pi * math.e * sigma2)
    if model.kind != "linear":
        raise ValueError("closed-form entropy needs a linear or constant model")
    w = model.params["weight"]
    dim = w.shape[0]
    _, logdet = np.linalg.slogdet(w @ w.T + sigma2 * np.eye(dim))
    return 0.5 * (dim * (1 + LOG_2PI) + logdet)


def exact_loglik(model: GeneratorModel, sigma2: float, x):
    """Closed-form marginal for constant and linear decoders."""
    if model.kind == "constant":
        return log_obs(x, model.params["value"], sigma2)
    if model.kind == "linear":
        return ppca_loglik(model, sigma2, x)
    raise ValueError(f"no closed form for {model.kind} decoders")


def _trapezoid_log_weights(axis: np.ndarray) -> np.ndarray:
    h = axis[1] - axis[0]
    w = np.full(axis.size, h)
    w[0] = w[-1] = h / 2
    return np.log(w)


def quadrature_loglik(model: GeneratorModel, sigma2: float, x, z_range=(-8.0, 8.0),
                      steps: int = 4001) -> float:
    """Brute-force ``log int p_sigma(x|G(z)) p(z) dz`` on a trapezoid grid.

    Works for latent_dim <= 2. The prior weights are renormalised over the
    grid, so truncation of the prior tails cancels and constant decoders are
    reproduced exactly on any grid.
    """
    if model.latent_dim > 2:
        raise ValueError("quadrature is limited to latent_dim <= 2")
    lo, hi = z_range
    if not (lo <= -3.0 and hi >= 3.0):
        raise ValueError("z_range must span at least [-3, 3] prior standard deviations")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    axis = np.linspace(lo, hi, steps)
    lw = _trapezoid_log_weights(axis)
    if model.latent_dim == 1:
        zs = axis[:, None]
        logw = lw
    else:
        a, b = np.meshgrid(axis, axis, indexing="ij")
        zs = np.stack([a.ravel(), b.ravel()], axis=1)
        logw = (lw[:, None] + lw[None, :]).ravel()
    log_mass = logw + log_prior(zs)
    total = 0.0
    chunk = 65536
    parts = []
    for s in range(0, zs.shape[0], chunk):
        g = forward_eval(model, zs[s:s + chunk])
        parts.append(log_mass[s:s + chunk] + log_obs(x, g, sigma2))
    total = logsumexp(np.concatenate(parts)) - logsumexp(log_mass)
    return float(total)


def bits_per_dim(ll, dim: int):
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return np.asarray(ll) / (dim * math.log(2)) if np.ndim(ll) else ll / (dim * math.log(2))


def psnr(sigma2: float) -> float:
    """Peak signal-to-noise ratio in dB for unit peak intensity."""
    _check_sigma2(sigma2)
    return 10.0 * math.log10(1.0 / sigma2)


def estimate_sigma2(errors, dim: int) -> float:
    """Per-pixel noise variance from l2 reconstruction errors.

    This is the mean squared residual per element, which maximises the
    Gaussian likelihood of the residuals.
    """
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no reconstruction errors given")
    return float(np.mean(e * e) / dim)
