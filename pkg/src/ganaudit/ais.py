"""Annealed importance sampling with an HMC transition kernel.

Intermediate targets are ``p(z) * p_sigma(x | G(z)) ** beta_t`` with a
sigmoidal ``beta`` schedule. Each level is followed by one HMC step. The
step size adapts throughout the anneal from a moving average of the
acceptance rate of separate pilot chains; letting weighted chains adapt on
their own acceptances biases the estimate upwards on multimodal posteriors.

Chains of one sample run together as a batch; every chain owns its random
stream, derived from ``(seed, sample_id, chain_id)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from ganaudit._rng import AIS_PILOT_STREAM, AIS_STREAM, derive_rng
from ganaudit.autodiff import ShapeError, linearize
from ganaudit.density import bits_per_dim, log_obs
from ganaudit.models import GeneratorModel

logger = logging.getLogger(__name__)

STEP_UP = 1.02
STEP_DOWN = 0.98
DIVERGENCE_FLAG_RATE = 0.10


@dataclass(frozen=True)
class AISConfig:
    steps: int = 500
    chains: int = 4
    leapfrog_steps: int = 10
    step_size: float = 0.05
    target_accept: float = 0.65
    smoothing: float = 0.9
    sharpness: float = 4.0
    pilot_chains: int = 1

    def __post_init__(self):
        if min(self.steps, self.chains, self.leapfrog_steps, self.pilot_chains) < 1:
            raise ValueError("steps, chains, leapfrog_steps and pilot_chains must all be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0 < self.smoothing < 1:
            raise ValueError("smoothing must lie in (0, 1)")
        if not self.step_size > 0 or not self.sharpness > 0:
            raise ValueError("step_size and sharpness must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LLEstimate:
    """AIS output for one sample.

    ``trace`` has shape ``(T, chains)`` and holds the running log-weight after
    each level's accumulation; ``accepted`` has the same shape. ``step_sizes``
    is the shared step-size schedule, one entry per level.
    """

    sample_id: int
    log_weights: np.ndarray
    ll: float
    trace: np.ndarray
    accepted: np.ndarray
    divergences: np.ndarray
    step_sizes: np.ndarray

    @property
    def spread(self) -> float:
        return float(self.log_weights.max() - self.log_weights.min())

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    @property
    def flagged(self) -> bool:
        return bool(np.any(self.divergences > DIVERGENCE_FLAG_RATE * self.trace.shape[0]))

    def bits_per_dim(self, dim: int) -> float:
        return float(bits_per_dim(self.ll, dim))


def beta_schedule(steps: int, sharpness: float = 4.0) -> np.ndarray:
    """Sigmoidal annealing weights ``beta_0 = 0 < ... < beta_T = 1``.

    A logistic curve over ``[-sharpness, sharpness]`` evaluated at ``T + 1``
    evenly spaced points, affinely rescaled onto ``[0, 1]``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not sharpness > 0:
        raise ValueError("sharpness must be positive")
    s = 1.0 / (1.0 + np.exp(-np.linspace(-sharpness, sharpness, steps + 1)))
    beta = (s - s[0]) / (s[-1] - s[0])
    beta[0], beta[-1] = 0.0, 1.0
    return beta


def log_mean_exp(values) -> float:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("log_mean_exp of an empty list")
    m = v.max()
    if m == -np.inf:
        return -math.inf
    return float(m + math.log(np.mean(np.exp(v - m))))


def leapfrog(z, momentum, step, n_steps: int, grad_fn: Callable):
    """Half kick, ``n_steps`` drifts interleaved with full kicks, half kick.

    ``grad_fn`` returns the gradient of the log-density (not the potential).
    ``step`` may be a scalar or one value per row of a batched ``z``.
    """
    z, p = _leapfrog(np.asarray(z, dtype=np.float64), np.asarray(momentum, dtype=np.float64),
                     step, n_steps, lambda q: (None, grad_fn(q)))[:2]
    return z, p


def _leapfrog(z, p, step, n_steps, value_and_grad, grad0=None):
    eps = np.asarray(step, dtype=np.float64)
    if eps.ndim == 1:
        eps = eps[:, None]
    g = value_and_grad(z)[1] if grad0 is None else grad0
    p = p + 0.5 * eps * g
    val = None
    for i in range(n_steps):
        z = z + eps * p
        val, g = value_and_grad(z)
        p = p + (eps if i < n_steps - 1 else 0.5 * eps) * g
    return z, p, val, g


@dataclass
class HMCResult:
    z: np.ndarray
    accepted: np.ndarray
    divergent: np.ndarray
    accept_prob: np.ndarray


def _as_rngs(rngs, n):
    if isinstance(rngs, np.random.Generator):
        rngs = [rngs]
    rngs = list(rngs)
    if len(rngs) != n:
        raise ValueError(f"need one generator per chain ({n}), got {len(rngs)}")
    return rngs


def hmc_step(z, value_and_grad: Callable, step, rngs, n_leapfrog: int = 10) -> HMCResult:
    """One Metropolis-adjusted HMC transition for a batch of chains.

    ``z`` has shape ``(chains, d)`` (a single ``(d,)`` state is promoted).
    ``value_and_grad(z)`` returns the log-density per chain and its gradient.
    Momenta are fully resampled. Proposals whose Hamiltonian is non-finite
    are rejected and reported as divergent.
    """
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None]
    n, d = z.shape
    rngs = _as_rngs(rngs, n)
    p0 = np.stack([r.standard_normal(d) for r in rngs])
    u = np.array([r.random() for r in rngs])
    res = _hmc_transition(z, value_and_grad, step, p0, u, n_leapfrog)
    if single:
        return HMCResult(res.z[0], res.accepted, res.divergent, res.accept_prob)
    return res


def _hmc_transition(z, value_and_grad, step, p0, u, n_leapfrog):
    n = z.shape[0]
    step = np.broadcast_to(np.asarray(step, dtype=np.float64), (n,))
    if np.any(step <= 0):
        raise ValueError("step size must be positive")
    with np.errstate(all="ignore"):
        logp0, g0 = value_and_grad(z)
        zn, pn, logp1, _ = _leapfrog(z, p0, step, n_leapfrog, value_and_grad, grad0=g0)
        h0 = -logp0 + 0.5 * np.sum(p0 * p0, axis=1)
        h1 = -logp1 + 0.5 * np.sum(pn * pn, axis=1)
        log_ratio = h0 - h1
        divergent = ~np.isfinite(log_ratio) | ~np.all(np.isfinite(zn), axis=1)
        log_ratio = np.where(divergent, -np.inf, log_ratio)
        accepted = np.log(u) < log_ratio
        prob = np.exp(np.minimum(log_ratio, 0.0))
    return HMCResult(np.where(accepted[:, None], zn, z), accepted, divergent, prob)


def adapt_step_size(step, avg_accept, accepted, smoothing: float = 0.9, target: float = 0.65):
    """Update the acceptance moving average, then nudge the step size.

    Returns ``(new_step, new_avg)``. The step grows by 2% while the average
    exceeds ``target`` and shrinks by 2% otherwise. Works elementwise.
    """
    if not 0 < smoothing < 1:
        raise ValueError("smoothing must lie in (0, 1)")
    avg = smoothing * np.asarray(avg_accept, dtype=np.float64) + (1 - smoothing) * np.asarray(accepted, dtype=np.float64)
    new = np.asarray(step, dtype=np.float64) * np.where(avg > target, STEP_UP, STEP_DOWN)
    if np.ndim(new) == 0:
        return float(new), float(avg)
    return new, avg


def _level_fn(model, x, sigma2, beta):
    resid_scale = beta / sigma2

    def value_and_grad(z):
        g, pull = linearize(model, z, check_finite=False)
        ll = log_obs(x, g, sigma2)
        logp = -0.5 * np.sum(z * z, axis=1) + beta * ll
        grad = -z + pull(resid_scale * (x - g))
        return logp, grad

    return value_and_grad


def _draw_streams(rngs, steps, d):
    # each chain draws its whole stream up front: z0, momenta, accept uniforms
    n = len(rngs)
    z = np.empty((n, d))
    momenta = np.empty((steps, n, d))
    uniforms = np.empty((steps, n))
    for c, r in enumerate(rngs):
        z[c] = r.standard_normal(d)
        momenta[:, c] = r.standard_normal((steps, d))
        uniforms[:, c] = r.random(steps)
    return z, momenta, uniforms


def _run_chains(model, x, sigma2, cfg: AISConfig, rngs: Sequence[np.random.Generator],
                pilot_rngs: Sequence[np.random.Generator]):
    """Anneal weighted chains and pilot chains side by side.

    Only the pilots' acceptances drive the shared step size, so the kernel
    applied to a weighted chain never depends on that chain's own history.
    """
    n = len(rngs)
    d = model.latent_dim
    betas = beta_schedule(cfg.steps, cfg.sharpness)
    z, momenta, uniforms = _draw_streams(list(rngs) + list(pilot_rngs), cfg.steps, d)
    logw = np.zeros(n)
    trace = np.empty((cfg.steps, n))
    accepted = np.zeros((cfg.steps, n), dtype=bool)
    divergences = np.zeros(n, dtype=int)
    steps = np.empty(cfg.steps)
    step = cfg.step_size
    avg = cfg.target_accept
    for t in range(1, cfg.steps + 1):
        with np.errstate(all="ignore"):
            g, _ = linearize(model, z[:n], check_finite=False)
            logw = logw + (betas[t] - betas[t - 1]) * log_obs(x, g, sigma2)
        trace[t - 1] = logw
        res = _hmc_transition(z, _level_fn(model, x, sigma2, betas[t]), step,
                              momenta[t - 1], uniforms[t - 1], cfg.leapfrog_steps)
        z = res.z
        accepted[t - 1] = res.accepted[:n]
        divergences += res.divergent[:n]
        steps[t - 1] = step
        step, avg = adapt_step_size(step, avg, res.accepted[n:].mean(), cfg.smoothing, cfg.target_accept)
    return trace, accepted, divergences, steps


def _check_x(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.output_shape:
        raise ShapeError(f"sample shape {x.shape} != model output shape {model.output_shape}")
    return x


def ais_chain(model: GeneratorModel, x, sigma2: float, cfg: AISConfig | None = None,
              seed: int = 0, sample_id: int = 0) -> np.ndarray:
    """Running log-weights, shape ``(T, chains)``, for all chains of one sample."""
    return _estimate_one(model, x, sigma2, cfg or AISConfig(), seed, sample_id).trace


def _estimate_one(model, x, sigma2, cfg, seed, sample_id) -> LLEstimate:
    x = _check_x(model, x)
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    rngs = [derive_rng(seed, AIS_STREAM, sample_id, c) for c in range(cfg.chains)]
    pilots = [derive_rng(seed, AIS_PILOT_STREAM, sample_id, c) for c in range(cfg.pilot_chains)]
    trace, accepted, div, step = _run_chains(model, x, sigma2, cfg, rngs, pilots)
    final = trace[-1].copy()
    est = LLEstimate(sample_id, final, log_mean_exp(final), trace, accepted, div, step)
    if est.flagged:
        logger.warning("sample %d: divergence rate above %.0f%% in some chain",
                       sample_id, 100 * DIVERGENCE_FLAG_RATE)
    return est


def _estimate_job(args):
    model, x, sigma2, cfg, seed, sample_id = args
    return _estimate_one(model, x, sigma2, cfg, seed, sample_id)


def estimate_ll(model: GeneratorModel, xs, sigma2: float, cfg: AISConfig | None = None,
                seed: int = 0, ids=None, workers: int = 1) -> list[LLEstimate]:
    """AIS log-likelihood estimates for each sample in ``xs``.

    ``ids`` default to positions in ``xs`` and key the per-chain random
    streams, so results do not depend on ``workers``.
    """
    from ganaudit._parallel import parallel_map

    cfg = cfg or AISConfig()
    xs = list(np.asarray(xs, dtype=np.float64)) if not isinstance(xs, list) else xs
    if not xs:
        raise ValueError("no samples given")
    ids = list(range(len(xs))) if ids is None else list(ids)
    jobs = [(model, x, sigma2, cfg, seed, i) for x, i in zip(xs, ids)]
    return parallel_map(_estimate_job, jobs, workers)


def run_hmc(value_and_grad: Callable, z0, n_samples: int, cfg: AISConfig | None = None,
            seed: int = 0, adapt: bool = True):
    """Adaptive HMC on a fixed target, one sampled chain.

    Returns ``(samples, accepted, step_sizes)``. When ``adapt`` is set the
    step size follows :func:`adapt_step_size` driven by a separate pilot chain
    started at the same point, so the sampled chain never tunes on its own
    history (which would bias its stationary distribution).
    """
    cfg = cfg or AISConfig()
    rng = derive_rng(seed, AIS_STREAM, 0, 0)
    pilot = derive_rng(seed, AIS_PILOT_STREAM, 0, 0)
    z = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    if z.shape[0] != 1:
        raise ValueError("run_hmc takes a single starting point")
    d = z.shape[1]
    z = np.repeat(z, 2, axis=0)
    momenta = np.stack([rng.standard_normal((n_samples, d)), pilot.standard_normal((n_samples, d))], axis=1)
    uniforms = np.stack([rng.random(n_samples), pilot.random(n_samples)], axis=1)
    out = np.empty((n_samples, d))
    accepted = np.empty(n_samples, dtype=bool)
    steps = np.empty(n_samples)
    step, avg = cfg.step_size, cfg.target_accept
    for i in range(n_samples):
        res = _hmc_transition(z, value_and_grad, step, momenta[i], uniforms[i], cfg.leapfrog_steps)
        z = res.z
        out[i] = z[0]
        accepted[i] = res.accepted[0]
        steps[i] = step
        if adapt:
            step, avg = adapt_step_size(step, avg, bool(res.accepted[1]), cfg.smoothing, cfg.target_accept)
    return out, accepted, steps
