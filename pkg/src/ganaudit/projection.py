"""Latent inversion: project a sample onto a decoder's manifold.

Each restart starts from the decoded prior sample nearest to the target (out
of ``init_pool`` candidates) and runs Adam on ``||G(z) - x||^2`` under a cosine
learning-rate decay. The best iterate over all restarts wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ganaudit._rng import PROJECT_STREAM, derive_rng
from ganaudit.autodiff import NonFiniteError, ShapeError, forward_eval, linearize
from ganaudit.models import GeneratorModel

logger = logging.getLogger(__name__)


class ProjectionError(RuntimeError):
    """Every restart diverged."""


@dataclass(frozen=True)
class InversionConfig:
    iterations: int = 750
    restarts: int = 4
    init_pool: int = 500
    lr0: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1 or self.restarts < 1 or self.init_pool < 1:
            raise ValueError("iterations, restarts and init_pool must all be >= 1")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ProjectionResult:
    z_star: np.ndarray
    reconstruction: np.ndarray
    error: float
    traces: list  # one array of per-iteration l2 errors per restart (None if discarded)
    winner: int


def cosine_lr(t: int, total: int, lr0: float) -> float:
    """``lr0 * (1 + cos(pi t / T)) / 2``."""
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * t / total))


def _nearest_latent(model, x, pool: int, rng) -> np.ndarray:
    zs = model.prior.sample(pool, rng)
    xs = forward_eval(model, zs).reshape(pool, -1)
    d2 = np.sum((xs - x.reshape(1, -1)) ** 2, axis=1)
    return zs[int(np.argmin(d2))]


def _adam(model, x, z, cfg: InversionConfig):
    """Returns (best_z, best_err, trace)."""
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    trace = np.empty(cfg.iterations + 1)
    best_z, best_err = z.copy(), math.inf
    for t in range(cfg.iterations + 1):
        g, pull = linearize(model, z)
        r = g - x
        err = math.sqrt(float(np.sum(r * r)))
        trace[t] = err
        if err < best_err:
            best_z, best_err = z.copy(), err
        if t == cfg.iterations:
            break
        grad = pull(2.0 * r)
        m = cfg.beta1 * m + (1 - cfg.beta1) * grad
        v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
        mhat = m / (1 - cfg.beta1 ** (t + 1))
        vhat = v / (1 - cfg.beta2 ** (t + 1))
        z = z - cosine_lr(t, cfg.iterations, cfg.lr0) * mhat / (np.sqrt(vhat) + cfg.eps)
        if not np.all(np.isfinite(z)):
            raise NonFiniteError("latent became non-finite")
    return best_z, best_err, trace


def project(model: GeneratorModel, x, cfg: InversionConfig | None = None, seed: int = 0,
            sample_id: int = 0, init=None) -> ProjectionResult:
    """Approximately solve ``argmin_z ||G(z) - x||``.

    ``init`` pins the starting latent of every restart (skipping the
    nearest-sample search). Restart ``r`` draws from a stream keyed on
    ``(seed, sample_id, r)``.
    """
    cfg = cfg or InversionConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.output_shape:
        raise ShapeError(f"sample shape {x.shape} != model output shape {model.output_shape}")
    best = None
    traces: list = []
    for r in range(cfg.restarts):
        rng = derive_rng(seed, PROJECT_STREAM, sample_id, r)
        try:
            z0 = (np.array(init, dtype=np.float64) if init is not None
                  else _nearest_latent(model, x, cfg.init_pool, rng))
            z, err, trace = _adam(model, x, z0, cfg)
        except NonFiniteError as exc:
            logger.warning("sample %d restart %d discarded: %s", sample_id, r, exc)
            traces.append(None)
            continue
        traces.append(trace)
        if best is None or err < best[1]:
            best = (z, err, r)
    if best is None:
        raise ProjectionError(f"all {cfg.restarts} restarts diverged for sample {sample_id}")
    z, _, winner = best
    recon = forward_eval(model, z)
    # recompute so the reported error is exactly that of z_star
    error = float(np.sqrt(np.sum((recon - x) ** 2)))
    return ProjectionResult(z, recon, error, traces, winner)


def _project_job(args):
    model, x, cfg, seed, sid = args
    return project(model, x, cfg, seed, sid)


def recon_error_set(model: GeneratorModel, xs, cfg: InversionConfig | None = None, seed: int = 0,
                    ids=None, workers: int = 1) -> list[tuple[int, float]]:
    """Projection error per sample, as ``(id, error)`` pairs in input order."""
    return [(i, r.error) for i, r in zip(*project_many(model, xs, cfg, seed, ids, workers))]


def project_many(model, xs, cfg=None, seed=0, ids=None, workers=1):
    """Project every sample; returns ``(ids, results)``."""
    from ganaudit._parallel import parallel_map

    xs = list(np.asarray(xs, dtype=np.float64))
    if not xs:
        raise ValueError("no samples given")
    ids = list(range(len(xs))) if ids is None else list(ids)
    cfg = cfg or InversionConfig()
    jobs = [(model, x, cfg, seed, i) for x, i in zip(xs, ids)]
    return ids, parallel_map(_project_job, jobs, workers)
