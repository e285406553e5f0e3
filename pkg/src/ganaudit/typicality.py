"""Typical-set membership test for groups of samples.

A group of ``N`` samples is typical for a model when its average
log-likelihood lies within ``eps`` of minus the model entropy. The entropy is
estimated from freshly generated samples and ``eps`` is calibrated by
bootstrapping group means from the same pool of generated log-likelihoods.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ganaudit._rng import BOOTSTRAP_STREAM, TYPICAL_STREAM, derive_rng
from ganaudit.ais import AISConfig, estimate_ll
from ganaudit.autodiff import forward_eval
from ganaudit.density import bits_per_dim, exact_loglik
from ganaudit.models import GeneratorModel

DEFAULT_GROUP_SIZE = 50
DEFAULT_LEVEL = 0.95
DEFAULT_RESAMPLES = 10_000

EXACT = "exact"


@dataclass
class EntropyEstimate:
    value: float
    lls: np.ndarray  # log-likelihoods of the generated pool, in nats
    samples: np.ndarray
    config: object  # the AISConfig used, or EXACT

    @property
    def stderr(self) -> float:
        return float(np.std(self.lls, ddof=1) / math.sqrt(len(self.lls)))


@dataclass
class GroupEntry:
    name: str
    n: int
    mean_ll: float
    deviation: float  # |mean_ll + H|
    margin: float
    member: bool
    mean_bpd: float = float("nan")


@dataclass
class TypicalityReport:
    entropy: float
    epsilon: float
    group_size: int
    level: float
    resamples: int
    groups: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["groups"] = [asdict(g) for g in self.groups]
        return out

    def group(self, name: str) -> GroupEntry:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)


def group_lls(model: GeneratorModel, xs, sigma2: float, config=None, seed: int = 0,
              ids=None, workers: int = 1) -> np.ndarray:
    """Log-likelihood of each sample, by AIS or (``config == "exact"``) in closed form."""
    xs = np.asarray(xs, dtype=np.float64)
    if isinstance(config, str):
        if config != EXACT:
            raise ValueError(f"unknown likelihood estimator {config!r}")
        return np.array([float(exact_loglik(model, sigma2, x)) for x in xs])
    ests = estimate_ll(model, xs, sigma2, config, seed, ids=ids, workers=workers)
    return np.array([e.ll for e in ests])


def generate(model: GeneratorModel, sigma2: float, n: int, seed: int) -> np.ndarray:
    rng = derive_rng(seed, TYPICAL_STREAM)
    z = model.prior.sample(n, rng)
    x = forward_eval(model, z)
    return x + math.sqrt(sigma2) * rng.standard_normal(x.shape)


def estimate_entropy(model: GeneratorModel, sigma2: float, n: int, config=None, seed: int = 0,
                     workers: int = 1) -> EntropyEstimate:
    """``H = -mean log p(x_i)`` over ``n`` samples drawn from the model."""
    if n < 2:
        raise ValueError("entropy estimation needs n >= 2")
    config = AISConfig() if config is None else config
    xs = generate(model, sigma2, n, seed)
    lls = group_lls(model, xs, sigma2, config, seed, workers=workers)
    return EntropyEstimate(float(-np.mean(lls)), lls, xs, config)


def bootstrap_epsilon(generated_lls, group_size: int = DEFAULT_GROUP_SIZE, level: float = DEFAULT_LEVEL,
                      resamples: int = DEFAULT_RESAMPLES, seed: int = 0) -> float:
    """Level-quantile of ``|mean(resample) - mean(pool)|`` over size-N resamples."""
    lls = np.asarray(generated_lls, dtype=np.float64)
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    if len(lls) < group_size:
        raise ValueError(f"need at least {group_size} generated log-likelihoods, got {len(lls)}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    rng = derive_rng(seed, BOOTSTRAP_STREAM)
    # shifting by one pool member is exact for a constant pool and keeps sums small
    lls = lls - lls[0]
    idx = rng.integers(0, len(lls), size=(resamples, group_size))
    dev = np.abs(lls[idx].mean(axis=1) - lls.mean())
    return float(np.quantile(dev, level))


def typicality_test(group, entropy: float, epsilon: float) -> tuple[bool, float]:
    """Returns ``(member, margin)`` with ``margin = |mean + H| - eps``."""
    lls = np.asarray(group, dtype=np.float64)
    if lls.size == 0:
        raise ValueError("empty group")
    margin = abs(float(lls.mean()) + entropy) - epsilon
    return bool(margin <= 0), margin


def assemble_report(entropy: EntropyEstimate, groups: dict, config, group_size: int = DEFAULT_GROUP_SIZE,
                    level: float = DEFAULT_LEVEL, resamples: int = DEFAULT_RESAMPLES, seed: int = 0,
                    dim: int | None = None) -> TypicalityReport:
    """Build a report from precomputed group log-likelihoods.

    ``config`` names the estimator behind ``groups``; it must equal the one
    behind ``entropy`` so that estimator bias cancels. The pool itself is
    reported as the ``generated`` group.
    """
    if config != entropy.config:
        raise ValueError("group log-likelihoods and entropy must come from the same estimator config")
    eps = bootstrap_epsilon(entropy.lls, group_size, level, resamples, seed)
    report = TypicalityReport(entropy.value, eps, group_size, level, resamples)
    for name, lls in {"generated": entropy.lls, **groups}.items():
        lls = np.asarray(lls, dtype=np.float64)
        member, margin = typicality_test(lls, entropy.value, eps)
        mean = float(lls.mean())
        bpd = float(bits_per_dim(mean, dim)) if dim else float("nan")
        report.groups.append(GroupEntry(name, int(lls.size), mean, abs(mean + entropy.value),
                                        margin, member, bpd))
    return report


def typicality_report(model: GeneratorModel, sigma2: float, groups: dict, config=None, pool: int = 1000,
                      group_size: int = DEFAULT_GROUP_SIZE, level: float = DEFAULT_LEVEL,
                      resamples: int = DEFAULT_RESAMPLES, seed: int = 0, workers: int = 1) -> TypicalityReport:
    """Estimate entropy, calibrate eps and test every named group of samples.

    A single estimator config is used for the pool and for all groups.
    """
    config = AISConfig() if config is None else config
    ent = estimate_entropy(model, sigma2, pool, config, seed, workers)
    lls = {}
    for k, (name, xs) in enumerate(groups.items()):
        if name == "generated":
            raise ValueError("'generated' is reserved for the model's own pool")
        # offset ids so group chains never reuse the pool's streams
        ids = [(k + 1) * 10_000_000 + i for i in range(len(xs))]
        lls[name] = group_lls(model, xs, sigma2, config, seed, ids=ids, workers=workers)
    return assemble_report(ent, lls, config, group_size, level, resamples, seed, dim=model.output_dim)
