"""Generative classification and outlier scoring, with a nearest-neighbour baseline and ROC AUC."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from ganaudit.ais import AISConfig, estimate_ll
from ganaudit.density import exact_loglik
from ganaudit.models import GeneratorModel
from ganaudit.projection import InversionConfig, project

logger = logging.getLogger(__name__)

Distance = Callable[[np.ndarray, np.ndarray], float]


def l2_distance(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.sqrt(np.sum(d * d)))


# Perceptual metrics plug in here by name; only l2 ships.
DISTANCES: dict[str, Distance] = {"l2": l2_distance}


def get_distance(distance: str | Distance) -> Distance:
    if callable(distance):
        return distance
    try:
        return DISTANCES[distance]
    except KeyError:
        raise ValueError(f"unknown distance {distance!r}; known: {sorted(DISTANCES)}") from None


def register_distance(name: str, fn: Distance) -> None:
    DISTANCES[name] = fn


@dataclass
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    group: str = "train"
    classes: tuple = ()

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.samples) != len(self.labels):
            raise ValueError("samples and labels differ in length")
        if not self.classes:
            self.classes = tuple(sorted(set(self.labels.tolist())))
        elif not set(self.labels.tolist()) <= set(self.classes):
            raise ValueError("labels outside the declared class set")

    def __len__(self):
        return len(self.labels)


@dataclass
class ClassifierReport:
    method: str
    predicted: np.ndarray
    truth: np.ndarray
    confusion: np.ndarray
    scores: np.ndarray | None = None
    ties: list = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.confusion.sum())


def classification_report(truth, predicted, n_classes: int, method: str, scores=None,
                          ties=()) -> ClassifierReport:
    truth = np.asarray(truth, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(confusion, (truth, predicted), 1)
    return ClassifierReport(method, predicted, truth, confusion,
                            None if scores is None else np.asarray(scores), list(ties))


def _pick(scores, better: Callable) -> tuple[int, bool]:
    """Index of the best score; ties go to the lowest index and are flagged."""
    scores = np.asarray(scores, dtype=np.float64)
    best = better(scores)
    winners = np.flatnonzero(scores == scores[best])
    if len(winners) > 1:
        logger.info("tie between classes %s; picking %d", winners.tolist(), winners[0])
    return int(winners[0]), len(winners) > 1


def _check_models(models):
    if len(models) < 2:
        raise ValueError("need at least two class models")
    shapes = {m.output_shape for m in models}
    if len(shapes) != 1:
        raise ValueError("class models disagree on output shape")


def class_logliks(models: Sequence[GeneratorModel], x, sigma2: float, cfg: AISConfig | None = None,
                  seed: int = 0, sample_id: int = 0, exact: bool = False) -> np.ndarray:
    """Per-class log-likelihoods of ``x``, by AIS or (``exact``) in closed form."""
    if exact:
        return np.array([float(exact_loglik(m, sigma2, x)) for m in models])
    return np.array([estimate_ll(m, [np.asarray(x, dtype=np.float64)], sigma2, cfg, seed, ids=[sample_id])[0].ll
                     for m in models])


def classify_by_ll(models: Sequence[GeneratorModel], x, sigma2: float, cfg: AISConfig | None = None,
                   seed: int = 0, sample_id: int = 0, exact: bool = False) -> int:
    """``argmax_c log p_c(x)``; ties break to the lowest class id."""
    _check_models(models)
    return _pick(class_logliks(models, x, sigma2, cfg, seed, sample_id, exact), np.argmax)[0]


def class_projection_distances(models, x, cfg: InversionConfig | None = None,
                               distance: str | Distance = "l2", seed: int = 0,
                               sample_id: int = 0) -> np.ndarray:
    dist = get_distance(distance)
    out = []
    for m in models:
        res = project(m, x, cfg, seed, sample_id)
        out.append(dist(np.asarray(x), res.reconstruction))
    return np.array(out)


def classify_by_projection(models: Sequence[GeneratorModel], x, cfg: InversionConfig | None = None,
                           distance: str | Distance = "l2", seed: int = 0, sample_id: int = 0) -> int:
    """Class whose manifold projection lands closest to ``x``.

    Projection always optimises l2; ``distance`` only scores the result.
    """
    _check_models(models)
    d = class_projection_distances(models, x, cfg, distance, seed, sample_id)
    return _pick(d, np.argmin)[0]


def _distances_to(samples, x, distance) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) == 0:
        raise ValueError("empty training set")
    if distance == "l2" or distance is l2_distance:
        diff = samples.reshape(len(samples), -1) - np.asarray(x, dtype=np.float64).reshape(1, -1)
        return np.sqrt(np.sum(diff * diff, axis=1))
    dist = get_distance(distance)
    return np.array([dist(s, x) for s in samples])


def knn1_classify(train: LabeledDataset, x, distance: str | Distance = "l2") -> int:
    """Label of the nearest training sample; ties go to the lowest index."""
    d = _distances_to(train.samples, x, distance)
    return int(train.labels[int(np.argmin(d))])


def knn1_outlier_score(train, x, distance: str | Distance = "l2") -> float:
    """Distance to the nearest training sample."""
    samples = train.samples if isinstance(train, LabeledDataset) else train
    return float(np.min(_distances_to(samples, x, distance)))


def roc_auc(inlier_scores, outlier_scores) -> float:
    """AUC with mid-rank ties: ``P(out > in) + P(out == in) / 2``.

    Higher scores mean more outlying.
    """
    a = np.asarray(inlier_scores, dtype=np.float64).ravel()
    b = np.asarray(outlier_scores, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("roc_auc needs non-empty inlier and outlier scores")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[a.size:].sum() - b.size * (b.size + 1) / 2
    return float(u / (a.size * b.size))


def ll_outlier_scores(estimates) -> np.ndarray:
    """Negative log-likelihood, so that higher means more outlying."""
    return -np.array([e.ll if hasattr(e, "ll") else e for e in estimates], dtype=np.float64)
