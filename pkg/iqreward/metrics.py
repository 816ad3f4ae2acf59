"""Ordinal classification metrics for IQ prediction: UAR, linear κ, Spearman ρ."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
from scipy.stats import spearmanr
from sklearn.metrics import cohen_kappa_score, recall_score

from .errors import UndefinedCorrelationError

logger = logging.getLogger(__name__)

NUM_IQ_CLASSES = 5


class LabelPairs(NamedTuple):
    gold: np.ndarray
    pred: np.ndarray
    num_classes: int


class IqScores(NamedTuple):
    uar: float
    kappa: float
    rho: float


def label_pairs(gold: Sequence[int], pred: Sequence[int], num_classes: int = NUM_IQ_CLASSES) -> LabelPairs:
    """Validate a gold/pred pair of label sequences over classes 1..num_classes."""
    g = np.asarray(gold, dtype=np.int64)
    p = np.asarray(pred, dtype=np.int64)
    if g.ndim != 1 or p.ndim != 1:
        raise ValueError("labels must be flat sequences")
    if g.size == 0:
        raise ValueError("metrics need at least one label pair")
    if g.size != p.size:
        raise ValueError(f"{g.size} gold labels but {p.size} predictions")
    for name, arr in (("gold", g), ("pred", p)):
        if arr.min() < 1 or arr.max() > num_classes:
            raise ValueError(f"{name} labels must lie in [1, {num_classes}]")
    return LabelPairs(g, p, num_classes)


def uar(gold: Sequence[int], pred: Sequence[int], num_classes: int = NUM_IQ_CLASSES) -> float:
    """Unweighted average recall over the classes present in ``gold``."""
    pairs = label_pairs(gold, pred, num_classes)
    present = np.unique(pairs.gold)
    return float(recall_score(pairs.gold, pairs.pred, labels=present, average="macro", zero_division=0))


def weighted_kappa_linear(gold: Sequence[int], pred: Sequence[int], num_classes: int = NUM_IQ_CLASSES) -> float:
    """Cohen's κ with weights |i - j| / (C - 1).

    When both sides are the same single class the expected disagreement is
    zero; κ is then defined as 1.
    """
    pairs = label_pairs(gold, pred, num_classes)
    if np.all(pairs.gold == pairs.gold[0]) and np.all(pairs.pred == pairs.gold[0]):
        return 1.0
    labels = list(range(1, num_classes + 1))
    return float(cohen_kappa_score(pairs.gold, pairs.pred, labels=labels, weights="linear"))


def spearman_rho(gold: Sequence[int], pred: Sequence[int], num_classes: int = NUM_IQ_CLASSES) -> float:
    """Pearson correlation of mean ranks."""
    pairs = label_pairs(gold, pred, num_classes)
    for name, arr in (("gold", pairs.gold), ("pred", pairs.pred)):
        if np.all(arr == arr[0]):
            raise UndefinedCorrelationError(f"Spearman rho undefined: {name} sequence is constant")
    return float(spearmanr(pairs.gold, pairs.pred)[0])


def score_predictions(gold: Sequence[int], pred: Sequence[int], num_classes: int = NUM_IQ_CLASSES) -> IqScores:
    """UAR, κ and ρ together; ρ is NaN (with a warning) when undefined."""
    try:
        rho = spearman_rho(gold, pred, num_classes)
    except UndefinedCorrelationError as exc:
        logger.warning("%s; reporting NaN", exc)
        rho = math.nan
    return IqScores(
        uar=uar(gold, pred, num_classes),
        kappa=weighted_kappa_linear(gold, pred, num_classes),
        rho=rho,
    )
