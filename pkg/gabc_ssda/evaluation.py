"""Accuracy, Class-wise Similarity Scores and gate-ratio statistics.

Everything here uses clean predictions of a quiesced model; held-out labels of
unlabeled target samples are read only to group CSS rows.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import pandas as pd
import torch

from gabc_ssda.data import LabeledSet, UnlabeledSet
from gabc_ssda.errors import InputError
from gabc_ssda.gates import GateThresholds, batch_gates
from gabc_ssda.model import GabcNet, predicted_label

logger = logging.getLogger(__name__)


@dataclass
class CssMatrix:
    """K x K scores; row c = unlabeled target class, column c' = labeled class.

    Entries whose class is missing from either side are NaN and flagged in
    `present`.
    """

    scores: np.ndarray
    present: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.scores.shape[0]

    def diagonal_mean(self) -> float:
        diagonal = np.diag(self.scores)
        if not np.isfinite(diagonal).any():
            return float("nan")
        return float(np.nanmean(diagonal))

    def off_diagonal_mean(self) -> float:
        mask = ~np.eye(self.num_classes, dtype=bool) & self.present
        return float(self.scores[mask].mean()) if mask.any() else float("nan")

    def to_frame(self) -> pd.DataFrame:
        labels = [str(c) for c in range(self.num_classes)]
        return pd.DataFrame(self.scores, index=labels, columns=labels)

    @classmethod
    def read_csv(cls, path: str) -> "CssMatrix":
        """Read a matrix written with `to_frame().to_csv(path)`."""
        frame = pd.read_csv(path, index_col=0, float_precision="round_trip")
        scores = frame.to_numpy(dtype=np.float64)
        return cls(scores=scores, present=~np.isnan(scores))


@dataclass
class GateRatioStats:
    node_ratio: float  # fraction of unlabeled samples with g_i = 1
    combined_ratio: float  # fraction of pairs with g_i^j = 1
    similar_high: float  # a_ij = 1, dot > kappa
    similar_low: float  # a_ij = 1, dot <= kappa
    dissimilar_high: float  # a_ij = 0, dot > kappa
    dissimilar_low: float  # a_ij = 0, dot <= kappa

    def as_dict(self):
        return asdict(self)


def _predict(model: GabcNet, features: torch.Tensor) -> torch.Tensor:
    with torch.no_grad():
        return model(features)


def _concat(pools: Sequence[LabeledSet]):
    if not pools:
        raise InputError("At least one labeled pool is required")
    features = torch.cat([pool.features for pool in pools])
    labels = torch.cat([pool.labels for pool in pools])
    return features, labels


def accuracy_from_predictions(p: torch.Tensor, labels: torch.Tensor) -> float:
    if p.shape[0] == 0:
        raise InputError("Accuracy is undefined on an empty set")
    return float((predicted_label(p) == labels).double().mean())


def target_accuracy(model: GabcNet, test: LabeledSet) -> float:
    if len(test) == 0:
        raise InputError("Accuracy is undefined on an empty test set")
    return accuracy_from_predictions(_predict(model, test.features), test.labels)


def css_from_predictions(
    p_unlabeled: torch.Tensor,
    unlabeled_labels: torch.Tensor,
    p_labeled: torch.Tensor,
    labeled_labels: torch.Tensor,
    num_classes: int,
) -> CssMatrix:
    dots = p_unlabeled @ p_labeled.T
    rows = torch.nn.functional.one_hot(unlabeled_labels, num_classes).to(dots.dtype)
    columns = torch.nn.functional.one_hot(labeled_labels, num_classes).to(dots.dtype)
    sums = (rows.T @ dots @ columns).numpy()
    counts = np.outer(rows.sum(dim=0).numpy(), columns.sum(dim=0).numpy())
    present = counts > 0
    scores = np.full((num_classes, num_classes), np.nan)
    scores[present] = sums[present] / counts[present]
    return CssMatrix(scores=scores, present=present)


def css_matrix(
    model: GabcNet, unlabeled: UnlabeledSet, labeled_pools: Sequence[LabeledSet]
) -> CssMatrix:
    """Mean prediction dot product between unlabeled class c and labeled class c'."""
    if unlabeled.eval_labels is None:
        raise InputError("css_matrix needs held-out labels for the unlabeled pool")
    features, labels = _concat(labeled_pools)
    return css_from_predictions(
        _predict(model, unlabeled.features),
        unlabeled.eval_labels,
        _predict(model, features),
        labels,
        model.num_classes,
    )


def gate_stats_from_predictions(
    p_unlabeled: torch.Tensor,
    p_labeled: torch.Tensor,
    labeled_labels: torch.Tensor,
    thresholds: GateThresholds,
) -> GateRatioStats:
    gates = batch_gates(p_unlabeled, p_labeled, labeled_labels, thresholds)
    high = gates.dots > thresholds.kappa
    similar = gates.similarity

    def fraction(mask):
        return float(mask.double().mean())

    return GateRatioStats(
        node_ratio=fraction(gates.node),
        combined_ratio=fraction(gates.combined),
        similar_high=fraction(similar & high),
        similar_low=fraction(similar & ~high),
        dissimilar_high=fraction(~similar & high),
        dissimilar_low=fraction(~similar & ~high),
    )


def gate_ratio_stats(
    model: GabcNet,
    unlabeled: UnlabeledSet,
    labeled_pools: Sequence[LabeledSet],
    thresholds: GateThresholds,
) -> GateRatioStats:
    """Gate fractions over the full unlabeled x labeled grid."""
    features, labels = _concat(labeled_pools)
    return gate_stats_from_predictions(
        _predict(model, unlabeled.features),
        _predict(model, features),
        labels,
        thresholds,
    )
