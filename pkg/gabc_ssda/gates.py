"""Pairwise-label graph between unlabeled and labeled samples, refined by
confidence-based node removal (CUNR) and prediction-dissimilarity edge
pruning (PDEP).

For an unlabeled sample i and a labeled sample j:

    a_ij  = [argmax p_i == y_j]
    g_i   = [max p_i > tau]
    g~_ij = (not a_ij) or [p_i . p_j > kappa]
    g_i^j = g_i * g~_ij

The affinity matrix is never stored; gates are evaluated per mini-batch grid.
"""
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import torch

from gabc_ssda.errors import InputError
from gabc_ssda.model import predicted_label

Distribution = Union[torch.Tensor, Sequence[float]]

SIMPLEX_TOLERANCE = 1e-6


@dataclass(frozen=True)
class GateThresholds:
    tau: float = 0.95
    kappa: float = 0.20

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise InputError(f"tau must lie in [0, 1], got {self.tau}")


class PairGate(NamedTuple):
    similarity: int
    node: int
    edge: int
    combined: int


@dataclass
class PairGates:
    """Gates of an n x m pair grid (unlabeled rows, labeled columns)."""

    similarity: torch.Tensor  # a_ij, (n, m) bool
    node: torch.Tensor  # g_i, (n,) bool
    edge: torch.Tensor  # g~_ij, (n, m) bool
    combined: torch.Tensor  # g_i^j, (n, m) bool
    dots: torch.Tensor  # p_i . p_j, (n, m)

    def __getitem__(self, index) -> PairGate:
        i, j = index
        return PairGate(
            int(self.similarity[i, j]),
            int(self.node[i]),
            int(self.edge[i, j]),
            int(self.combined[i, j]),
        )

    @property
    def shape(self):
        return tuple(self.combined.shape)


def _distribution(p: Distribution) -> torch.Tensor:
    p = torch.as_tensor(p, dtype=torch.float64)
    if p.dim() != 1 or p.numel() < 2:
        raise InputError("A prediction distribution is a vector of at least 2 entries")
    if torch.isnan(p).any():
        raise InputError("Prediction distribution contains NaN")
    if (p < 0).any() or abs(float(p.sum()) - 1.0) > SIMPLEX_TOLERANCE:
        raise InputError("Prediction distribution is not on the probability simplex")
    return p


def pairwise_label_similarity(p_unlabeled: Distribution, y_labeled: int) -> int:
    p = _distribution(p_unlabeled)
    if not 0 <= int(y_labeled) < p.numel():
        raise InputError(f"Label {y_labeled} outside [0, {p.numel()})")
    return int(int(predicted_label(p)) == int(y_labeled))


def cunr_gate(p_unlabeled: Distribution, tau: float) -> int:
    p = _distribution(p_unlabeled)
    if not 0.0 <= tau <= 1.0:
        raise InputError(f"tau must lie in [0, 1], got {tau}")
    return int(float(p.max()) > tau)


def pdep_gate(
    a_ij: int, p_i: Distribution, p_j: Distribution, kappa: float
) -> int:
    p_i = _distribution(p_i)
    p_j = _distribution(p_j)
    if p_i.numel() != p_j.numel():
        raise InputError(
            f"Distributions have different lengths ({p_i.numel()} vs {p_j.numel()})"
        )
    return int((not a_ij) or float((p_i * p_j).sum()) > kappa)


def combined_gate(g_i: int, g_tilde_ij: int) -> int:
    return int(g_i) * int(g_tilde_ij)


def batch_gates(
    p_unlabeled: torch.Tensor,
    p_labeled: torch.Tensor,
    labels: torch.Tensor,
    thresholds: GateThresholds,
    use_cunr: bool = True,
    use_pdep: bool = True,
) -> PairGates:
    """Evaluate all four gates over the grid of `p_unlabeled` x `p_labeled`.

    With `use_cunr` off every node is kept; with `use_pdep` off every edge is
    kept. Inputs are treated as constants (no gradient flows through gates).
    """
    p_unlabeled = p_unlabeled.detach()
    p_labeled = p_labeled.detach()
    if p_unlabeled.dim() != 2 or p_labeled.dim() != 2:
        raise InputError("batch_gates expects (n, K) and (m, K) prediction batches")
    if p_unlabeled.shape[0] == 0 or p_labeled.shape[0] == 0:
        raise InputError("batch_gates got an empty batch")
    if p_unlabeled.shape[1] != p_labeled.shape[1]:
        raise InputError("Unlabeled and labeled predictions have different K")
    if labels.shape != (p_labeled.shape[0],):
        raise InputError("One label is needed per labeled prediction")
    num_classes = p_unlabeled.shape[1]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise InputError(f"Labels outside [0, {num_classes})")
    if torch.isnan(p_unlabeled).any() or torch.isnan(p_labeled).any():
        raise InputError("batch_gates got NaN predictions")

    similarity = predicted_label(p_unlabeled)[:, None] == labels[None, :]
    # Multiply-then-sum: the same arithmetic as the scalar pdep_gate path
    dots = (p_unlabeled[:, None, :] * p_labeled[None, :, :]).sum(dim=-1)
    if use_cunr:
        node = p_unlabeled.max(dim=1).values > thresholds.tau
    else:
        node = torch.ones(p_unlabeled.shape[0], dtype=torch.bool)
    if use_pdep:
        edge = ~similarity | (dots > thresholds.kappa)
    else:
        edge = torch.ones_like(similarity)
    combined = node[:, None] & edge
    return PairGates(similarity, node, edge, combined, dots)
