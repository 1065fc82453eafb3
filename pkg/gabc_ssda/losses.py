"""Loss functions of the G-ABC objective.

    overall = ce + lab + alpha * con + beta * (wdbc + adbc)

Every function takes prediction distributions (not logits) and returns a
scalar tensor, so gradients flow back to the model through PyTorch autograd.
All logarithm arguments are clamped below at EPS.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Union

import torch

from gabc_ssda.errors import InputError, NumericError
from gabc_ssda.gates import PairGates

logger = logging.getLogger(__name__)

EPS = 1e-7

Scalar = Union[torch.Tensor, float]


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.03
    beta: float = 25.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise InputError("Loss weights alpha and beta must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    lab: float
    con: float
    wdbc: float
    adbc: float
    abc: float
    overall: float

    @classmethod
    def from_components(
        cls,
        ce: Scalar,
        lab: Scalar,
        con: Scalar,
        wdbc: Scalar,
        adbc: Scalar,
        weights: LossWeights,
    ) -> "LossBreakdown":
        values = {
            "ce": _item(ce),
            "lab": _item(lab),
            "con": _item(con),
            "wdbc": _item(wdbc),
            "adbc": _item(adbc),
        }
        values["abc"] = values["wdbc"] + values["adbc"]
        values["overall"] = overall_loss(values, weights)
        return cls(**values)

    def as_dict(self):
        return asdict(self)


def _item(value: Scalar) -> float:
    if isinstance(value, torch.Tensor):
        return value.detach().item()
    return float(value)


def _check_nan(*tensors: torch.Tensor) -> None:
    for tensor in tensors:
        if torch.isnan(tensor).any():
            raise InputError("Loss input contains NaN")


def abc_pair_loss(
    p_i: torch.Tensor,
    p_j: torch.Tensor,
    s_ij: Union[torch.Tensor, int],
    positive: bool = True,
    negative: bool = True,
) -> torch.Tensor:
    """Binary cross-entropy on the dot product of two distributions.

    Broadcasts over leading axes. `positive`/`negative` drop the s*log(dot)
    and (1-s)*log(1-dot) terms respectively.
    """
    p_i = torch.as_tensor(p_i, dtype=torch.float64)
    p_j = torch.as_tensor(p_j, dtype=torch.float64)
    _check_nan(p_i, p_j)
    dot = (p_i * p_j).sum(dim=-1).clamp(EPS, 1.0 - EPS)
    s = torch.as_tensor(s_ij, dtype=dot.dtype)
    loss = torch.zeros_like(dot)
    if positive:
        loss = loss - s * torch.log(dot)
    if negative:
        loss = loss - (1.0 - s) * torch.log(1.0 - dot)
    return loss


def _betweenness_loss(
    p_unlabeled: torch.Tensor,
    p_labeled: torch.Tensor,
    gates: PairGates,
    positive: bool,
    negative: bool,
    name: str,
) -> torch.Tensor:
    if p_unlabeled.shape[0] == 0:
        logger.warning("%s: empty unlabeled batch, no contribution", name)
        return p_labeled.new_zeros(())
    expected = (p_unlabeled.shape[0], p_labeled.shape[0])
    if gates.shape != expected:
        raise InputError(f"{name}: gates have shape {gates.shape}, expected {expected}")
    pair_loss = abc_pair_loss(
        p_unlabeled[:, None, :],
        p_labeled[None, :, :],
        gates.similarity,
        positive=positive,
        negative=negative,
    )
    # Mean over unlabeled rows of the mean over labeled columns
    return (gates.combined.to(pair_loss.dtype) * pair_loss).mean()


def wdbc_loss(
    p_unlabeled: torch.Tensor,
    p_labeled_target: torch.Tensor,
    gates: PairGates,
    p_pseudo: Optional[torch.Tensor] = None,
    positive: bool = True,
    negative: bool = True,
) -> torch.Tensor:
    """Within-domain betweenness clustering.

    Args:
        p_unlabeled: predictions of the (augmented) unlabeled batch, (n, K).

        p_labeled_target: clean predictions of the labeled target batch.

        gates: gates over the unlabeled batch and the labeled pool, where the
            pool is the labeled target batch followed by the pseudo batch.

        p_pseudo: clean predictions of the pseudo-labeled batch, if any.
    """
    pool = p_labeled_target
    if p_pseudo is not None and p_pseudo.shape[0] > 0:
        pool = torch.cat([p_labeled_target, p_pseudo])
    return _betweenness_loss(p_unlabeled, pool, gates, positive, negative, "wdbc")


def adbc_loss(
    p_unlabeled: torch.Tensor,
    p_source: torch.Tensor,
    gates: PairGates,
    positive: bool = True,
    negative: bool = True,
) -> torch.Tensor:
    """Across-domain betweenness clustering against the labeled source batch."""
    return _betweenness_loss(p_unlabeled, p_source, gates, positive, negative, "adbc")


def sharpen(p: torch.Tensor, t_prime: float) -> torch.Tensor:
    """Raise entries to 1/t_prime and renormalize over the last axis."""
    if not 0.0 < t_prime <= 1.0:
        raise InputError(f"Sharpening temperature must lie in (0, 1], got {t_prime}")
    p = torch.as_tensor(p, dtype=torch.float64)
    powered = p ** (1.0 / t_prime)
    return powered / powered.sum(dim=-1, keepdim=True)


def consistency_kl_loss(
    p_clean: torch.Tensor, p_augmented: torch.Tensor, t_prime: float
) -> torch.Tensor:
    """Mean KL(sharpen(p_clean) || p_augmented); the sharpened target is
    detached."""
    _check_nan(p_clean, p_augmented)
    if p_clean.shape[0] == 0:
        logger.warning("con: empty unlabeled batch, no contribution")
        return p_augmented.new_zeros(())
    target = sharpen(p_clean.detach(), t_prime)
    log_ratio = torch.log(target.clamp_min(EPS)) - torch.log(p_augmented.clamp_min(EPS))
    return (target * log_ratio).sum(dim=-1).mean()


def _nll(p: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if labels.shape != (p.shape[0],):
        raise InputError("One label is needed per prediction")
    if labels.min() < 0 or labels.max() >= p.shape[1]:
        raise InputError(f"Labels outside [0, {p.shape[1]})")
    picked = p.gather(1, labels[:, None]).squeeze(1)
    return -torch.log(picked.clamp_min(EPS)).mean()


def label_consistency_loss(
    p_augmented: torch.Tensor, pseudo_labels: torch.Tensor
) -> torch.Tensor:
    """Cross-entropy of augmented pseudo-labeled predictions against their
    hard pseudo labels."""
    _check_nan(p_augmented)
    if p_augmented.shape[0] == 0:
        logger.warning("lab: empty pseudo-labeled batch, no contribution")
        return p_augmented.new_zeros(())
    return _nll(p_augmented, pseudo_labels)


def supervised_ce(p: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    _check_nan(p)
    if p.shape[0] == 0:
        raise InputError("supervised_ce got an empty labeled batch")
    return _nll(p, labels)


def overall_loss(components: Mapping[str, Scalar], weights: LossWeights) -> Scalar:
    """ce + lab + alpha * con + beta * abc.

    `abc` may be given directly or as `wdbc` and `adbc`.

    Raises:
        NumericError: naming the first non-finite component.
    """
    values = dict(components)
    if "abc" not in values:
        values["abc"] = values["wdbc"] + values["adbc"]
    for name in ("ce", "lab", "con", "wdbc", "adbc", "abc"):
        if name not in values:
            continue
        value = values[name]
        finite = (
            bool(torch.isfinite(value).all())
            if isinstance(value, torch.Tensor)
            else math.isfinite(value)
        )
        if not finite:
            raise NumericError(f"Loss component '{name}' is not finite", where=name)
    return (
        values["ce"]
        + values["lab"]
        + weights.alpha * values["con"]
        + weights.beta * values["abc"]
    )
