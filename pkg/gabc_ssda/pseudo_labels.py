import logging
from dataclasses import dataclass
from typing import Optional

import pandas as pd
import torch

from gabc_ssda.data import UnlabeledSet
from gabc_ssda.errors import InputError
from gabc_ssda.model import GabcNet, predicted_label

logger = logging.getLogger(__name__)


@dataclass
class PseudoLabeledSet:
    """Confident members of D_u with their argmax labels.

    `indices` point into the unlabeled pool the set was selected from;
    selected samples stay in that pool.
    """

    indices: torch.Tensor
    labels: torch.Tensor
    confidences: torch.Tensor

    def __len__(self) -> int:
        return self.indices.shape[0]

    @classmethod
    def empty(cls) -> "PseudoLabeledSet":
        return cls(
            torch.empty(0, dtype=torch.long),
            torch.empty(0, dtype=torch.long),
            torch.empty(0, dtype=torch.float64),
        )

    def accuracy(self, eval_labels: Optional[torch.Tensor]) -> float:
        """Fraction of correct pseudo labels; NaN if unknown or empty."""
        if eval_labels is None or len(self) == 0:
            return float("nan")
        return float((eval_labels[self.indices] == self.labels).double().mean())

    def to_frame(self, eval_labels: Optional[torch.Tensor] = None) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "sample_id": self.indices.numpy(),
                "pseudo_label": self.labels.numpy(),
                "confidence": self.confidences.numpy(),
            }
        )
        if eval_labels is not None:
            frame["true_label"] = eval_labels[self.indices].numpy()
        return frame


def select_from_predictions(p: torch.Tensor, tau_prime: float) -> PseudoLabeledSet:
    """Keep every row whose maximal probability is strictly above tau_prime."""
    if not 0.0 <= tau_prime <= 1.0:
        raise InputError(f"tau_prime must lie in [0, 1], got {tau_prime}")
    p = p.detach()
    if p.shape[0] == 0:
        return PseudoLabeledSet.empty()
    confidences = p.max(dim=1).values
    selected = torch.nonzero(confidences > tau_prime).reshape(-1)
    return PseudoLabeledSet(
        indices=selected,
        labels=predicted_label(p[selected]),
        confidences=confidences[selected],
    )


def select_pseudo_labels(
    model: GabcNet, unlabeled: UnlabeledSet, tau_prime: float
) -> PseudoLabeledSet:
    """Build D_pu from clean predictions of the current model."""
    with torch.no_grad():
        p = model(unlabeled.features)
    selected = select_from_predictions(p, tau_prime)
    logger.debug(
        "Selected %d of %d unlabeled samples as pseudo-labeled (tau'=%s)",
        len(selected),
        len(unlabeled),
        tau_prime,
    )
    return selected


def dump_pseudo_labels(
    pseudo: PseudoLabeledSet, path: str, eval_labels: Optional[torch.Tensor] = None
) -> None:
    pseudo.to_frame(eval_labels).to_csv(path, index=False)
