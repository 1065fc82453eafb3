"""Feature extractor and normalized prototypical classifier.

A sample x is mapped to a raw feature F(x), normalized and scaled to
f = F(x) / (T * ||F(x)||), and classified by softmax(W f) where the rows of the
bias-free prototype layer W are the class prototypes.
"""
import logging
import os
from typing import Any, Dict, Optional, Tuple

import torch
from torch import nn

from gabc_ssda.errors import InputError, NumericError
from gabc_ssda.utils import derive_seed

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12

CHECKPOINT_FORMAT = "gabc-ssda-checkpoint"
# major.minor; readers accept any minor version of their major version
CHECKPOINT_VERSION = "1.0"


def normalize_feature(raw: torch.Tensor, temperature: float) -> torch.Tensor:
    """Scale each raw feature (last axis) to Euclidean norm 1/temperature.

    Raises:
        NumericError: a raw feature has norm below 1e-12.
    """
    norms = raw.norm(dim=-1, keepdim=True)
    small = (norms < DEGENERATE_NORM).reshape(-1)
    if small.any():
        index = int(torch.nonzero(small)[0])
        raise NumericError(
            f"Raw feature {index} has norm below {DEGENERATE_NORM}", where=index
        )
    return raw / (norms * temperature)


class FeatureExtractor(nn.Module):
    """Two fully-connected layers with a tanh in between."""

    def __init__(self, input_dim: int, hidden_dim: int, feature_dim: int):
        super().__init__()
        self.layers = nn.Sequential(
            nn.Linear(input_dim, hidden_dim),
            nn.Tanh(),
            nn.Linear(hidden_dim, feature_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.layers(x)


class GabcNet(nn.Module):
    def __init__(
        self,
        input_dim: int,
        num_classes: int,
        hidden_dim: int = 64,
        feature_dim: int = 16,
        temperature: float = 0.05,
    ):
        super().__init__()
        if num_classes < 2:
            raise InputError("A classifier needs at least 2 classes")
        if temperature <= 0:
            raise InputError("temperature must be positive")
        self.input_dim = input_dim
        self.num_classes = num_classes
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.temperature = temperature
        self.extractor = FeatureExtractor(input_dim, hidden_dim, feature_dim)
        self.prototypes = nn.Linear(feature_dim, num_classes, bias=False)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return normalize_feature(self.extractor(x), self.temperature)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        logits = self.prototypes(self.features(x))
        finite = torch.isfinite(logits).all(dim=-1).reshape(-1)
        if not finite.all():
            index = int(torch.nonzero(~finite)[0])
            raise NumericError(f"Non-finite logits for sample {index}", where=index)
        return logits

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=-1)


def build_model(
    input_dim: int,
    num_classes: int,
    seed: int,
    hidden_dim: int = 64,
    feature_dim: int = 16,
    temperature: float = 0.05,
) -> GabcNet:
    """Create a float64 model whose initial weights depend only on `seed`."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, "init"))
        model = GabcNet(input_dim, num_classes, hidden_dim, feature_dim, temperature)
    return model.double()


def extract_feature(model: GabcNet, x: torch.Tensor) -> torch.Tensor:
    return model.features(x)


def predict(model: GabcNet, x: torch.Tensor) -> torch.Tensor:
    """Prediction distribution(s) for one sample or a batch of samples."""
    return model(x)


def predicted_label(p: torch.Tensor) -> torch.Tensor:
    """Argmax over the last axis; ties resolve to the lowest class index."""
    p = torch.as_tensor(p)
    if p.dim() == 0 or p.shape[-1] == 0:
        raise InputError("predicted_label needs a non-empty distribution")
    if torch.isnan(p).any():
        raise InputError("predicted_label got NaN probabilities")
    # torch.argmax returns the first maximal index
    return torch.argmax(p, dim=-1)


def save_checkpoint(
    path: str,
    model: GabcNet,
    seed: int,
    optimizer: Optional[torch.optim.Optimizer] = None,
    trainer_state: Optional[Dict[str, Any]] = None,
) -> None:
    """Write a self-describing checkpoint; see README for the field list."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "hidden_dim": model.hidden_dim,
        "feature_dim": model.feature_dim,
        "temperature": model.temperature,
        "seed": seed,
        "extractor": model.extractor.state_dict(),
        "prototypes": model.prototypes.weight.detach().clone(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "trainer": trainer_state or {},
    }
    tmp_path = f"{path}.tmp"
    torch.save(payload, tmp_path)
    os.replace(tmp_path, path)


def load_checkpoint(path: str) -> Tuple[GabcNet, Dict[str, Any]]:
    """Rebuild the model stored at `path`; returns (model, raw payload)."""
    payload = torch.load(path, weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise InputError(f"{path} is not a gabc-ssda checkpoint")
    major = str(payload.get("version", "")).split(".")[0]
    if major != CHECKPOINT_VERSION.split(".")[0]:
        raise InputError(
            f"{path} has checkpoint version {payload.get('version')}, "
            f"expected {CHECKPOINT_VERSION.split('.')[0]}.x"
        )
    model = GabcNet(
        payload["input_dim"],
        payload["num_classes"],
        payload["hidden_dim"],
        payload["feature_dim"],
        payload["temperature"],
    ).double()
    model.extractor.load_state_dict(payload["extractor"])
    with torch.no_grad():
        model.prototypes.weight.copy_(payload["prototypes"])
    logger.debug("Loaded checkpoint %s (seed %s)", path, payload["seed"])
    return model, payload
