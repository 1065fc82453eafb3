"""Synthetic domain-shift benchmarks and the sample pools D_s, D_l, D_u.

The default benchmark places K isotropic Gaussian blobs on a circle. The
target domain is the same mixture rotated (and optionally scaled and
translated) around the origin, so a classifier fit on the source alone
degrades on the target in a controlled way.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
import torch

from gabc_ssda.errors import ConfigError, InputError
from gabc_ssda.utils import derive_seed

logger = logging.getLogger(__name__)

SPLITS = ("source", "labeled", "unlabeled", "test")


@dataclass(frozen=True)
class DomainSpec:
    num_classes: int = 5
    input_dim: int = 2
    source_size: int = 500
    target_size: int = 500
    test_size: int = 300
    shots: int = 3
    rotation_deg: float = 35.0
    translation: Tuple[float, ...] = ()
    scale: float = 1.0
    class_radius: float = 3.0
    source_std: float = 0.7
    target_std: float = 0.7

    def validate(self) -> "DomainSpec":
        if self.num_classes < 2:
            raise ConfigError("data.num_classes must be at least 2")
        if self.input_dim < 2:
            raise ConfigError("data.input_dim must be at least 2")
        if self.shots < 1:
            raise ConfigError("data.shots must be at least 1")
        if self.source_size < self.num_classes:
            raise ConfigError("data.source_size must cover every class")
        if self.test_size < 1:
            raise ConfigError("data.test_size must be at least 1")
        # Each class receives floor(target_size / K) or one more samples, and
        # D_u must keep at least one sample per class after the shots are taken.
        if self.target_size // self.num_classes <= self.shots:
            raise ConfigError(
                f"data.shots ({self.shots}) exceeds the per-class target pool "
                f"({self.target_size // self.num_classes} samples)"
            )
        if self.translation and len(self.translation) != self.input_dim:
            raise ConfigError("data.translation must have input_dim entries")
        if self.scale <= 0:
            raise ConfigError("data.scale must be positive")
        if self.source_std < 0 or self.target_std < 0:
            raise ConfigError(
                "data.source_std and data.target_std must be non-negative"
            )
        return self


@dataclass
class LabeledSet:
    features: torch.Tensor
    labels: torch.Tensor

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, index: torch.Tensor) -> "LabeledSet":
        return LabeledSet(self.features[index], self.labels[index])


@dataclass
class UnlabeledSet:
    features: torch.Tensor
    # Held-out ground truth, only ever read by evaluation code
    eval_labels: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass
class DomainPools:
    source: LabeledSet
    labeled: LabeledSet
    unlabeled: UnlabeledSet
    test: LabeledSet
    num_classes: int = field(default=0)

    def validate(self) -> "DomainPools":
        """Check labels, finiteness and the non-empty pools contract."""
        dims = set()
        for name in SPLITS:
            pool = getattr(self, name)
            if len(pool) == 0:
                raise InputError(f"Pool '{name}' is empty")
            if pool.features.dim() != 2:
                raise InputError(f"Pool '{name}' features must be a 2-d tensor")
            if not torch.isfinite(pool.features).all():
                raise InputError(f"Pool '{name}' contains non-finite features")
            dims.add(pool.features.shape[1])
            labels = getattr(pool, "labels", None)
            if labels is not None and (
                labels.min() < 0 or labels.max() >= self.num_classes
            ):
                raise InputError(
                    f"Pool '{name}' has labels outside [0, {self.num_classes})"
                )
        if len(dims) != 1:
            raise InputError("All pools must share the same input dimension")
        return self

    @property
    def input_dim(self) -> int:
        return self.source.features.shape[1]


@dataclass(frozen=True)
class AugmentParams:
    noise_scale: float = 0.25
    erase_prob: float = 0.1


def class_means(spec: DomainSpec) -> np.ndarray:
    """Class centres evenly spaced on a circle in the first two coordinates."""
    angles = 2.0 * math.pi * np.arange(spec.num_classes) / spec.num_classes
    means = np.zeros((spec.num_classes, spec.input_dim))
    means[:, 0] = spec.class_radius * np.cos(angles)
    means[:, 1] = spec.class_radius * np.sin(angles)
    return means


def shift_matrix(spec: DomainSpec) -> np.ndarray:
    """Rotation in the (x0, x1) plane, scaled; identity on the other axes."""
    theta = math.radians(spec.rotation_deg)
    matrix = np.eye(spec.input_dim)
    matrix[0, 0] = matrix[1, 1] = math.cos(theta)
    matrix[0, 1] = -math.sin(theta)
    matrix[1, 0] = math.sin(theta)
    return spec.scale * matrix


def _draw(rng: np.random.Generator, spec: DomainSpec, size: int, std: float):
    labels = rng.permutation(np.arange(size) % spec.num_classes)
    noise = rng.normal(scale=std, size=(size, spec.input_dim))
    return class_means(spec)[labels] + noise, labels


def generate(spec: DomainSpec, seed: int) -> DomainPools:
    """Draw D_s, D_l, D_u and the target test set for `spec`.

    The result is a pure function of (spec, seed). D_l holds exactly
    `spec.shots` samples per class; D_l, D_u and the test set partition the
    target draw.
    """
    spec.validate()
    rng = np.random.default_rng(derive_seed(seed, "data"))

    source_x, source_y = _draw(rng, spec, spec.source_size, spec.source_std)

    matrix = shift_matrix(spec)
    translation = np.asarray(spec.translation or np.zeros(spec.input_dim))
    pool_x, pool_y = _draw(rng, spec, spec.target_size, spec.target_std)
    test_x, test_y = _draw(rng, spec, spec.test_size, spec.target_std)
    pool_x = pool_x @ matrix.T + translation
    test_x = test_x @ matrix.T + translation

    labeled_index = np.concatenate(
        [np.flatnonzero(pool_y == c)[: spec.shots] for c in range(spec.num_classes)]
    )
    unlabeled_mask = np.ones(spec.target_size, dtype=bool)
    unlabeled_mask[labeled_index] = False

    def tensor(values, dtype=torch.float64):
        return torch.as_tensor(values, dtype=dtype)

    pools = DomainPools(
        source=LabeledSet(tensor(source_x), tensor(source_y, torch.long)),
        labeled=LabeledSet(
            tensor(pool_x[labeled_index]), tensor(pool_y[labeled_index], torch.long)
        ),
        unlabeled=UnlabeledSet(
            tensor(pool_x[unlabeled_mask]),
            eval_labels=tensor(pool_y[unlabeled_mask], torch.long),
        ),
        test=LabeledSet(tensor(test_x), tensor(test_y, torch.long)),
        num_classes=spec.num_classes,
    )
    logger.debug(
        "Generated pools: %d source, %d labeled, %d unlabeled, %d test",
        len(pools.source),
        len(pools.labeled),
        len(pools.unlabeled),
        len(pools.test),
    )
    return pools.validate()


def augment(
    x: torch.Tensor, params: AugmentParams, generator: torch.Generator
) -> torch.Tensor:
    """Additive Gaussian noise followed by random coordinate erasure.

    Works on a single sample or a batch; the output depends only on
    (x, params, generator state).
    """
    noise = torch.randn(x.shape, generator=generator, dtype=x.dtype)
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= params.erase_prob
    return (x + params.noise_scale * noise) * keep


def sample_indices(
    pool_size: int, batch_size: int, generator: torch.Generator
) -> torch.Tensor:
    """Draw a mini-batch of pool indices; with replacement only when the pool
    is smaller than the batch."""
    if pool_size == 0:
        return torch.empty(0, dtype=torch.long)
    if pool_size >= batch_size:
        return torch.randperm(pool_size, generator=generator)[:batch_size]
    return torch.randint(pool_size, (batch_size,), generator=generator)


def dump_csv(pools: DomainPools, path: str) -> None:
    """Write every pool to one CSV: split, label (-1 when unlabeled),
    eval_label (-1 when unknown), x0..x{d-1}."""
    frames = []
    for split in SPLITS:
        pool = getattr(pools, split)
        n = len(pool)
        if isinstance(pool, LabeledSet):
            label = pool.labels.numpy()
            eval_label = label
        else:
            label = np.full(n, -1)
            eval_label = (
                pool.eval_labels.numpy() if pool.eval_labels is not None else label
            )
        frame = pd.DataFrame(
            pool.features.numpy(),
            columns=[f"x{i}" for i in range(pool.features.shape[1])],
        )
        frame.insert(0, "eval_label", eval_label)
        frame.insert(0, "label", label)
        frame.insert(0, "split", split)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)


def load_csv(path: str, num_classes: Optional[int] = None) -> DomainPools:
    """Read pools written by `dump_csv` (or any CSV under the same contract)."""
    frame = pd.read_csv(path)
    missing = {"split", "label"} - set(frame.columns)
    if missing:
        raise InputError(f"{path}: missing columns {sorted(missing)}")
    feature_columns = [c for c in frame.columns if c.startswith("x")]
    if not feature_columns:
        raise InputError(f"{path}: no feature columns (x0, x1, ...)")
    unknown = set(frame["split"]) - set(SPLITS)
    if unknown:
        raise InputError(f"{path}: unknown split tags {sorted(unknown)}")
    if "eval_label" not in frame.columns:
        frame["eval_label"] = frame["label"]

    def rows(split):
        part = frame[frame["split"] == split]
        if part.empty:
            raise InputError(f"{path}: pool '{split}' is empty")
        features = torch.as_tensor(
            part[feature_columns].to_numpy(dtype=np.float64), dtype=torch.float64
        )
        labels = torch.as_tensor(part["label"].to_numpy(), dtype=torch.long)
        eval_labels = torch.as_tensor(part["eval_label"].to_numpy(), dtype=torch.long)
        return features, labels, eval_labels

    source_x, source_y, _ = rows("source")
    labeled_x, labeled_y, _ = rows("labeled")
    unlabeled_x, _, unlabeled_eval = rows("unlabeled")
    test_x, test_y, _ = rows("test")
    if num_classes is None:
        num_classes = int(max(source_y.max(), labeled_y.max(), test_y.max())) + 1
    return DomainPools(
        source=LabeledSet(source_x, source_y),
        labeled=LabeledSet(labeled_x, labeled_y),
        unlabeled=UnlabeledSet(
            unlabeled_x,
            eval_labels=None if (unlabeled_eval < 0).any() else unlabeled_eval,
        ),
        test=LabeledSet(test_x, test_y),
        num_classes=num_classes,
    ).validate()
