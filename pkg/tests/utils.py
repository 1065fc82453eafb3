# Utility functions to make testing easier
import os
from typing import Callable, Dict, List

import torch

from gabc_ssda.config import TrainConfig
from gabc_ssda.data import DomainPools, DomainSpec, LabeledSet, generate
from gabc_ssda.trainer import BatchBundle

SLOW_TESTS = os.environ.get("GABC_SLOW_TESTS") == "1"


def random_simplex(generator: torch.Generator, n: int, num_classes: int) -> torch.Tensor:
    """n random distributions over num_classes classes, away from the corners"""
    logits = 2.0 * torch.randn(n, num_classes, generator=generator, dtype=torch.float64)
    return torch.softmax(logits, dim=-1)


def tiny_spec(**overrides) -> DomainSpec:
    values = dict(
        num_classes=3, input_dim=2, source_size=60, target_size=60, test_size=30
    )
    values.update(overrides)
    return DomainSpec(**values)


def tiny_pools(seed: int = 0, **overrides) -> DomainPools:
    return generate(tiny_spec(**overrides), seed)


def tiny_config(**overrides) -> TrainConfig:
    """A fast training config: few epochs, small batches and a small network"""
    values = dict(
        epochs=2,
        iterations_per_epoch=3,
        batch_source=8,
        batch_labeled=4,
        batch_pseudo=4,
        batch_unlabeled=8,
        hidden_dim=8,
        feature_dim=4,
    )
    values.update(overrides)
    return TrainConfig(**values)


def random_bundle(
    generator: torch.Generator, input_dim: int, num_classes: int, sizes=(4, 3, 3, 5)
) -> BatchBundle:
    """A hand-made batch bundle with random samples and labels"""
    source, labeled, pseudo, unlabeled = sizes

    def samples(n):
        return torch.randn(n, input_dim, generator=generator, dtype=torch.float64)

    def labels(n):
        return torch.randint(num_classes, (n,), generator=generator)

    return BatchBundle(
        source=LabeledSet(samples(source), labels(source)),
        labeled=LabeledSet(samples(labeled), labels(labeled)),
        pseudo=LabeledSet(samples(pseudo), labels(pseudo)),
        pseudo_augmented=samples(pseudo),
        unlabeled=samples(unlabeled),
        unlabeled_augmented=samples(unlabeled),
    )


def finite_difference_gradients(
    evaluate: Callable[[], Dict[str, torch.Tensor]],
    parameters: List[torch.nn.Parameter],
    step: float = 1e-5,
) -> Dict[str, List[torch.Tensor]]:
    """Central differences of every named scalar returned by `evaluate` with
    respect to every entry of `parameters`"""
    names = list(evaluate())
    gradients = {name: [torch.zeros_like(p) for p in parameters] for name in names}
    with torch.no_grad():
        for index, parameter in enumerate(parameters):
            flat = parameter.view(-1)
            for k in range(flat.numel()):
                original = float(flat[k])
                flat[k] = original + step
                plus = evaluate()
                flat[k] = original - step
                minus = evaluate()
                flat[k] = original
                for name in names:
                    difference = float(plus[name]) - float(minus[name])
                    gradients[name][index].view(-1)[k] = difference / (2 * step)
    return gradients


def relative_error(a: List[torch.Tensor], b: List[torch.Tensor]) -> float:
    a = torch.cat([t.reshape(-1) for t in a])
    b = torch.cat([t.reshape(-1) for t in b])
    scale = max(float(a.norm()), float(b.norm()), 1e-8)
    return float((a - b).norm()) / scale
