"""Fast consistency checks behind the `selftest` subcommand.

Each check returns a list of failure messages; an empty list means it passed.
"""
import dataclasses
import logging
import math
from typing import Callable, List

import torch

from gabc_ssda.config import PUBLISHED_DEFAULTS, Config, TrainConfig
from gabc_ssda.gates import (
    GateThresholds,
    batch_gates,
    combined_gate,
    cunr_gate,
    pairwise_label_similarity,
    pdep_gate,
)
from gabc_ssda.losses import abc_pair_loss, sharpen
from gabc_ssda.trainer import lr_schedule

logger = logging.getLogger(__name__)


def _close(name: str, got: float, want: float, tolerance: float) -> List[str]:
    if abs(got - want) > tolerance:
        return [f"{name}: got {got!r}, expected {want!r} (±{tolerance})"]
    return []


def check_defaults() -> List[str]:
    failures = []
    defaults = dataclasses.asdict(TrainConfig())
    parsed = dataclasses.asdict(Config.from_dict({}).train)
    for name, value in PUBLISHED_DEFAULTS.items():
        if defaults[name] != value:
            failures.append(f"TrainConfig.{name} = {defaults[name]}, expected {value}")
        if parsed[name] != value:
            failures.append(
                f"empty config gives {name} = {parsed[name]}, expected {value}"
            )
    return failures


def check_closed_forms() -> List[str]:
    def vector(*values):
        return torch.tensor(values, dtype=torch.float64)

    sharpened = sharpen(vector(0.6, 0.4), 0.85)
    pair = abc_pair_loss(vector(0.7, 0.3), vector(0.6, 0.4), 1)
    return (
        _close("sharpen[0]", float(sharpened[0]), 0.6170, 1e-3)
        + _close("sharpen[1]", float(sharpened[1]), 0.3830, 1e-3)
        + _close("abc pair loss", float(pair), -math.log(0.54), 1e-6)
        + _close("lr(0.01, 10000)", lr_schedule(0.01, 10000), 0.01 * 2 ** -0.75, 1e-9)
    )


def check_gates() -> List[str]:
    """Scalar gates against a hand-written table, then batch gates against the
    scalar ones."""
    thresholds = GateThresholds(tau=0.5, kappa=0.2)
    # (p_i, p_j, y_j) -> (a_ij, g_i, g~_ij, g_i^j)
    table = [
        ([0.9, 0.1], [0.8, 0.2], 0, (1, 1, 1, 1)),
        ([0.9, 0.1], [0.1, 0.9], 1, (0, 1, 1, 1)),
        ([0.9, 0.1], [0.0, 1.0], 0, (1, 1, 0, 0)),
        ([0.4, 0.6], [0.0, 1.0], 1, (1, 1, 1, 1)),
        ([0.5, 0.5], [1.0, 0.0], 0, (1, 0, 1, 0)),
        ([0.5, 0.5], [0.0, 1.0], 1, (0, 0, 1, 0)),
    ]
    failures = []
    for p_i, p_j, y_j, expected in table:
        a_ij = pairwise_label_similarity(p_i, y_j)
        g_i = cunr_gate(p_i, thresholds.tau)
        g_tilde = pdep_gate(a_ij, p_i, p_j, thresholds.kappa)
        got = (a_ij, g_i, g_tilde, combined_gate(g_i, g_tilde))
        if got != expected:
            failures.append(f"gates{(p_i, p_j, y_j)} = {got}, expected {expected}")

    p_u = torch.tensor([row[0] for row in table], dtype=torch.float64)
    p_l = torch.tensor([row[1] for row in table], dtype=torch.float64)
    labels = torch.tensor([row[2] for row in table])
    gates = batch_gates(p_u, p_l, labels, thresholds)
    for i in range(len(table)):
        for j in range(len(table)):
            a_ij = pairwise_label_similarity(table[i][0], table[j][2])
            g_i = cunr_gate(table[i][0], thresholds.tau)
            g_tilde = pdep_gate(a_ij, table[i][0], table[j][1], thresholds.kappa)
            if tuple(gates[i, j]) != (a_ij, g_i, g_tilde, g_i * g_tilde):
                failures.append(f"batch gates differ from scalar gates at ({i}, {j})")
    return failures


CHECKS: List[Callable[[], List[str]]] = [
    check_defaults,
    check_closed_forms,
    check_gates,
]


def run_selftest() -> List[str]:
    failures = []
    for check in CHECKS:
        found = check()
        for failure in found:
            logger.error("%s: %s", check.__name__, failure)
        if not found:
            logger.info("%s passed", check.__name__)
        failures.extend(found)
    return failures
