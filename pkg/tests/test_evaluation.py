import math
import unittest

import numpy as np
import torch

from gabc_ssda.data import LabeledSet, UnlabeledSet
from gabc_ssda.errors import InputError
from gabc_ssda.evaluation import (
    accuracy_from_predictions,
    css_from_predictions,
    css_matrix,
    gate_ratio_stats,
    gate_stats_from_predictions,
    target_accuracy,
)
from gabc_ssda.gates import GateThresholds
from gabc_ssda.model import build_model

from tests.utils import random_simplex


class AccuracyTestCase(unittest.TestCase):
    def test_accuracy(self):
        p = torch.tensor([[0.9, 0.1], [0.3, 0.7], [0.6, 0.4]], dtype=torch.float64)
        self.assertAlmostEqual(accuracy_from_predictions(p, torch.tensor([0, 1, 1])), 2 / 3)

    def test_empty_test_set(self):
        model = build_model(2, 2, seed=0)
        empty = LabeledSet(torch.empty(0, 2, dtype=torch.float64), torch.empty(0).long())
        with self.assertRaises(InputError):
            target_accuracy(model, empty)


class CssTestCase(unittest.TestCase):
    def test_matches_triple_loop(self):
        generator = torch.Generator().manual_seed(4)
        p_u = random_simplex(generator, 12, 3)
        p_l = random_simplex(generator, 9, 3)
        y_u = torch.randint(3, (12,), generator=generator)
        y_l = torch.tensor([0, 0, 0, 1, 1, 1, 2, 2, 2])
        css = css_from_predictions(p_u, y_u, p_l, y_l, 3)
        for c in range(3):
            for c_prime in range(3):
                dots = [
                    float(p_u[i] @ p_l[j])
                    for i in range(12)
                    for j in range(9)
                    if y_u[i] == c and y_l[j] == c_prime
                ]
                if dots:
                    self.assertAlmostEqual(css.scores[c, c_prime], np.mean(dots), 12)
                else:
                    self.assertTrue(math.isnan(css.scores[c, c_prime]))

    def test_identical_predictions_give_a_constant_matrix(self):
        p = torch.tensor([0.5, 0.3, 0.2], dtype=torch.float64)
        css = css_from_predictions(
            p.repeat(6, 1), torch.tensor([0, 1, 2, 0, 1, 2]), p.repeat(3, 1), torch.arange(3), 3
        )
        np.testing.assert_allclose(css.scores, np.full((3, 3), float(p @ p)))
        self.assertAlmostEqual(css.diagonal_mean(), css.off_diagonal_mean(), 12)

    def test_missing_class_is_nan(self):
        p = torch.full((4, 3), 1 / 3, dtype=torch.float64)
        css = css_from_predictions(p, torch.tensor([0, 0, 1, 1]), p, torch.tensor([0, 1, 1, 0]), 3)
        self.assertTrue(np.isnan(css.scores[2]).all())
        self.assertFalse(css.present[2].any())
        self.assertEqual(css.to_frame().shape, (3, 3))

    def test_needs_held_out_labels(self):
        model = build_model(2, 3, seed=0)
        x = torch.randn(4, 2, dtype=torch.float64)
        labeled = LabeledSet(x, torch.tensor([0, 1, 2, 0]))
        with self.assertRaises(InputError):
            css_matrix(model, UnlabeledSet(x), [labeled])
        css = css_matrix(model, UnlabeledSet(x, torch.tensor([0, 1, 2, 2])), [labeled])
        self.assertEqual(css.num_classes, 3)


class GateRatioTestCase(unittest.TestCase):
    def test_all_confident(self):
        p_u = torch.tensor([[0.99, 0.01], [0.02, 0.98]], dtype=torch.float64)
        stats = gate_stats_from_predictions(p_u, p_u, torch.tensor([0, 1]), GateThresholds())
        self.assertEqual(stats.node_ratio, 1.0)

    def test_disjoint_one_hot_predictions(self):
        p_u = torch.tensor([[1.0, 0.0], [1.0, 0.0]], dtype=torch.float64)
        p_l = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
        stats = gate_stats_from_predictions(p_u, p_l, torch.tensor([1]), GateThresholds())
        self.assertEqual(stats.similar_high + stats.similar_low, 0.0)
        self.assertEqual(stats.dissimilar_low, 1.0)

    def test_matches_enumeration(self):
        generator = torch.Generator().manual_seed(9)
        thresholds = GateThresholds(tau=0.6, kappa=0.35)
        p_u = random_simplex(generator, 10, 3)
        p_l = random_simplex(generator, 7, 3)
        labels = torch.randint(3, (7,), generator=generator)
        stats = gate_stats_from_predictions(p_u, p_l, labels, thresholds)

        cells = {(a, h): 0 for a in (0, 1) for h in (0, 1)}
        combined = 0
        for i in range(10):
            node = float(p_u[i].max()) > 0.6
            for j in range(7):
                a = int(int(p_u[i].argmax()) == int(labels[j]))
                high = int(float((p_u[i] * p_l[j]).sum()) > 0.35)
                cells[a, high] += 1
                combined += int(node and (a == 0 or high))
        pairs = 70
        self.assertAlmostEqual(
            stats.node_ratio, sum(float(p_u[i].max()) > 0.6 for i in range(10)) / 10
        )
        self.assertAlmostEqual(stats.combined_ratio, combined / pairs)
        self.assertAlmostEqual(stats.similar_high, cells[1, 1] / pairs)
        self.assertAlmostEqual(stats.similar_low, cells[1, 0] / pairs)
        self.assertAlmostEqual(stats.dissimilar_high, cells[0, 1] / pairs)
        self.assertAlmostEqual(stats.dissimilar_low, cells[0, 0] / pairs)

    def test_model_level_is_deterministic(self):
        model = build_model(2, 3, seed=1, temperature=0.1)
        x = torch.randn(8, 2, generator=torch.Generator().manual_seed(1)).double()
        pools = [LabeledSet(x[:4], torch.tensor([0, 1, 2, 0]))]
        first = gate_ratio_stats(model, UnlabeledSet(x[4:]), pools, GateThresholds())
        second = gate_ratio_stats(model, UnlabeledSet(x[4:]), pools, GateThresholds())
        self.assertEqual(first, second)


if __name__ == "__main__":
    unittest.main()
