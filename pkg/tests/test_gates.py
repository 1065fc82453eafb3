import itertools
import unittest

import torch

from gabc_ssda.errors import InputError
from gabc_ssda.gates import (
    GateThresholds,
    batch_gates,
    combined_gate,
    cunr_gate,
    pairwise_label_similarity,
    pdep_gate,
)

from tests.utils import random_simplex

GRID = [k / 20 for k in range(21)]


def reference_gates(p_i, p_j, y_j, tau, kappa):
    """Truth-table gates for two-class distributions, written out by hand"""
    predicted = 0 if p_i[0] >= p_i[1] else 1
    a = 1 if predicted == y_j else 0
    node = 1 if max(p_i) > tau else 0
    dot = p_i[0] * p_j[0] + p_i[1] * p_j[1]
    if a == 0:
        edge = 1
    elif dot > kappa:
        edge = 1
    else:
        edge = 0
    return a, node, edge, node * edge


class ScalarGatesTestCase(unittest.TestCase):
    def test_exhaustive_two_class_grid(self):
        distributions = [(q, 1.0 - q) for q in GRID]
        for tau, kappa in itertools.product((0.5, 0.95), (0.2, 0.5)):
            for p_i, p_j, y_j in itertools.product(distributions, distributions, (0, 1)):
                a = pairwise_label_similarity(p_i, y_j)
                g_i = cunr_gate(p_i, tau)
                g_tilde = pdep_gate(a, p_i, p_j, kappa)
                got = (a, g_i, g_tilde, combined_gate(g_i, g_tilde))
                self.assertEqual(
                    got,
                    reference_gates(p_i, p_j, y_j, tau, kappa),
                    msg=f"p_i={p_i} p_j={p_j} y_j={y_j} tau={tau} kappa={kappa}",
                )

    def test_examples(self):
        self.assertEqual(pairwise_label_similarity([0.7, 0.2, 0.1], 0), 1)
        self.assertEqual(pairwise_label_similarity([0.7, 0.2, 0.1], 2), 0)
        # Ties go to the lowest class index
        self.assertEqual(pairwise_label_similarity([0.5, 0.5], 0), 1)
        self.assertEqual(cunr_gate([0.96, 0.04], 0.95), 1)
        self.assertEqual(cunr_gate([0.95, 0.05], 0.95), 0)
        self.assertEqual(pdep_gate(0, [1.0, 0.0], [0.0, 1.0], 0.2), 1)
        self.assertEqual(pdep_gate(1, [1.0, 0.0], [0.0, 1.0], 0.2), 0)
        self.assertEqual(combined_gate(0, 1), 0)
        self.assertEqual(combined_gate(1, 1), 1)

    def test_monotone_in_thresholds(self):
        generator = torch.Generator().manual_seed(5)
        p_i = random_simplex(generator, 30, 3)
        p_j = random_simplex(generator, 30, 3)
        thresholds = [k / 10 for k in range(11)]
        for n in range(30):
            node = [cunr_gate(p_i[n], tau) for tau in thresholds]
            edge = [pdep_gate(1, p_i[n], p_j[n], kappa) for kappa in thresholds]
            for gates in (node, edge):
                self.assertEqual(gates, sorted(gates, reverse=True))

    def test_invalid_inputs(self):
        with self.assertRaises(InputError):
            pairwise_label_similarity([0.5, 0.5], 2)
        with self.assertRaises(InputError):
            cunr_gate([0.5, 0.6], 0.5)
        with self.assertRaises(InputError):
            cunr_gate([0.5, 0.5], 1.5)
        with self.assertRaises(InputError):
            pdep_gate(1, [0.5, 0.5], [0.2, 0.3, 0.5], 0.2)
        with self.assertRaises(InputError):
            pairwise_label_similarity([float("nan"), 1.0], 0)


class BatchGatesTestCase(unittest.TestCase):
    def test_matches_scalar_gates(self):
        generator = torch.Generator().manual_seed(3)
        for use_cunr, use_pdep in itertools.product((True, False), repeat=2):
            p_u = random_simplex(generator, 7, 4)
            p_l = random_simplex(generator, 5, 4)
            labels = torch.randint(4, (5,), generator=generator)
            thresholds = GateThresholds(tau=0.5, kappa=0.3)
            gates = batch_gates(
                p_u, p_l, labels, thresholds, use_cunr=use_cunr, use_pdep=use_pdep
            )
            self.assertEqual(gates.shape, (7, 5))
            for i, j in itertools.product(range(7), range(5)):
                a = pairwise_label_similarity(p_u[i], int(labels[j]))
                g_i = cunr_gate(p_u[i], thresholds.tau) if use_cunr else 1
                g_tilde = (
                    pdep_gate(a, p_u[i], p_l[j], thresholds.kappa) if use_pdep else 1
                )
                self.assertEqual(
                    tuple(gates[i, j]), (a, g_i, g_tilde, combined_gate(g_i, g_tilde))
                )

    def test_confident_one_hot_predictions(self):
        p_u = torch.eye(3, dtype=torch.float64)
        gates = batch_gates(p_u, p_u, torch.tensor([0, 1, 2]), GateThresholds())
        self.assertTrue(gates.node.all())
        self.assertTrue(torch.equal(gates.similarity, torch.eye(3, dtype=torch.bool)))
        self.assertTrue(gates.combined.all())

    def test_gates_do_not_track_gradients(self):
        p_u = torch.softmax(torch.randn(3, 2, dtype=torch.float64), -1).requires_grad_()
        gates = batch_gates(p_u, p_u, torch.tensor([0, 1, 0]), GateThresholds())
        self.assertFalse(gates.dots.requires_grad)

    def test_invalid_batches(self):
        p = torch.full((2, 2), 0.5, dtype=torch.float64)
        with self.assertRaises(InputError):
            batch_gates(p[:0], p, torch.tensor([0, 1]), GateThresholds())
        with self.assertRaises(InputError):
            batch_gates(p, p, torch.tensor([0, 2]), GateThresholds())
        with self.assertRaises(InputError):
            batch_gates(p, p, torch.tensor([0]), GateThresholds())
        with self.assertRaises(InputError):
            GateThresholds(tau=1.2)


if __name__ == "__main__":
    unittest.main()
