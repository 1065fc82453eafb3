import dataclasses
import math
import os
import tempfile
import unittest

import numpy as np
import pandas as pd
import torch

from gabc_ssda.config import DESK_SCALE_LR, AblationFlags, TrainConfig
from gabc_ssda.errors import InputError, NumericError
from gabc_ssda.losses import overall_loss
from gabc_ssda.pseudo_labels import PseudoLabeledSet
from gabc_ssda.trainer import (
    LOG_COLUMNS,
    Trainer,
    forward_losses,
    lr_schedule,
    prepare_targets,
    sample_bundle,
    train_step,
    weights_of,
)

from tests.utils import tiny_config, tiny_pools

SUPERVISED_ONLY = AblationFlags(
    use_adbc=False, use_wdbc=False, use_lab=False, use_con=False
)


def parameters_of(model):
    return [p.detach().clone() for p in model.parameters()]


class ScheduleTestCase(unittest.TestCase):
    def test_values(self):
        self.assertEqual(lr_schedule(0.01, 0), 0.01)
        self.assertAlmostEqual(lr_schedule(0.01, 10000), 0.01 * 2 ** -0.75, delta=1e-9)
        self.assertLess(lr_schedule(0.01, 20000), lr_schedule(0.01, 10000))

    def test_negative_iteration(self):
        with self.assertRaises(InputError):
            lr_schedule(0.01, -1)


class BundleTestCase(unittest.TestCase):
    def setUp(self):
        self.pools = tiny_pools()
        self.config = tiny_config()

    def test_bundle_is_a_function_of_seed_and_iteration(self):
        pseudo = PseudoLabeledSet(
            torch.tensor([0, 1, 2]),
            torch.tensor([0, 1, 2]),
            torch.tensor([0.99, 0.99, 0.99], dtype=torch.float64),
        )
        first = sample_bundle(self.pools, pseudo, self.config, 5)
        second = sample_bundle(self.pools, pseudo, self.config, 5)
        other = sample_bundle(self.pools, pseudo, self.config, 6)
        self.assertTrue(torch.equal(first.unlabeled, second.unlabeled))
        self.assertTrue(torch.equal(first.unlabeled_augmented, second.unlabeled_augmented))
        self.assertTrue(torch.equal(first.pseudo.features, second.pseudo.features))
        self.assertFalse(torch.equal(first.unlabeled, other.unlabeled))
        self.assertEqual(len(first.source), self.config.batch_source)
        self.assertEqual(first.unlabeled.shape[0], self.config.batch_unlabeled)
        # The pseudo pool is smaller than its batch, so it is drawn with replacement
        self.assertEqual(len(first.pseudo), self.config.batch_pseudo)

    def test_empty_pseudo_set(self):
        bundle = sample_bundle(self.pools, PseudoLabeledSet.empty(), self.config, 0)
        self.assertFalse(bundle.has_pseudo)
        self.assertEqual(bundle.pseudo_augmented.shape[0], 0)


class TrainStepTestCase(unittest.TestCase):
    def setUp(self):
        self.pools = tiny_pools()

    def test_momentum_free_step_follows_the_gradient(self):
        config = tiny_config(momentum=0.0, base_lr=0.05, tau=0.0, kappa=0.0)
        trainer = Trainer(config, self.pools)
        model, flags = trainer.model, AblationFlags()
        bundle = sample_bundle(self.pools, PseudoLabeledSet.empty(), config, 0)

        targets = prepare_targets(model, bundle, config, flags)
        total = overall_loss(
            forward_losses(model, bundle, targets, config, flags), weights_of(config)
        )
        gradients = torch.autograd.grad(total, list(model.parameters()))
        before = parameters_of(model)
        breakdown = train_step(model, trainer.optimizer, bundle, config, flags, 0)
        self.assertAlmostEqual(breakdown.overall, float(total), 12)
        for old, new, grad in zip(before, model.parameters(), gradients):
            torch.testing.assert_close(new.detach() - old, -0.05 * grad)

    def test_supervised_only_objective_is_cross_entropy(self):
        config = tiny_config()
        trainer = Trainer(config, self.pools, SUPERVISED_ONLY)
        bundle = sample_bundle(self.pools, PseudoLabeledSet.empty(), config, 0)
        breakdown = train_step(
            trainer.model, trainer.optimizer, bundle, config, SUPERVISED_ONLY, 0
        )
        self.assertEqual(breakdown.overall, breakdown.ce)
        self.assertEqual(breakdown.abc, 0.0)
        self.assertEqual(breakdown.con, 0.0)

    def test_non_finite_model_aborts_before_any_change(self):
        config = tiny_config()
        trainer = Trainer(config, self.pools)
        with torch.no_grad():
            trainer.model.prototypes.weight[0, 0] = float("nan")
        before = parameters_of(trainer.model)
        bundle = sample_bundle(self.pools, PseudoLabeledSet.empty(), config, 0)
        with self.assertRaises(NumericError):
            train_step(trainer.model, trainer.optimizer, bundle, config, AblationFlags(), 0)
        for old, new in zip(before, trainer.model.parameters()):
            self.assertTrue(torch.equal(old.nan_to_num(), new.detach().nan_to_num()))

    def test_two_phase_step(self):
        config = tiny_config(two_phase=True)
        trainer = Trainer(config, self.pools)
        before = parameters_of(trainer.model)
        bundle = sample_bundle(self.pools, PseudoLabeledSet.empty(), config, 0)
        breakdown = train_step(
            trainer.model, trainer.optimizer, bundle, config, AblationFlags(), 0
        )
        self.assertGreater(breakdown.ce, 0.0)
        changed = [
            not torch.equal(old, new.detach())
            for old, new in zip(before, trainer.model.parameters())
        ]
        self.assertTrue(any(changed))


class TrainerTestCase(unittest.TestCase):
    def setUp(self):
        self.pools = tiny_pools()

    def test_identical_runs_give_identical_logs(self):
        config = tiny_config()
        first = Trainer(config, self.pools).run().log
        second = Trainer(config, tiny_pools()).run().log
        pd.testing.assert_frame_equal(first, second)
        self.assertEqual(list(first.columns), LOG_COLUMNS)
        self.assertEqual(first["epoch"].tolist(), [0, 1, 2])

    def test_zero_epochs_only_evaluates(self):
        result = Trainer(tiny_config(epochs=0), self.pools).run()
        self.assertEqual(len(result.log), 1)
        self.assertTrue(0.0 <= result.final_accuracy <= 1.0)

    def test_zero_learning_rate_keeps_the_model(self):
        trainer = Trainer(tiny_config(base_lr=0.0), self.pools)
        before = parameters_of(trainer.model)
        trainer.run()
        for old, new in zip(before, trainer.model.parameters()):
            self.assertTrue(torch.equal(old, new.detach()))

    def test_resume_matches_an_uninterrupted_run(self):
        config = tiny_config(epochs=3)
        with tempfile.TemporaryDirectory() as directory:
            straight_dir = os.path.join(directory, "straight")
            resumed_dir = os.path.join(directory, "resumed")
            straight = Trainer(config, self.pools, out_dir=straight_dir).run()

            Trainer(config, self.pools, out_dir=resumed_dir).run(stop_after=1)
            checkpoint = os.path.join(resumed_dir, "checkpoint.pt")
            resumed = Trainer(config, self.pools, out_dir=resumed_dir).run(
                resume_from=checkpoint
            )
            log_on_disk = pd.read_csv(os.path.join(resumed_dir, "train_log.csv"))

        pd.testing.assert_frame_equal(straight.log, resumed.log)
        self.assertEqual(log_on_disk["epoch"].tolist(), [0, 1, 2, 3])
        self.assertEqual(sorted(resumed.css), sorted(straight.css))
        for epoch, css in straight.css.items():
            np.testing.assert_array_equal(resumed.css[epoch].scores, css.scores)
            np.testing.assert_array_equal(resumed.css[epoch].present, css.present)
        for a, b in zip(straight.model.parameters(), resumed.model.parameters()):
            self.assertTrue(torch.equal(a, b))

    def test_outputs(self):
        config = tiny_config(epochs=1)
        with tempfile.TemporaryDirectory() as directory:
            Trainer(
                config, self.pools, out_dir=directory, dump_pseudo=True, dump_features=True
            ).run()
            self.assertTrue(os.path.isfile(os.path.join(directory, "train_log.csv")))
            self.assertTrue(os.path.isfile(os.path.join(directory, "checkpoint.pt")))
            self.assertTrue(os.path.isfile(os.path.join(directory, "css", "epoch-001.csv")))
            self.assertTrue(
                os.path.isfile(os.path.join(directory, "pseudo_labels", "epoch-001.csv"))
            )
            features = pd.read_csv(os.path.join(directory, "features.csv"))
        self.assertEqual(
            len(features),
            len(self.pools.source)
            + len(self.pools.labeled)
            + len(self.pools.unlabeled)
            + len(self.pools.test),
        )

    def test_default_rate_keeps_the_full_objective_stable(self):
        defaults = TrainConfig()
        self.assertEqual(defaults.base_lr, DESK_SCALE_LR)
        config = tiny_config(
            epochs=8,
            iterations_per_epoch=10,
            hidden_dim=defaults.hidden_dim,
            feature_dim=defaults.feature_dim,
        )
        log = Trainer(config, self.pools).run().log
        self.assertTrue(log["overall"].iloc[1:].map(math.isfinite).all())
        self.assertLess(log["ce"].iloc[-1], log["ce"].iloc[1])

    def test_every_ablation_variant_trains(self):
        variants = [
            SUPERVISED_ONLY,
            AblationFlags(augment_clustering=False),
            AblationFlags(pseudo_in_wdbc=False),
            AblationFlags(positive_term=False),
            AblationFlags(negative_term=False),
            AblationFlags(use_cunr=False, use_pdep=False),
        ]
        config = dataclasses.replace(tiny_config(), epochs=1)
        for flags in variants:
            with self.subTest(flags=flags):
                log = Trainer(config, self.pools, flags).run().log
                self.assertEqual(len(log), 2)
                self.assertTrue(log["overall"].iloc[-1] >= 0.0)


if __name__ == "__main__":
    unittest.main()
