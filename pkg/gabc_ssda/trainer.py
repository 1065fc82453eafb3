import logging
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import torch

from gabc_ssda.config import AblationFlags, TrainConfig
from gabc_ssda.data import (
    AugmentParams,
    DomainPools,
    LabeledSet,
    augment,
    sample_indices,
)
from gabc_ssda.errors import InputError
from gabc_ssda.evaluation import (
    CssMatrix,
    css_matrix,
    gate_ratio_stats,
    target_accuracy,
)
from gabc_ssda.gates import GateThresholds, PairGates, batch_gates
from gabc_ssda.losses import (
    LossBreakdown,
    LossWeights,
    adbc_loss,
    consistency_kl_loss,
    label_consistency_loss,
    overall_loss,
    supervised_ce,
    wdbc_loss,
)
from gabc_ssda.model import GabcNet, build_model, load_checkpoint, save_checkpoint
from gabc_ssda.pseudo_labels import (
    PseudoLabeledSet,
    dump_pseudo_labels,
    select_pseudo_labels,
)
from gabc_ssda.utils import make_generator

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["ce", "lab", "con", "wdbc", "adbc", "abc", "overall"]
LOG_COLUMNS = (
    ["epoch", "lr"]
    + LOSS_COLUMNS
    + [
        "target_accuracy",
        "pseudo_count",
        "pseudo_accuracy",
        "node_ratio",
        "combined_ratio",
        "similar_high",
        "similar_low",
        "dissimilar_high",
        "dissimilar_low",
        "css_diagonal",
        "css_off_diagonal",
    ]
)


def lr_schedule(base_lr: float, t: int) -> float:
    """Inverse-decay schedule: base_lr / (1 + 1e-4 * t) ** 0.75."""
    if t < 0:
        raise InputError(f"Iteration index must be non-negative, got {t}")
    return base_lr / (1.0 + 0.0001 * t) ** 0.75


def thresholds_of(config: TrainConfig) -> GateThresholds:
    return GateThresholds(tau=config.tau, kappa=config.kappa)


def weights_of(config: TrainConfig) -> LossWeights:
    return LossWeights(alpha=config.alpha, beta=config.beta)


@dataclass
class BatchBundle:
    """The four mini-batches of one iteration, clean and augmented."""

    source: LabeledSet
    labeled: LabeledSet
    pseudo: LabeledSet
    pseudo_augmented: torch.Tensor
    unlabeled: torch.Tensor
    unlabeled_augmented: torch.Tensor

    @property
    def has_pseudo(self) -> bool:
        return len(self.pseudo) > 0


@dataclass
class StepTargets:
    """Quantities held constant during one gradient step."""

    source_gates: PairGates
    target_gates: PairGates
    unlabeled_clean: torch.Tensor


def sample_bundle(
    pools: DomainPools,
    pseudo: PseudoLabeledSet,
    config: TrainConfig,
    iteration: int,
) -> BatchBundle:
    """Draw the bundle of `iteration`; a pure function of (config.seed, iteration)
    given the pools and the pseudo-labeled set."""
    generator = make_generator(config.seed, "bundle", iteration)
    source = pools.source.subset(
        sample_indices(len(pools.source), config.batch_source, generator)
    )
    labeled = pools.labeled.subset(
        sample_indices(len(pools.labeled), config.batch_labeled, generator)
    )
    chosen = sample_indices(len(pseudo), config.batch_pseudo, generator)
    pseudo_batch = LabeledSet(
        pools.unlabeled.features[pseudo.indices[chosen]], pseudo.labels[chosen]
    )
    unlabeled = pools.unlabeled.features[
        sample_indices(len(pools.unlabeled), config.batch_unlabeled, generator)
    ]
    params = AugmentParams(config.noise_scale, config.erase_prob)
    return BatchBundle(
        source=source,
        labeled=labeled,
        pseudo=pseudo_batch,
        pseudo_augmented=augment(pseudo_batch.features, params, generator),
        unlabeled=unlabeled,
        unlabeled_augmented=augment(unlabeled, params, generator),
    )


def _pseudo_in_wdbc(bundle: BatchBundle, flags: AblationFlags) -> bool:
    return flags.pseudo_in_wdbc and bundle.has_pseudo


def prepare_targets(
    model: GabcNet, bundle: BatchBundle, config: TrainConfig, flags: AblationFlags
) -> StepTargets:
    """Gates and the consistency target, from clean predictions without
    gradient."""
    thresholds = thresholds_of(config)
    with torch.no_grad():
        p_unlabeled = model(bundle.unlabeled)
        p_source = model(bundle.source.features)
        p_pool = model(bundle.labeled.features)
        pool_labels = bundle.labeled.labels
        if _pseudo_in_wdbc(bundle, flags):
            p_pool = torch.cat([p_pool, model(bundle.pseudo.features)])
            pool_labels = torch.cat([pool_labels, bundle.pseudo.labels])
    gate_options = dict(use_cunr=flags.use_cunr, use_pdep=flags.use_pdep)
    return StepTargets(
        source_gates=batch_gates(
            p_unlabeled, p_source, bundle.source.labels, thresholds, **gate_options
        ),
        target_gates=batch_gates(
            p_unlabeled, p_pool, pool_labels, thresholds, **gate_options
        ),
        unlabeled_clean=p_unlabeled,
    )


def forward_losses(
    model: GabcNet,
    bundle: BatchBundle,
    targets: StepTargets,
    config: TrainConfig,
    flags: AblationFlags,
) -> Dict[str, torch.Tensor]:
    """Differentiable loss components; disabled components are constant zero."""
    p_source = model(bundle.source.features)
    p_labeled = model(bundle.labeled.features)
    zero = p_source.new_zeros(())
    components = dict(
        ce=supervised_ce(
            torch.cat([p_source, p_labeled]),
            torch.cat([bundle.source.labels, bundle.labeled.labels]),
        ),
        lab=zero,
        con=zero,
        wdbc=zero,
        adbc=zero,
    )

    clustering = flags.use_adbc or flags.use_wdbc
    p_augmented = None
    if flags.use_con or (clustering and flags.augment_clustering):
        p_augmented = model(bundle.unlabeled_augmented)

    if clustering:
        if flags.augment_clustering:
            p_unlabeled = p_augmented
        else:
            p_unlabeled = model(bundle.unlabeled)
        terms = dict(positive=flags.positive_term, negative=flags.negative_term)
        if flags.use_adbc:
            components["adbc"] = adbc_loss(
                p_unlabeled, p_source, targets.source_gates, **terms
            )
        if flags.use_wdbc:
            p_pseudo = None
            if _pseudo_in_wdbc(bundle, flags):
                p_pseudo = model(bundle.pseudo.features)
            components["wdbc"] = wdbc_loss(
                p_unlabeled, p_labeled, targets.target_gates, p_pseudo, **terms
            )

    if flags.use_lab and bundle.has_pseudo:
        components["lab"] = label_consistency_loss(
            model(bundle.pseudo_augmented), bundle.pseudo.labels
        )
    if flags.use_con:
        components["con"] = consistency_kl_loss(
            targets.unlabeled_clean, p_augmented, config.sharpen_temperature
        )
    return components


def _step(optimizer: torch.optim.Optimizer, loss: torch.Tensor) -> None:
    optimizer.zero_grad()
    if loss.requires_grad:
        loss.backward()
        optimizer.step()


def train_step(
    model: GabcNet,
    optimizer: torch.optim.Optimizer,
    bundle: BatchBundle,
    config: TrainConfig,
    flags: AblationFlags,
    iteration: int,
) -> LossBreakdown:
    """One SGD step on the overall objective; updates `model` in place.

    With `config.two_phase` the iteration first steps on the supervised loss
    and then on the remaining terms, re-evaluated after the first step.

    Raises:
        NumericError: a loss component is not finite; no parameter changes.
    """
    lr = lr_schedule(config.base_lr, iteration)
    for group in optimizer.param_groups:
        group["lr"] = lr
    weights = weights_of(config)

    targets = prepare_targets(model, bundle, config, flags)
    components = forward_losses(model, bundle, targets, config, flags)
    if not config.two_phase:
        total = overall_loss(components, weights)
        _step(optimizer, total)
        return LossBreakdown.from_components(weights=weights, **components)

    # Raises before any parameter changes
    overall_loss(components, weights)
    ce = components["ce"]
    _step(optimizer, ce)
    targets = prepare_targets(model, bundle, config, flags)
    components = forward_losses(model, bundle, targets, config, flags)
    components["ce"] = ce.detach()
    rest = dict(components, ce=ce.new_zeros(()))
    _step(optimizer, overall_loss(rest, weights))
    return LossBreakdown.from_components(weights=weights, **components)


@dataclass
class RunResult:
    log: pd.DataFrame
    css: Dict[int, CssMatrix] = field(default_factory=dict)
    model: Optional[GabcNet] = None
    checkpoint_path: Optional[str] = None

    @property
    def final_accuracy(self) -> float:
        return float(self.log["target_accuracy"].iloc[-1])


class Trainer:
    """Epoch loop around `train_step` with pseudo-label refresh, evaluation,
    logging and checkpointing.

    Args:
        config: Hyperparameters, including the run seed.

        pools: D_s, D_l, D_u and the target test set.

        flags: Ablation switches; the default is the full objective.

        out_dir: Where logs, CSS matrices and the checkpoint go. Nothing is
            written when None.
    """

    def __init__(
        self,
        config: TrainConfig,
        pools: DomainPools,
        flags: AblationFlags = AblationFlags(),
        out_dir: Optional[str] = None,
        dump_pseudo: bool = False,
        dump_features: bool = False,
    ):
        self.config = config
        self.pools = pools.validate()
        self.flags = flags
        self.out_dir = out_dir
        self.dump_pseudo = dump_pseudo
        self.dump_features = dump_features
        self.model = build_model(
            pools.input_dim,
            pools.num_classes,
            config.seed,
            hidden_dim=config.hidden_dim,
            feature_dim=config.feature_dim,
            temperature=config.temperature,
        )
        self.optimizer = self._make_optimizer()
        self.pseudo = PseudoLabeledSet.empty()
        self.records: List[dict] = []
        self.css: Dict[int, CssMatrix] = {}
        self.epoch = 0
        if out_dir is not None:
            os.makedirs(os.path.join(out_dir, "css"), exist_ok=True)
            if dump_pseudo:
                os.makedirs(os.path.join(out_dir, "pseudo_labels"), exist_ok=True)

    def _make_optimizer(self) -> torch.optim.Optimizer:
        return torch.optim.SGD(
            self.model.parameters(),
            lr=self.config.base_lr,
            momentum=self.config.momentum,
            weight_decay=self.config.weight_decay,
        )

    @property
    def checkpoint_path(self) -> Optional[str]:
        if self.out_dir is None:
            return None
        return os.path.join(self.out_dir, "checkpoint.pt")

    def evaluate(
        self, epoch: int, losses: Optional[Dict[str, float]], lr: float
    ) -> dict:
        pools = self.pools
        labeled_pools = [pools.labeled, pools.source]
        gate_stats = gate_ratio_stats(
            self.model, pools.unlabeled, labeled_pools, thresholds_of(self.config)
        )
        row = {"epoch": epoch, "lr": lr}
        row.update({name: float("nan") for name in LOSS_COLUMNS})
        row.update(losses or {})
        row["target_accuracy"] = target_accuracy(self.model, pools.test)
        row["pseudo_count"] = len(self.pseudo)
        row["pseudo_accuracy"] = self.pseudo.accuracy(pools.unlabeled.eval_labels)
        row.update(gate_stats.as_dict())
        row["css_diagonal"] = row["css_off_diagonal"] = float("nan")
        if pools.unlabeled.eval_labels is not None:
            css = css_matrix(self.model, pools.unlabeled, labeled_pools)
            self.css[epoch] = css
            row["css_diagonal"] = css.diagonal_mean()
            row["css_off_diagonal"] = css.off_diagonal_mean()
            if self.out_dir is not None:
                css.to_frame().to_csv(
                    os.path.join(self.out_dir, "css", f"epoch-{epoch:03d}.csv")
                )
        return row

    def _trainer_state(self) -> dict:
        return {
            "epoch": self.epoch,
            "records": self.records,
            "pseudo": {
                "indices": self.pseudo.indices,
                "labels": self.pseudo.labels,
                "confidences": self.pseudo.confidences,
            },
            "config": asdict(self.config),
            "flags": asdict(self.flags),
        }

    def _save(self) -> None:
        if self.out_dir is None:
            return
        log_path = os.path.join(self.out_dir, "train_log.csv")
        self.log_frame().to_csv(log_path, index=False)
        save_checkpoint(
            self.checkpoint_path,
            self.model,
            self.config.seed,
            optimizer=self.optimizer,
            trainer_state=self._trainer_state(),
        )

    def restore(self, path: str) -> None:
        """Continue from a checkpoint written by a run with the same config."""
        model, payload = load_checkpoint(path)
        state = payload["trainer"]
        if state.get("config") != asdict(self.config):
            logger.warning("Resuming %s with a config that differs from its own", path)
        self.model = model
        self.optimizer = self._make_optimizer()
        if payload["optimizer"] is not None:
            self.optimizer.load_state_dict(payload["optimizer"])
        self.epoch = int(state["epoch"])
        self.records = [dict(record) for record in state["records"]]
        pseudo = state["pseudo"]
        self.pseudo = PseudoLabeledSet(
            pseudo["indices"], pseudo["labels"], pseudo["confidences"]
        )
        self.css = self._read_css()
        logger.info("Resumed from %s at epoch %d", path, self.epoch)

    def _read_css(self) -> Dict[int, CssMatrix]:
        """CSS matrices of the epochs already finished, from `out_dir/css`."""
        css = {}
        if self.out_dir is None:
            return css
        for epoch in range(self.epoch + 1):
            path = os.path.join(self.out_dir, "css", f"epoch-{epoch:03d}.csv")
            if os.path.isfile(path):
                css[epoch] = CssMatrix.read_csv(path)
        return css

    def log_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=LOG_COLUMNS)

    def run(
        self, resume_from: Optional[str] = None, stop_after: Optional[int] = None
    ) -> RunResult:
        """Train for `config.epochs` epochs.

        Args:
            resume_from: Checkpoint to continue from.

            stop_after: Stop once this epoch is finished, leaving a checkpoint
                that a later call can resume from.
        """
        config = self.config
        if resume_from is not None:
            self.restore(resume_from)
        else:
            self.records.append(self.evaluate(0, None, lr_schedule(config.base_lr, 0)))
            self._save()

        for epoch in range(self.epoch + 1, config.epochs + 1):
            if (epoch - 1) % config.refresh_every == 0:
                self.pseudo = select_pseudo_labels(
                    self.model, self.pools.unlabeled, config.tau_prime
                )
                if self.dump_pseudo and self.out_dir is not None:
                    dump_pseudo_labels(
                        self.pseudo,
                        os.path.join(
                            self.out_dir, "pseudo_labels", f"epoch-{epoch:03d}.csv"
                        ),
                        self.pools.unlabeled.eval_labels,
                    )

            totals = defaultdict(float)
            first = (epoch - 1) * config.iterations_per_epoch
            for iteration in range(first, first + config.iterations_per_epoch):
                bundle = sample_bundle(self.pools, self.pseudo, config, iteration)
                breakdown = train_step(
                    self.model, self.optimizer, bundle, config, self.flags, iteration
                )
                logger.debug("Iteration %d: %s", iteration, breakdown)
                for name, value in breakdown.as_dict().items():
                    totals[name] += value
            losses = {
                name: totals[name] / config.iterations_per_epoch
                for name in LOSS_COLUMNS
            }

            self.epoch = epoch
            row = self.evaluate(epoch, losses, lr_schedule(config.base_lr, iteration))
            self.records.append(row)
            logger.info(
                f"Epoch {epoch}/{config.epochs}: overall={row['overall']:.4f} "
                f"acc={row['target_accuracy']:.4f} |D_pu|={row['pseudo_count']} "
                f"g_i={row['node_ratio']:.3f}"
            )
            self._save()
            if stop_after is not None and epoch >= stop_after:
                break

        if self.dump_features and self.out_dir is not None:
            path = os.path.join(self.out_dir, "features.csv")
            dump_features(self.model, self.pools, path)
        return RunResult(
            log=self.log_frame(),
            css=dict(self.css),
            model=self.model,
            checkpoint_path=self.checkpoint_path,
        )


def dump_features(model: GabcNet, pools: DomainPools, path: str) -> None:
    """Normalized features of every pool, one row per sample, for external
    plotting."""
    frames = []
    with torch.no_grad():
        for split in ("source", "labeled", "unlabeled", "test"):
            pool = getattr(pools, split)
            features = model.features(pool.features).numpy()
            frame = pd.DataFrame(
                features, columns=[f"f{i}" for i in range(features.shape[1])]
            )
            labels = getattr(pool, "labels", None)
            if labels is None:
                labels = pool.eval_labels
            frame.insert(
                0,
                "label",
                labels.numpy() if labels is not None else np.full(len(pool), -1),
            )
            frame.insert(0, "split", split)
            frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)


def run(
    config: TrainConfig,
    pools: DomainPools,
    flags: AblationFlags = AblationFlags(),
    out_dir: Optional[str] = None,
    resume_from: Optional[str] = None,
    **options,
) -> RunResult:
    trainer = Trainer(config, pools, flags, out_dir, **options)
    return trainer.run(resume_from=resume_from)

