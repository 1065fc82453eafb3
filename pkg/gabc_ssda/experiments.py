"""Multi-seed runs, the ablation grid and sensitivity sweeps.

Every experiment is a list of independent cells (one configuration, one seed).
Cells run in worker processes when `experiment.workers` > 1; each cell is a
pure function of its job description.
"""
import dataclasses
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import pandas as pd
import yaml

from gabc_ssda import plots
from gabc_ssda.config import AblationFlags, Config, TrainConfig
from gabc_ssda.data import DomainPools, DomainSpec, generate, load_csv
from gabc_ssda.errors import ConfigError
from gabc_ssda.trainer import Trainer
from gabc_ssda.utils import fingerprint, timestamped_dir

logger = logging.getLogger(__name__)

# Components switched off relative to the full objective, one entry per row of
# the ablation grid. Rows "1".."16" follow the usual component table; the
# "no-*" rows remove graph refinement steps.
ABLATION_ROWS: Dict[str, Dict[str, bool]] = {
    "1": dict(use_adbc=False, use_wdbc=False, use_lab=False, use_con=False),
    "2": dict(use_wdbc=False, use_lab=False, use_con=False),
    "3": dict(use_adbc=False, use_lab=False, use_con=False),
    "4": dict(use_lab=False, use_con=False),
    "5": dict(use_adbc=False, use_wdbc=False, use_con=False),
    "6": dict(use_adbc=False, use_wdbc=False, use_lab=False),
    "7": dict(use_adbc=False, use_wdbc=False),
    "8": dict(use_wdbc=False, use_con=False),
    "9": dict(use_adbc=False, use_con=False),
    "10": dict(use_con=False),
    "11": dict(),
    "12": dict(augment_clustering=False),
    "13": dict(augment_clustering=False, use_lab=False, use_con=False),
    "14": dict(pseudo_in_wdbc=False),
    "15": dict(positive_term=False),
    "16": dict(negative_term=False),
    "no-cunr": dict(use_cunr=False),
    "no-pdep": dict(use_pdep=False),
    "no-cunr-pdep": dict(use_cunr=False, use_pdep=False),
}

FULL_ROW = "11"
BASELINE_ROW = "1"
# Single-component removals the full model is expected to beat
DIRECTION_ROWS = ("12", "14", "15", "16")

SWEEP_PARAMETERS = ("alpha", "beta", "tau", "tau_prime", "kappa")


@dataclass(frozen=True)
class CellJob:
    label: str
    train: TrainConfig
    flags: AblationFlags
    domain: DomainSpec
    out_dir: str
    data_seed: Optional[int] = None
    data_csv_path: Optional[str] = None
    dump_pseudo: bool = False
    dump_features: bool = False
    resume: Optional[str] = None


def row_flags(row: str) -> AblationFlags:
    if row not in ABLATION_ROWS:
        raise ConfigError(
            f"Unknown ablation row '{row}'; choose from {', '.join(ABLATION_ROWS)}"
        )
    return dataclasses.replace(AblationFlags(), **ABLATION_ROWS[row])


def _mark(flags: AblationFlags, component: str) -> str:
    if component == "ce":
        return "+"
    enabled = getattr(flags, f"use_{component}")
    if not enabled:
        return "-"
    if component in ("adbc", "wdbc"):
        notes = []
        if not flags.augment_clustering:
            notes.append("no-aug")
        if component == "wdbc" and not flags.pseudo_in_wdbc:
            notes.append("no-pseudo")
        if not flags.positive_term:
            notes.append("no-pos")
        if not flags.negative_term:
            notes.append("no-neg")
        return "+" + ("(" + ",".join(notes) + ")" if notes else "")
    return "+"


def load_pools(job: CellJob) -> DomainPools:
    if job.data_csv_path:
        return load_csv(job.data_csv_path, job.domain.num_classes)
    seed = job.train.seed if job.data_seed is None else job.data_seed
    return generate(job.domain, seed)


def run_cell(job: CellJob) -> dict:
    """Train one configuration with one seed and write its artefacts."""
    os.makedirs(job.out_dir, exist_ok=True)
    pools = load_pools(job)
    trainer = Trainer(
        job.train,
        pools,
        job.flags,
        out_dir=job.out_dir,
        dump_pseudo=job.dump_pseudo,
        dump_features=job.dump_features,
    )
    resume = job.resume if job.resume and os.path.isfile(job.resume) else None
    result = trainer.run(resume_from=resume)

    log = result.log
    plots.plot_accuracy_curves(
        {f"seed {job.train.seed}": log}, os.path.join(job.out_dir, "accuracy.png")
    )
    plots.plot_gate_ratios(log, os.path.join(job.out_dir, "gate_ratios.png"))
    if result.css:
        first, last = min(result.css), max(result.css)
        for epoch in {first, last}:
            plots.plot_css_heatmap(
                result.css[epoch],
                os.path.join(job.out_dir, f"css-epoch-{epoch:03d}.png"),
                title=f"CSS, epoch {epoch}",
            )
    logger.info(
        f"{job.label} seed {job.train.seed}: final target accuracy "
        f"{result.final_accuracy:.4f}"
    )
    return {
        "label": job.label,
        "seed": job.train.seed,
        "final_accuracy": result.final_accuracy,
        "log_path": os.path.join(job.out_dir, "train_log.csv"),
    }


def run_cells(jobs: Sequence[CellJob], workers: int = 1) -> List[dict]:
    """Run every cell, in order, optionally across worker processes."""
    if workers <= 1 or len(jobs) <= 1:
        return [run_cell(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run_cell, jobs))


def _echo_config(config: Config, out_dir: str) -> None:
    """Store the config exactly as given plus the fully resolved values."""
    with open(os.path.join(out_dir, "config.yaml"), "w") as stream:
        stream.write(config.raw_text)
    resolved = {
        "train": dataclasses.asdict(config.train),
        "data": dataclasses.asdict(config.domain),
        "ablation": dataclasses.asdict(config.ablation),
        "seeds": list(config.seeds),
        "data_seed": config.data_seed,
        "data_csv_path": config.data_csv_path,
    }
    resolved["data"]["translation"] = list(resolved["data"]["translation"])
    with open(os.path.join(out_dir, "resolved_config.yaml"), "w") as stream:
        yaml.safe_dump(resolved, stream, sort_keys=False)


def _jobs(
    config: Config,
    out_dir: str,
    label: str,
    flags: AblationFlags,
    train: Optional[TrainConfig] = None,
) -> List[CellJob]:
    train = train or config.train
    jobs = []
    for seed in config.seeds:
        cell_dir = os.path.join(out_dir, f"seed-{seed}")
        checkpoint = os.path.join(cell_dir, "checkpoint.pt")
        jobs.append(
            CellJob(
                label=label,
                train=dataclasses.replace(train, seed=seed),
                flags=flags,
                domain=config.domain,
                out_dir=cell_dir,
                data_seed=config.data_seed,
                data_csv_path=config.data_csv_path,
                dump_pseudo=config.dump_pseudo_labels,
                dump_features=config.dump_features,
                resume=checkpoint if config.resume else None,
            )
        )
    return jobs


def summarize(results: Sequence[dict], key: str = "label") -> pd.DataFrame:
    """One row per group with per-seed accuracies, mean and std."""
    frame = pd.DataFrame(results)
    rows = []
    for group, part in frame.groupby(key, sort=False):
        row = {key: group}
        for seed, accuracy in zip(part["seed"], part["final_accuracy"]):
            row[f"seed-{seed}"] = accuracy
        row["mean"] = part["final_accuracy"].mean()
        row["std"] = part["final_accuracy"].std(ddof=0)
        rows.append(row)
    return pd.DataFrame(rows)


def _out_dir(config: Config, command: str, out_dir: Optional[str]) -> str:
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        return out_dir
    return timestamped_dir(
        config.output_dir, f"{command}-{fingerprint(config.raw_text)}"
    )


def run_experiment(config: Config, out_dir: Optional[str] = None) -> pd.DataFrame:
    """Train the configured objective once per seed; returns the summary."""
    out_dir = _out_dir(config, "run", out_dir)
    _echo_config(config, out_dir)
    results = run_cells(_jobs(config, out_dir, "run", config.ablation), config.workers)
    logs = {
        f"seed {result['seed']}": pd.read_csv(result["log_path"]) for result in results
    }
    plots.plot_accuracy_curves(logs, os.path.join(out_dir, "accuracy.png"))

    summary = summarize(results)
    summary.to_csv(os.path.join(out_dir, "summary.csv"), index=False)
    row = summary.iloc[0]
    logger.info(
        f"Final target accuracy over {len(results)} seed(s): "
        f"{100 * row['mean']:.2f} ± {100 * row['std']:.2f}"
    )
    return summary


def check_ablation_direction(table: pd.DataFrame) -> List[str]:
    """Rows among DIRECTION_ROWS whose mean beats the full model.

    Inversions are reported, not fatal."""
    indexed = table.set_index("row")
    if FULL_ROW not in indexed.index:
        return []
    full = indexed.loc[FULL_ROW]
    inversions = []
    for row in DIRECTION_ROWS:
        if row not in indexed.index:
            continue
        other = indexed.loc[row]
        if other["mean"] > full["mean"]:
            gap = other["mean"] - full["mean"]
            within = gap <= max(full["std"], other["std"])
            logger.warning(
                f"Ablation row {row} ({other['mean']:.4f}) beats the full model "
                f"({full['mean']:.4f}){' within 1 std' if within else ''}"
            )
            inversions.append(row)
    return inversions


def run_ablation(
    config: Config, rows: Optional[Sequence[str]] = None, out_dir: Optional[str] = None
) -> pd.DataFrame:
    """Run the ablation grid (all rows unless `rows` is given) and emit one
    comparison table."""
    rows = list(rows) if rows else list(ABLATION_ROWS)
    flags_by_row = {row: row_flags(row) for row in rows}
    out_dir = _out_dir(config, "ablate", out_dir)
    _echo_config(config, out_dir)

    jobs = []
    for row, flags in flags_by_row.items():
        jobs.extend(_jobs(config, os.path.join(out_dir, f"row-{row}"), row, flags))
    results = run_cells(jobs, config.workers)

    table = summarize(results).rename(columns={"label": "row"})
    for position, component in enumerate(("ce", "adbc", "wdbc", "lab", "con"), 1):
        table.insert(
            position,
            component,
            [_mark(flags_by_row[row], component) for row in table["row"]],
        )
    table.to_csv(os.path.join(out_dir, "ablation.csv"), index=False)
    plots.plot_ablation(table, os.path.join(out_dir, "ablation.png"))
    check_ablation_direction(table)
    means = table.set_index("row")["mean"]
    if FULL_ROW in means.index and BASELINE_ROW in means.index:
        logger.info(
            f"Full objective gains {100 * (means[FULL_ROW] - means[BASELINE_ROW]):.2f} "
            f"points over supervision only"
        )
    logger.info("Ablation table:\n%s", table.to_string(index=False))
    return table


def run_sweep(
    config: Config,
    parameter: str,
    values: Sequence[float],
    out_dir: Optional[str] = None,
) -> pd.DataFrame:
    """Sensitivity of the configured objective to one hyperparameter."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"Cannot sweep '{parameter}'; choose from {', '.join(SWEEP_PARAMETERS)}"
        )
    if len({f"{value:g}" for value in values}) != len(values):
        raise ConfigError(f"Sweep values for '{parameter}' must be distinct")
    trains = [
        dataclasses.replace(config.train, **{parameter: float(value)}).validate()
        for value in values
    ]
    out_dir = _out_dir(config, f"sweep-{parameter}", out_dir)
    _echo_config(config, out_dir)
    jobs = []
    for value, train in zip(values, trains):
        label = f"{parameter}={value:g}"
        jobs.extend(
            _jobs(config, os.path.join(out_dir, label), label, config.ablation, train)
        )
    table = summarize(run_cells(jobs, config.workers)).rename(
        columns={"label": parameter}
    )
    table[parameter] = [float(value) for value in values]
    table.to_csv(os.path.join(out_dir, "sweep.csv"), index=False)
    logger.info("Sweep over %s:\n%s", parameter, table.to_string(index=False))
    return table
