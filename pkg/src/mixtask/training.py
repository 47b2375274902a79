"""Multi-task training with mixture-ratio epoch plans, plus per-task
fine-tuning.

One run is sequential and fully deterministic given (data, seeds, config).
After every epoch the in-domain development sets are evaluated; the
checkpoint returned is the one maximizing the selection metric (unweighted
mean of per-dataset dev metrics: accuracy for classification, sign-accuracy
for regression).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import gold_binary_label
from .data import Dataset
from .featurize import FeatureCache, SourceSpec
from .model import Checkpoint, ToyModel, TrainingBatch, grad_step
from .scheduler import MiniBatch, MixtureConfig, build_epoch, partition_batches
from .seeding import derive_seed


@dataclass
class TaskData:
    """One task's training split plus optional development split."""

    train: Dataset
    dev: Optional[Dataset] = None

    @property
    def name(self) -> str:
        return self.train.name


@dataclass
class TrainConfig:
    lr_multitask: float = 5e-5
    lr_finetune: float = 5e-6
    epochs_finetune: int = 6
    mixture: MixtureConfig = field(default_factory=MixtureConfig)
    selection_metric: str = "mean_dev"
    hidden_dim: int = 32

    def __post_init__(self):
        if self.lr_multitask <= 0 or self.lr_finetune <= 0:
            raise ValueError("learning rates must be > 0")
        if self.epochs_finetune < 0:
            raise ValueError("epochs_finetune must be >= 0")
        if self.selection_metric != "mean_dev":
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[dict]
    initial_metrics: dict


def dev_metric(model: ToyModel, dataset: Dataset, features: dict[str, np.ndarray]) -> float:
    """Accuracy for classification, sign-accuracy for regression, in [0, 1]."""
    mat = np.stack([features[s.id] for s in dataset])
    if dataset.task_kind.is_classification:
        probs = model.class_probs(mat, dataset.head_group)
        predicted = probs.argmax(axis=1)
        gold = np.array([s.label for s in dataset])
    else:
        scores = model.reg_scores(mat, dataset.head_group)
        predicted = (scores >= 0).astype(int)
        gold = np.array([gold_binary_label(s) for s in dataset])
    return float((predicted == gold).mean())


def _head_specs(tasks: list[TaskData]) -> dict:
    specs = {}
    for task in tasks:
        group = task.train.head_group
        kind = task.train.task_kind
        if group in specs and specs[group] != kind:
            raise ValueError(
                f"head group {group!r} is shared by tasks with different kinds: "
                f"{specs[group]} vs {kind}"
            )
        specs[group] = kind
    return specs


def _make_training_batch(
    batch: MiniBatch, dataset: Dataset, features: dict[str, np.ndarray]
) -> TrainingBatch:
    by_id = {s.id: s for s in dataset}
    samples = [by_id[i] for i in batch.sample_ids]
    mat = np.stack([features[s.id] for s in samples])
    if batch.task_kind.is_classification:
        return TrainingBatch(
            features=mat,
            head_group=batch.head_group,
            task_kind=batch.task_kind,
            labels=np.array([s.label for s in samples]),
            dataset_name=batch.dataset_name,
        )
    return TrainingBatch(
        features=mat,
        head_group=batch.head_group,
        task_kind=batch.task_kind,
        targets=np.array([s.target_score for s in samples], dtype=np.float64),
        dataset_name=batch.dataset_name,
    )


def _eval_in_domain(model, tasks, cache: FeatureCache) -> tuple[dict, float]:
    metrics = {}
    for task in tasks:
        if task.train.role == "in_domain" and task.dev is not None:
            metrics[task.name] = dev_metric(model, task.dev, cache.lookup(task.dev, model.source))
    selection = float(np.mean(list(metrics.values())))
    return metrics, selection


def train_multitask(
    tasks: list[TaskData],
    source: SourceSpec,
    config: TrainConfig,
    cache: Optional[FeatureCache] = None,
) -> TrainResult:
    """Run the full mixture-ratio loop and return the best checkpoint.

    Each epoch re-divides every dataset into fresh shuffled mini-batches,
    executes the epoch plan (all in-domain batches plus the sampled external
    ones), then evaluates every in-domain dev set. Requires at least one
    in-domain task with a dev split.
    """
    in_domain = [t for t in tasks if t.train.role == "in_domain"]
    external = [t for t in tasks if t.train.role == "external"]
    if not in_domain:
        raise ValueError("need at least one in-domain task")
    if not any(t.dev is not None for t in in_domain):
        raise ValueError("need at least one in-domain task with a dev split")

    cache = cache or FeatureCache()
    run_seed = config.mixture.seed
    model = ToyModel.create(source, _head_specs(tasks), config.hidden_dim, run_seed)

    features = {t.name: cache.lookup(t.train, source) for t in tasks}
    initial_metrics, _ = _eval_in_domain(model, in_domain, cache)

    history: list[dict] = []
    best: Optional[Checkpoint] = None
    for epoch in range(1, config.mixture.max_epoch + 1):
        partition_seed = derive_seed(run_seed, "epoch-shuffle", epoch)
        in_batches: list[MiniBatch] = []
        for task in in_domain:
            in_batches.extend(
                partition_batches(
                    task.train, config.mixture.batch_size_for(task.name), partition_seed
                )
            )
        ext_pool: list[MiniBatch] = []
        for task in external:
            ext_pool.extend(
                partition_batches(
                    task.train, config.mixture.batch_size_for(task.name), partition_seed
                )
            )
        plan = build_epoch(
            in_batches, ext_pool, config.mixture.alpha, seed=run_seed, epoch_index=epoch
        )

        datasets_by_name = {t.name: t.train for t in tasks}
        epoch_loss = 0.0
        for batch in plan.batches:
            tb = _make_training_batch(
                batch, datasets_by_name[batch.dataset_name], features[batch.dataset_name]
            )
            epoch_loss += grad_step(model, tb, config.lr_multitask)

        metrics, selection = _eval_in_domain(model, in_domain, cache)
        history.append(
            {
                "epoch": epoch,
                "train_loss": epoch_loss,
                "plan_length": len(plan),
                "dev_metrics": metrics,
                "selection": selection,
            }
        )
        if best is None or selection > best.selection_value:
            best = Checkpoint(
                model=model.copy(),
                stage="multitask",
                epoch=epoch,
                dev_metrics=metrics,
                selection_value=selection,
                seeds={"run": run_seed},
            )

    return TrainResult(best=best, history=history, initial_metrics=initial_metrics)


def fine_tune_task(
    checkpoint: Checkpoint,
    task: TaskData,
    config: TrainConfig,
    cache: Optional[FeatureCache] = None,
) -> Checkpoint:
    """Continue training on one task only, returning this stage's best dev
    checkpoint.

    The input checkpoint is always a selection candidate, so the returned
    dev metric never drops below the input's; zero epochs returns the input
    unchanged.
    """
    if task.train.head_group not in checkpoint.model.heads:
        raise ValueError(
            f"checkpoint has no head for group {task.train.head_group!r} (task {task.name!r})"
        )
    if task.dev is None:
        raise ValueError(f"fine-tuning {task.name!r} requires a dev split")

    cache = cache or FeatureCache()
    source = checkpoint.model.source
    run_seed = checkpoint.seeds.get("run", 0)
    features = cache.lookup(task.train, source)
    dev_features = cache.lookup(task.dev, source)

    model = checkpoint.model.copy()
    best_model = model.copy()
    best_metric = dev_metric(model, task.dev, dev_features)
    best_epoch = 0
    for epoch in range(1, config.epochs_finetune + 1):
        seed = derive_seed(run_seed, "finetune", task.name, epoch)
        for batch in partition_batches(task.train, config.mixture.batch_size_for(task.name), seed):
            tb = _make_training_batch(batch, task.train, features)
            grad_step(model, tb, config.lr_finetune)
        metric = dev_metric(model, task.dev, dev_features)
        if metric > best_metric:
            best_metric = metric
            best_model = model.copy()
            best_epoch = epoch

    return Checkpoint(
        model=best_model,
        stage=f"finetune:{task.name}",
        epoch=best_epoch,
        dev_metrics={task.name: best_metric},
        selection_value=best_metric,
        config_hash=checkpoint.config_hash,
        seeds=checkpoint.seeds,
    )
