"""Epoch planning: mix all in-domain mini-batches with a ratio-controlled
sample of external mini-batches.

Given in-domain batch count N and mixture ratio alpha, an epoch consists of
every in-domain batch exactly once plus floor(alpha * N) external batches
drawn without replacement from the pooled external datasets, the whole
sequence shuffled. alpha = 0 reduces to plain in-domain training.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .data import Dataset, TaskKind
from .seeding import derive_rng


@dataclass(frozen=True)
class MiniBatch:
    """An ordered slice of one dataset's sample ids."""

    dataset_name: str
    sample_ids: tuple[str, ...]
    task_kind: TaskKind
    head_group: str

    def __post_init__(self):
        if not self.sample_ids:
            raise ValueError("mini-batch must be non-empty")

    def __len__(self) -> int:
        return len(self.sample_ids)


@dataclass(frozen=True)
class MixtureConfig:
    """Knobs of the epoch planner.

    batch_size may be a single int or a per-dataset mapping; unmapped
    datasets fall back to the "*" entry or 16.
    """

    alpha: float = 0.5
    batch_size: int | dict = 16
    max_epoch: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.max_epoch < 1:
            raise ValueError("max_epoch must be >= 1")
        for size in [self.batch_size] if isinstance(self.batch_size, int) else self.batch_size.values():
            if size < 1:
                raise ValueError("batch_size must be >= 1")

    def batch_size_for(self, dataset_name: str) -> int:
        if isinstance(self.batch_size, int):
            return self.batch_size
        return self.batch_size.get(dataset_name, self.batch_size.get("*", 16))


@dataclass
class EpochPlan:
    """The ordered mini-batch sequence of one training epoch."""

    batches: list[MiniBatch]
    epoch_index: int = 0
    n_in_domain: int = 0
    n_external: int = 0

    def __post_init__(self):
        if len(self.batches) != self.n_in_domain + self.n_external:
            raise ValueError(
                f"plan length {len(self.batches)} != "
                f"{self.n_in_domain} in-domain + {self.n_external} external"
            )

    def __len__(self) -> int:
        return len(self.batches)


def partition_batches(dataset: Dataset, batch_size: int, seed: int = 0) -> list[MiniBatch]:
    """Shuffle a dataset's samples and chunk them into mini-batches.

    Batch count is ceil(|D| / batch_size); the final partial batch is kept.
    Deterministic given seed.
    """
    if len(dataset) == 0:
        raise ValueError(f"cannot partition empty dataset {dataset.name!r}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = derive_rng(seed, "partition", dataset.name)
    order = rng.permutation(len(dataset))
    ids = [dataset.samples[int(i)].id for i in order]
    batches = []
    for start in range(0, len(ids), batch_size):
        batches.append(
            MiniBatch(
                dataset_name=dataset.name,
                sample_ids=tuple(ids[start : start + batch_size]),
                task_kind=dataset.task_kind,
                head_group=dataset.head_group,
            )
        )
    return batches


def _sample_external(pool: list[MiniBatch], count: int, rng) -> list[MiniBatch]:
    """Draw count batches without replacement, reshuffling the pool on each
    full pass when count exceeds the pool size."""
    if count == 0 or not pool:
        return []
    picked: list[MiniBatch] = []
    while len(picked) < count:
        take = min(count - len(picked), len(pool))
        order = rng.permutation(len(pool))
        picked.extend(pool[int(i)] for i in order[:take])
    return picked


def build_epoch(
    in_domain_batches: list[MiniBatch],
    external_batches: list[MiniBatch],
    alpha: float,
    seed: int = 0,
    epoch_index: int = 0,
) -> EpochPlan:
    """Assemble one epoch: all in-domain batches plus floor(alpha*N) external
    batches from the pooled external datasets, in a random order.

    External picks are without replacement within an epoch; if the request
    exceeds the pool, the pool is cycled with a fresh shuffle per pass. An
    empty external pool yields an in-domain-only plan.
    """
    if not in_domain_batches:
        raise ValueError("in-domain batch list must be non-empty")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    n = len(in_domain_batches)
    n_external = math.floor(alpha * n) if external_batches else 0
    rng = derive_rng(seed, "epoch", epoch_index)
    chosen = _sample_external(list(external_batches), n_external, rng)
    combined = list(in_domain_batches) + chosen
    order = rng.permutation(len(combined))
    batches = [combined[int(i)] for i in order]
    return EpochPlan(
        batches=batches, epoch_index=epoch_index, n_in_domain=n, n_external=n_external
    )


def save_plan(plan: EpochPlan, path: str | Path) -> None:
    """Write a plan as JSON-Lines: one batch per line with its position."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for position, batch in enumerate(plan.batches):
            fh.write(
                json.dumps(
                    {
                        "position": position,
                        "dataset": batch.dataset_name,
                        "sample_ids": list(batch.sample_ids),
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_plan(path: str | Path) -> list[dict]:
    """Read back a plan audit file as a list of {position, dataset, sample_ids}."""
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    rows.sort(key=lambda r: r["position"])
    return rows
