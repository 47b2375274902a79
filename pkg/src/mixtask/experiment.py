"""Single-source vs multi-source ensemble comparison.

Members of one source family share systematic errors; members of different
families fail independently. This module measures how much more a
mixed-source majority-vote ensemble gains over its members' average
accuracy than a single-source ensemble does.

Two member pools are supported:

* a synthetic noise model (default): member predictions are generated with
  a per-family shared error component plus independent per-member errors,
  calibrated so member accuracy falls in a configured window. On a shared
  family error, every erring member picks its wrong class independently, so
  a mixed ensemble often splits a family's shared error into a three-way
  vote tie that the summed-probability tie-break resolves correctly. A
  single-source ensemble cannot recover those samples. Needs >= 3 classes.

* trained toy models: the caller supplies real prediction sets grouped by
  source family.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .inference import PredictionSet, combine_predictions
from .metrics import accuracy
from .seeding import derive_rng, derive_seed


@dataclass(frozen=True)
class NoiseModelConfig:
    """Parameters of the constructed noise model."""

    n_samples: int = 1000
    n_classes: int = 3
    members_per_family: int = 3
    family_names: tuple[str, ...] = ("family_a", "family_b")
    shared_error_range: tuple[float, float] = (0.05, 0.10)
    member_accuracy_range: tuple[float, float] = (0.75, 0.92)
    confident_range: tuple[float, float] = (0.65, 0.90)
    wrong_range: tuple[float, float] = (0.45, 0.65)

    def __post_init__(self):
        if self.n_classes < 3:
            raise ValueError("noise model needs >= 3 classes for split-vote ties")
        if len(self.family_names) < 2:
            raise ValueError("need >= 2 source families")
        if self.members_per_family < 3:
            raise ValueError("need >= 3 members per family")


def synthesize_family_predictions(
    config: NoiseModelConfig, trial_seed: int
) -> tuple[dict[str, int], dict[str, list[PredictionSet]]]:
    """Generate gold labels and per-family member prediction sets.

    Per family, a set of shared-error samples flips every member; each
    member errs on an additional personal set drawn from the remaining
    samples, sized so that realized accuracy lands within 2/n of a target
    drawn inside the configured accuracy window. Erring members place
    wrong_range mass on an independently chosen wrong class; correct
    members place confident_range mass on the truth; leftover mass is split
    evenly over the other classes.
    """
    rng = derive_rng(trial_seed, "noise-gold")
    gold_arr = rng.integers(0, config.n_classes, size=config.n_samples)
    n = config.n_samples
    lo_acc, hi_acc = config.member_accuracy_range
    families: dict[str, list[PredictionSet]] = {}
    for family in config.family_names:
        family_rng = derive_rng(trial_seed, "noise-family", family)
        shared_rate = family_rng.uniform(*config.shared_error_range)
        shared_idx = family_rng.choice(n, size=round(shared_rate * n), replace=False)
        shared_error = np.zeros(n, dtype=bool)
        shared_error[shared_idx] = True
        clean_idx = np.flatnonzero(~shared_error)
        members = []
        for member_idx in range(config.members_per_family):
            member_rng = derive_rng(trial_seed, "noise-member", family, member_idx)
            target_acc = member_rng.uniform(lo_acc + 0.01, hi_acc - 0.01)
            personal_rate = max(0.0, 1.0 - target_acc / (1.0 - shared_rate))
            n_personal = round(personal_rate * len(clean_idx))
            personal_idx = member_rng.choice(clean_idx, size=n_personal, replace=False)
            wrong = shared_error.copy()
            wrong[personal_idx] = True
            preds = {}
            for i in range(config.n_samples):
                truth = int(gold_arr[i])
                if wrong[i]:
                    offset = int(member_rng.integers(1, config.n_classes))
                    predicted = (truth + offset) % config.n_classes
                    top_mass = member_rng.uniform(*config.wrong_range)
                else:
                    predicted = truth
                    top_mass = member_rng.uniform(*config.confident_range)
                vec = np.full(config.n_classes, (1.0 - top_mass) / (config.n_classes - 1))
                vec[predicted] = top_mass
                preds[f"s{i:05d}"] = vec
            dev_acc = float(np.mean(~wrong))
            members.append(
                PredictionSet(
                    model_id=f"{family}-m{member_idx}",
                    task="noise-model",
                    kind="classification",
                    predictions=preds,
                    dev_metric=100.0 * dev_acc,
                )
            )
        families[family] = members
    gold = {f"s{i:05d}": int(gold_arr[i]) for i in range(n)}
    return gold, families


def _member_accuracy(ps: PredictionSet, gold: dict[str, int]) -> float:
    ids = sorted(gold)
    predicted = [int(np.argmax(ps.predictions[i])) for i in ids]
    return accuracy(predicted, [gold[i] for i in ids])


def _ensemble_accuracy(members: Sequence[PredictionSet], gold: dict[str, int]) -> float:
    combined = combine_predictions(members)
    ids = sorted(gold)
    predicted = [combined[i].label for i in ids]
    return accuracy(predicted, [gold[i] for i in ids])


@dataclass
class EnsembleRow:
    """One comparison row: average member accuracy vs ensemble accuracy."""

    grouping: str
    members: list[str]
    avg_member_accuracy: float
    ensemble_accuracy: float

    @property
    def improvement(self) -> float:
        return self.ensemble_accuracy - self.avg_member_accuracy

    def to_dict(self) -> dict:
        return {
            "grouping": self.grouping,
            "members": self.members,
            "avg_member_accuracy": self.avg_member_accuracy,
            "ensemble_accuracy": self.ensemble_accuracy,
            "improvement": self.improvement,
        }


@dataclass
class TrialResult:
    trial: int
    single_rows: list[EnsembleRow]
    mixed_rows: list[EnsembleRow]
    member_accuracies: dict[str, float] = field(default_factory=dict)


def compare_groupings(
    families: dict[str, list[PredictionSet]], gold: dict[str, int], trial: int = 0
) -> TrialResult:
    """Form same-size single-source and mixed-source ensembles and score both.

    Single-source rows take the first 3 members of each family; mixed rows
    swap one member across family pairs (2+1 both ways), keeping ensemble
    size constant at 3.
    """
    if len(families) < 2:
        raise ValueError("need >= 2 source families")
    for name, members in families.items():
        if len(members) < 3:
            raise ValueError(f"family {name!r} has {len(members)} members, needs >= 3")
    names = list(families)
    member_accs = {
        ps.model_id: _member_accuracy(ps, gold) for mm in families.values() for ps in mm
    }

    def row(grouping: str, members: Sequence[PredictionSet]) -> EnsembleRow:
        return EnsembleRow(
            grouping=grouping,
            members=[ps.model_id for ps in members],
            avg_member_accuracy=float(np.mean([member_accs[ps.model_id] for ps in members])),
            ensemble_accuracy=_ensemble_accuracy(members, gold),
        )

    single_rows = [row(f"{name} only", families[name][:3]) for name in names]
    mixed_rows = []
    for first, second in zip(names, names[1:]):
        a, b = families[first], families[second]
        mixed_rows.append(row(f"{first}+{second} (2+1)", [a[0], a[1], b[0]]))
        mixed_rows.append(row(f"{first}+{second} (1+2)", [a[0], b[0], b[1]]))
    return TrialResult(
        trial=trial, single_rows=single_rows, mixed_rows=mixed_rows, member_accuracies=member_accs
    )


@dataclass
class ExperimentReport:
    trials: list[TrialResult]
    mixed_wins: int  # trials where every mixed ensemble beat its member average
    mean_mixed_improvement: float
    mean_single_improvement: float

    def to_dict(self) -> dict:
        return {
            "n_trials": len(self.trials),
            "mixed_wins": self.mixed_wins,
            "mean_mixed_improvement": self.mean_mixed_improvement,
            "mean_single_improvement": self.mean_single_improvement,
            "trials": [
                {
                    "trial": t.trial,
                    "rows": [r.to_dict() for r in t.single_rows + t.mixed_rows],
                    "member_accuracies": t.member_accuracies,
                }
                for t in self.trials
            ],
        }

    def table(self) -> str:
        lines = [f"{'grouping':28s} {'avg acc':>8s} {'ens acc':>8s} {'gain':>7s}"]
        for t in self.trials:
            lines.append(f"trial {t.trial}")
            for r in t.single_rows + t.mixed_rows:
                lines.append(
                    f"  {r.grouping:26s} {r.avg_member_accuracy:8.4f} "
                    f"{r.ensemble_accuracy:8.4f} {r.improvement:+7.4f}"
                )
        lines.append(
            f"mixed-source wins: {self.mixed_wins}/{len(self.trials)}  "
            f"mean gain mixed {self.mean_mixed_improvement:+.4f} "
            f"vs single {self.mean_single_improvement:+.4f}"
        )
        return "\n".join(lines)


def run_noise_model_experiment(
    config: NoiseModelConfig | None = None, n_trials: int = 20, master_seed: int = 0
) -> ExperimentReport:
    """Run the synthetic-noise comparison over seeded trials."""
    config = config or NoiseModelConfig()
    trials = []
    for trial in range(n_trials):
        trial_seed = derive_seed(master_seed, "experiment-trial", trial)
        gold, families = synthesize_family_predictions(config, trial_seed)
        trials.append(compare_groupings(families, gold, trial=trial))
    return summarize_trials(trials)


def summarize_trials(trials: list[TrialResult]) -> ExperimentReport:
    mixed_wins = sum(1 for t in trials if all(r.improvement > 0 for r in t.mixed_rows))
    mixed_improvements = [r.improvement for t in trials for r in t.mixed_rows]
    single_improvements = [r.improvement for t in trials for r in t.single_rows]
    return ExperimentReport(
        trials=trials,
        mixed_wins=mixed_wins,
        mean_mixed_improvement=float(np.mean(mixed_improvements)),
        mean_single_improvement=float(np.mean(single_improvements)),
    )


def save_report(report: ExperimentReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2), encoding="utf-8")
