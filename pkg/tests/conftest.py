import numpy as np
import pytest

from mixtask.data import Dataset, SamplePair, TaskKind


def make_pairs(n, kind="classification", n_classes=2, seed=0, **extra):
    """Quick list of n valid sample pairs."""
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        fields = dict(id=f"s{i:04d}", text_a=f"alpha text {i}", text_b=f"beta text {i}")
        if kind == "classification":
            fields["label"] = int(rng.integers(0, n_classes))
        else:
            fields["target_score"] = float(rng.normal())
        fields.update({k: (v(i) if callable(v) else v) for k, v in extra.items()})
        pairs.append(SamplePair(**fields))
    return pairs


def make_dataset(n=10, kind="classification", n_classes=2, name="fix", role="in_domain",
                 head_group="", seed=0, **extra):
    return Dataset(
        name=name,
        task_kind=TaskKind(kind, n_classes if kind == "classification" else None),
        role=role,
        head_group=head_group or name,
        samples=make_pairs(n, kind, n_classes, seed=seed, **extra),
    )


@pytest.fixture(scope="session")
def toy_corpus_dir(tmp_path_factory):
    """Generated toy corpus shared across the suite."""
    from mixtask.toydata import write_toy_corpus

    out = tmp_path_factory.mktemp("toycorpus")
    write_toy_corpus(out, seed=7)
    return out


@pytest.fixture(scope="session")
def toy_run_dir(toy_corpus_dir, tmp_path_factory):
    """One completed pipeline run over the toy corpus."""
    from mixtask.pipeline import PipelineConfig, run_pipeline

    out = tmp_path_factory.mktemp("toyrun")
    cfg = PipelineConfig.from_file(toy_corpus_dir / "config.yaml")
    run_pipeline(cfg, out, quiet=True)
    return out
