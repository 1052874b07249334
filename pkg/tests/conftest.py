import numpy as np
import pytest

from neurowave.corpus import SynthSpec, partition, read_trial, synthesize_dataset
from neurowave.dsp import featurize_trial
from neurowave.model import ModelConfig

_CRITERIA: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        _CRITERIA.append((number, title, bool(ok), detail))
        assert ok, f"criterion {number} ({title}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        mark = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{mark}] {number:2d}. {title} -- {detail}")


@pytest.fixture
def tiny_config():
    # deliberately off-grid: small enough for exhaustive gradient checks
    return ModelConfig(cnn_out_channels=4, kernel_size=3, n_transformer_layers=1, ffn_hidden=16,
                       n_heads=2, embed_dim=8, batch_size=4, dropout=0.1, learning_rate=1e-3)


@pytest.fixture(scope="session")
def synthetic_corpus(tmp_path_factory):
    """60 trials (20 per class), 10 s at 200 Hz, featurized and split 70/15/15."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = synthesize_dataset(SynthSpec(n_trials_per_class=20, seed=7), root)
    feats = {e.trial_id: featurize_trial(read_trial(manifest.resolve(e))) for e in manifest.trials}
    split = partition(manifest, seed=11)
    return {
        "root": root,
        "manifest": manifest,
        "features": feats,
        "split": split,
        "train": [feats[t] for t in split.train],
        "validation": [feats[t] for t in split.validation],
        "test": [feats[t] for t in split.test],
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def overfit_run(synthetic_corpus):
    """Optimal configuration trained for 100 epochs on the synthetic corpus."""
    from neurowave.model import OPTIMAL_CONFIG, init_params
    from neurowave.trainer import TrainConfig, train

    params = init_params(OPTIMAL_CONFIG, seed=0)
    best, history = train(OPTIMAL_CONFIG, params, synthetic_corpus["train"], synthetic_corpus["validation"],
                          TrainConfig(epochs=100, seed=0))
    return {"best": best, "history": history, "final_params": params}
