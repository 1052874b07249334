"""Random search over the hyper-parameter grid with short proxy training."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .model import SEARCH_SPACE, ModelConfig, init_params
from .trainer import TrainConfig, derive_seed, train

log = logging.getLogger(__name__)

FIELDS = tuple(f.name for f in fields(ModelConfig))


class SearchError(ValueError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    cnn_out_channels: tuple = SEARCH_SPACE["cnn_out_channels"]
    kernel_size: tuple = SEARCH_SPACE["kernel_size"]
    n_transformer_layers: tuple = SEARCH_SPACE["n_transformer_layers"]
    ffn_hidden: tuple = SEARCH_SPACE["ffn_hidden"]
    n_heads: tuple = SEARCH_SPACE["n_heads"]
    embed_dim: tuple = SEARCH_SPACE["embed_dim"]
    batch_size: tuple = SEARCH_SPACE["batch_size"]
    dropout: tuple = SEARCH_SPACE["dropout"]
    learning_rate: tuple = SEARCH_SPACE["learning_rate"]

    def value_sets(self) -> list[tuple]:
        return [tuple(getattr(self, f)) for f in FIELDS]

    def size(self) -> int:
        return math.prod(len(v) for v in self.value_sets())


def enumerate_space(space: SearchSpace = SearchSpace()) -> list[ModelConfig]:
    """All grid points, lexicographic in field order (last field varies fastest)."""
    configs = []
    seen = set()
    for combo in itertools.product(*space.value_sets()):
        if combo in seen:
            continue
        seen.add(combo)
        configs.append(ModelConfig(*combo))
    return configs


def sample_configs(space: SearchSpace, n: int, seed: int = 0) -> list[tuple[int, ModelConfig]]:
    """``n`` distinct grid points drawn uniformly without replacement, as (sample_index, config)."""
    grid = enumerate_space(space)
    if n > len(grid):
        raise SearchError(f"sample exceeds space: {n} > {len(grid)}")
    if n < 0:
        raise SearchError("sample size must be non-negative")
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(grid))[:n]
    return [(i, grid[j]) for i, j in enumerate(order)]


@dataclass
class HpoResult:
    sample_index: int
    config: ModelConfig
    val_accuracy: float | None
    seconds: float
    error: str | None = None

    def row(self) -> list:
        acc = "" if self.val_accuracy is None else repr(self.val_accuracy)
        return [self.sample_index, *[getattr(self.config, f) for f in FIELDS], acc, f"{self.seconds:.3f}"]


def _proxy_run(args):
    index, config, train_set, val_set, epochs, seed = args
    start = time.perf_counter()
    try:
        params = init_params(config, derive_seed(seed, index, 0))
        tc = TrainConfig(epochs=epochs, seed=derive_seed(seed, index, 1))
        _, hist = train(config, params, train_set, val_set, tc)
        return HpoResult(index, config, hist.best_val_accuracy, time.perf_counter() - start)
    except Exception as exc:  # one bad config must not end the search
        log.warning("config %d failed: %s", index, exc)
        return HpoResult(index, config, None, time.perf_counter() - start, f"{type(exc).__name__}: {exc}")


def select_best(results) -> HpoResult:
    """Highest recorded accuracy; the lowest sample index wins ties."""
    ok = [r for r in results if r.val_accuracy is not None]
    if not ok:
        raise SearchError("every configuration failed")
    return min(ok, key=lambda r: (-r.val_accuracy, r.sample_index))


def run_search(
    space: SearchSpace,
    n: int,
    proxy_epochs: int,
    train_set,
    val_set,
    seed: int = 0,
    workers: int = 1,
    on_result=None,
) -> tuple[ModelConfig, list[HpoResult]]:
    if proxy_epochs < 1:
        raise SearchError("proxy_epochs must be >= 1")
    jobs = [(i, cfg, list(train_set), list(val_set), proxy_epochs, seed) for i, cfg in sample_configs(space, n, seed)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_proxy_run, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_proxy_run(job))
            if on_result is not None:
                on_result(results[-1])
    results.sort(key=lambda r: r.sample_index)
    return select_best(results).config, results


def write_results_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", *FIELDS, "val_accuracy", "seconds"])
        for r in results:
            w.writerow(r.row())
