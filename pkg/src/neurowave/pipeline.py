"""Glue between on-disk corpora, feature files and training splits."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .corpus import DatasetManifest, SplitAssignment, TrialEntry, read_trial, select_channels
from .dsp import featurize_trial, read_features, write_features


def _featurize_one(args):
    src, dst, channels, order, floor, window_s = args
    trial = select_channels(read_trial(src), channels)
    ft = featurize_trial(trial, channels, order=order, floor=floor, window_s=window_s)
    write_features(ft, dst)
    return ft.n_windows


def featurize_manifest(
    manifest: DatasetManifest,
    out_dir,
    channels,
    order: int = 4,
    floor: float = 1e-12,
    window_s: int = 1,
    workers: int = 1,
) -> DatasetManifest:
    """Write one ``.eftr`` per trial plus a feature manifest (``n_samples`` counts windows)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (manifest.resolve(e), out_dir / f"{e.trial_id}.eftr", list(channels), order, floor, window_s)
        for e in manifest.trials
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            windows = list(pool.map(_featurize_one, jobs))
    else:
        windows = [_featurize_one(j) for j in jobs]
    entries = [
        TrialEntry(e.trial_id, f"{e.trial_id}.eftr", e.label, e.culture, len(channels), n)
        for e, n in zip(manifest.trials, windows)
    ]
    out = DatasetManifest.from_entries(entries, root=out_dir)
    out.save(out_dir / "manifest.json")
    return out


def load_features(manifest: DatasetManifest) -> dict:
    return {e.trial_id: read_features(manifest.resolve(e)) for e in manifest.trials}


def split_features(features: dict, split: SplitAssignment) -> dict[str, list]:
    missing = [t for t in split.train + split.validation + split.test if t not in features]
    if missing:
        raise KeyError(f"split references {len(missing)} trial(s) without features, e.g. {missing[0]!r}")
    return {
        "train": [features[t] for t in split.train],
        "validation": [features[t] for t in split.validation],
        "test": [features[t] for t in split.test],
    }
