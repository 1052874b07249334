"""Trial data model, on-disk formats, synthetic corpora and dataset partitioning."""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

TRIAL_MAGIC = b"ETRL"
TRIAL_VERSION = 1
HEADER_BLOCK = 64
MANIFEST_VERSION = 1

TARGET_CHANNELS = ("AF3", "AF4", "T7", "T8", "Pz")
BAND_CENTERS_HZ = (2.25, 6.0, 10.5, 21.5, 37.5)


class LabelClass(enum.IntEnum):
    NEGATIVE = 0
    NEUTRAL = 1
    POSITIVE = 2

    @property
    def key(self) -> str:
        return self.name.lower()


class CorpusError(ValueError):
    pass


@dataclass
class RawTrial:
    """One EEG recording: ``samples`` is channels x S in microvolts."""

    sample_rate_hz: int
    channel_names: list[str]
    samples: np.ndarray
    label: LabelClass
    culture: str = ""
    trial_id: str = ""

    def __post_init__(self):
        self.label = LabelClass(self.label)
        self.channel_names = list(self.channel_names)
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 2:
            raise CorpusError("samples must be a channels x samples matrix")
        if self.sample_rate_hz <= 0:
            raise CorpusError("sample rate must be positive")
        if self.samples.shape[0] != len(self.channel_names):
            raise CorpusError(
                f"{self.samples.shape[0]} sample rows but {len(self.channel_names)} channel names"
            )
        if self.samples.shape[1] < 1:
            raise CorpusError("trial has no samples")
        if len(set(self.channel_names)) != len(self.channel_names):
            raise CorpusError("channel names must be unique")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def __eq__(self, other):
        if not isinstance(other, RawTrial):
            return NotImplemented
        return (
            self.sample_rate_hz == other.sample_rate_hz
            and self.channel_names == other.channel_names
            and self.label == other.label
            and self.culture == other.culture
            and self.trial_id == other.trial_id
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )


# --------------------------------------------------------------------------
# trial binary format

_HEAD = struct.Struct("<4sHHIHB")  # magic, version, flags, fs, n_channels, label


def _header_bytes(trial: RawTrial) -> bytes:
    culture = trial.culture.encode("utf-8")
    if len(culture) > 255:
        raise CorpusError("culture tag longer than 255 bytes")
    head = _HEAD.pack(TRIAL_MAGIC, TRIAL_VERSION, 0, trial.sample_rate_hz, trial.n_channels, int(trial.label))
    head += struct.pack("<B", len(culture)) + culture + struct.pack("<Q", trial.n_samples)
    pad = -len(head) % HEADER_BLOCK
    return head + b"\x00" * pad


def encode_trial(trial: RawTrial) -> bytes:
    data = np.asarray(trial.samples, dtype="<f4")
    if not np.all(np.isfinite(trial.samples)) or not np.all(np.isfinite(data)):
        raise CorpusError("non-finite sample in trial")
    table = b""
    for name in trial.channel_names:
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise CorpusError(f"channel name too long: {name!r}")
        table += struct.pack("<B", len(raw)) + raw
    return _header_bytes(trial) + table + data.tobytes(order="C")


def write_trial(trial: RawTrial, path) -> None:
    """Write ``trial`` to ``path``; the trial id is carried by the file stem."""
    Path(path).write_bytes(encode_trial(trial))


def decode_trial(buf: bytes, trial_id: str = "") -> RawTrial:
    if len(buf) < _HEAD.size or buf[:4] != TRIAL_MAGIC:
        raise CorpusError("bad magic")
    magic, version, _flags, fs, n_ch, label = _HEAD.unpack_from(buf, 0)
    if version != TRIAL_VERSION:
        raise CorpusError(f"unsupported trial version {version}")
    pos = _HEAD.size
    try:
        (clen,) = struct.unpack_from("<B", buf, pos)
        culture = buf[pos + 1 : pos + 1 + clen].decode("utf-8")
        pos += 1 + clen
        (n_samples,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
    except struct.error:
        raise CorpusError("truncated header") from None
    pos += -pos % HEADER_BLOCK
    names = []
    for _ in range(n_ch):
        if pos >= len(buf):
            raise CorpusError("truncated channel table")
        nlen = buf[pos]
        names.append(buf[pos + 1 : pos + 1 + nlen].decode("utf-8"))
        pos += 1 + nlen
    need = n_ch * n_samples * 4
    if len(buf) - pos < need:
        raise CorpusError("truncated payload")
    samples = np.frombuffer(buf, dtype="<f4", count=n_ch * n_samples, offset=pos)
    samples = samples.reshape(n_ch, n_samples).astype(np.float32)
    return RawTrial(fs, names, samples, LabelClass(label), culture, trial_id)


def read_trial(path) -> RawTrial:
    path = Path(path)
    return decode_trial(path.read_bytes(), trial_id=path.stem)


def load_montage(path=None) -> list[str]:
    """Channel names of the 62-electrode layout, from ``path`` or the bundled table."""
    if path is None:
        text = resources.files("neurowave").joinpath("montage_62.txt").read_text()
    else:
        text = Path(path).read_text()
    names = [ln.strip() for ln in text.splitlines()]
    return [n for n in names if n and not n.startswith("#")]


def select_channels(trial: RawTrial, names) -> RawTrial:
    names = list(names)
    index = {n: i for i, n in enumerate(trial.channel_names)}
    missing = [n for n in names if n not in index]
    if missing:
        raise CorpusError(f"unknown channel(s): {', '.join(missing)}")
    rows = [index[n] for n in names]
    return RawTrial(
        trial.sample_rate_hz, names, trial.samples[rows], trial.label, trial.culture, trial.trial_id
    )


# --------------------------------------------------------------------------
# manifests


@dataclass
class TrialEntry:
    trial_id: str
    path: str
    label: LabelClass
    culture: str
    n_channels: int
    n_samples: int

    def to_json(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "path": self.path,
            "label": int(self.label),
            "culture": self.culture,
            "n_channels": self.n_channels,
            "n_samples": self.n_samples,
        }


@dataclass
class DatasetManifest:
    trials: list[TrialEntry] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    version: int = MANIFEST_VERSION
    root: Path | None = None  # directory that entry paths are relative to

    @classmethod
    def from_entries(cls, trials, root=None) -> "DatasetManifest":
        counts = {c.key: 0 for c in LabelClass}
        for t in trials:
            counts[LabelClass(t.label).key] += 1
        return cls(list(trials), counts, MANIFEST_VERSION, root)

    def resolve(self, entry: TrialEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "trials": [t.to_json() for t in self.trials],
            "counts": dict(self.counts),
        }

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        try:
            trials = [
                TrialEntry(
                    t["trial_id"], t["path"], t["label"], t.get("culture", ""),
                    int(t["n_channels"]), int(t["n_samples"]),
                )
                for t in doc["trials"]
            ]
            return cls(trials, dict(doc["counts"]), int(doc["version"]), path.parent)
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"malformed manifest {path}: missing {exc}") from None


def validate_manifest(manifest: DatasetManifest, check_files: bool = False) -> dict[str, int]:
    """Recompute per-label counts and check them against the stored tallies.

    Returns the counts keyed by label name plus a ``total`` entry.
    """
    if not manifest.trials:
        raise CorpusError("empty manifest")
    seen = set()
    counts = {c.key: 0 for c in LabelClass}
    for t in manifest.trials:
        if t.trial_id in seen:
            raise CorpusError(f"duplicate trial_id {t.trial_id!r}")
        seen.add(t.trial_id)
        try:
            counts[LabelClass(t.label).key] += 1
        except ValueError:
            raise CorpusError(f"unknown label value {t.label!r} in {t.trial_id!r}") from None
        if check_files and not manifest.resolve(t).exists():
            raise CorpusError(f"missing trial file {manifest.resolve(t)}")
    stored = {k: int(v) for k, v in manifest.counts.items()}
    if stored != counts:
        raise CorpusError(f"stored counts {stored} disagree with recomputed {counts}")
    return {**counts, "total": len(manifest.trials)}


def class_stats(counts) -> dict:
    """Class counts and imbalance ratio, (max - min) / mean."""
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise CorpusError("negative class count")
    if not any(counts):
        raise CorpusError("all class counts are zero")
    mean = sum(counts) / len(counts)
    return {"counts": counts, "imbalance_ratio": (max(counts) - min(counts)) / mean}


# --------------------------------------------------------------------------
# partitioning


@dataclass
class SplitAssignment:
    train: list[str]
    validation: list[str]
    test: list[str]
    seed: int

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def to_json(self) -> dict:
        return {"seed": self.seed, "train": self.train, "validation": self.validation, "test": self.test}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        doc = json.loads(Path(path).read_text())
        return cls(doc["train"], doc["validation"], doc["test"], int(doc["seed"]))


def split_sizes(n: int, ratios=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    """(train, validation, test) sizes: train and test floored, validation takes the rest."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise CorpusError("split ratios must sum to 1")
    if n < 3:
        raise CorpusError("need at least 3 trials to partition")
    # small guard so that exact products like 0.7 * 10 are not floored to 6
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    return n_train, n - n_train - n_test, n_test


def partition(trial_ids, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> SplitAssignment:
    """Seeded trial-level shuffle into train / validation / test.

    ``trial_ids`` may be a :class:`DatasetManifest` or any sequence of ids.
    """
    if isinstance(trial_ids, DatasetManifest):
        trial_ids = [t.trial_id for t in trial_ids.trials]
    ids = list(trial_ids)
    if not ids:
        raise CorpusError("empty manifest")
    n_train, n_val, n_test = split_sizes(len(ids), ratios)
    order = np.random.Generator(np.random.PCG64(seed)).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return SplitAssignment(
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
        seed,
    )


# --------------------------------------------------------------------------
# synthetic corpus


def default_band_profile() -> np.ndarray:
    """Per-class band-power weights, shape (3 classes, 5 bands, 5 channels)."""
    prof = np.ones((3, 5, 5))
    # negative: slow-wave dominant, weak alpha
    prof[0] = [[3.0] * 5, [3.0] * 5, [0.5] * 5, [1.0] * 5, [0.5] * 5]
    # neutral: flat
    prof[1] = 1.0
    # positive: strong alpha, raised gamma
    prof[2] = [[0.7] * 5, [1.0] * 5, [4.0] * 5, [1.0] * 5, [2.0] * 5]
    return prof


@dataclass
class SynthSpec:
    n_trials_per_class: int = 20
    duration_s: float = 10.0
    sample_rate_hz: int = 200
    band_profile: np.ndarray = field(default_factory=default_band_profile)
    noise_floor: float = 0.3
    seed: int = 0
    scale_uv: float = 10.0
    montage: tuple[str, ...] = TARGET_CHANNELS
    culture: str = "synthetic"

    def __post_init__(self):
        self.band_profile = np.asarray(self.band_profile, dtype=np.float64)
        if self.band_profile.shape != (3, 5, 5):
            raise CorpusError("band_profile must have shape (3, 5, 5)")
        if np.any(self.band_profile < 0):
            raise CorpusError("band weights must be non-negative")
        if self.duration_s < 1:
            raise CorpusError("duration must be at least 1 s")
        if self.sample_rate_hz < 90:
            raise CorpusError("sample rate must be at least 90 Hz (twice the 45 Hz gamma edge)")
        if self.n_trials_per_class < 1:
            raise CorpusError("need at least one trial per class")
        missing = [c for c in TARGET_CHANNELS if c not in self.montage]
        if missing:
            raise CorpusError(f"montage lacks target channels {missing}")


def synth_trial(spec: SynthSpec, label: LabelClass, rng: np.random.Generator, trial_id: str) -> RawTrial:
    n = int(round(spec.duration_s * spec.sample_rate_hz))
    t = np.arange(n) / spec.sample_rate_hz
    weights = spec.band_profile[int(label)]  # bands x target channels
    background = spec.band_profile.mean(axis=(0, 2))  # per band, for non-target channels
    out = np.empty((len(spec.montage), n))
    for row, name in enumerate(spec.montage):
        w = weights[:, TARGET_CHANNELS.index(name)] if name in TARGET_CHANNELS else background
        phases = rng.uniform(0.0, 2 * np.pi, size=5)
        sig = np.zeros(n)
        for b, f0 in enumerate(BAND_CENTERS_HZ):
            # amplitude sqrt(2w) gives band power w
            sig += math.sqrt(2.0 * w[b]) * np.sin(2 * np.pi * f0 * t + phases[b])
        sig += spec.noise_floor * rng.standard_normal(n)
        out[row] = spec.scale_uv * sig
    return RawTrial(spec.sample_rate_hz, list(spec.montage), out.astype(np.float32), label, spec.culture, trial_id)


def synthesize_dataset(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write ``3 * n_trials_per_class`` trial files plus ``manifest.json`` to ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CorpusError(f"cannot create output directory {out_dir}: {exc}") from None
    entries = []
    for label in LabelClass:
        for k in range(spec.n_trials_per_class):
            # one independent stream per trial keeps files stable if counts change
            rng = np.random.Generator(np.random.PCG64([spec.seed, int(label), k]))
            tid = f"{label.key}_{k:04d}"
            trial = synth_trial(spec, label, rng, tid)
            fname = f"{tid}.etrl"
            write_trial(trial, out_dir / fname)
            entries.append(TrialEntry(tid, fname, label, spec.culture, trial.n_channels, trial.n_samples))
    manifest = DatasetManifest.from_entries(entries, root=out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
