"""Band-pass filter bank, one-second epoching and differential-entropy features."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .corpus import TARGET_CHANNELS, LabelClass, RawTrial

DE_FLOOR = 1e-12
DEFAULT_ORDER = 4
FEATURE_MAGIC = b"EFTR"
FEATURE_VERSION = 1


class DSPError(ValueError):
    pass


@dataclass(frozen=True)
class BandDef:
    name: str
    lo_hz: float
    hi_hz: float

    @property
    def center_hz(self) -> float:
        return 0.5 * (self.lo_hz + self.hi_hz)

    def check(self, fs: float) -> None:
        if not 0 < self.lo_hz < self.hi_hz:
            raise DSPError(f"band {self.name}: need 0 < lo < hi")
        if self.hi_hz >= fs / 2:
            raise DSPError(f"band {self.name}: band edge exceeds Nyquist ({self.hi_hz} >= {fs / 2})")


BANDS = (
    BandDef("delta", 0.5, 4.0),
    BandDef("theta", 4.0, 8.0),
    BandDef("alpha", 8.0, 13.0),
    BandDef("beta", 13.0, 30.0),
    BandDef("gamma", 30.0, 45.0),
)
BAND_NAMES = tuple(b.name for b in BANDS)


@dataclass(frozen=True)
class FilterCoeffs:
    """Second-order-section cascade; each row is ``b0 b1 b2 1 a1 a2``."""

    sos: np.ndarray
    band: BandDef
    order: int
    fs: float

    @property
    def cascade_order(self) -> int:
        return 2 * len(self.sos)

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(row[3:]) for row in self.sos])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response evaluated on the unit circle."""
        z = np.exp(-1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / self.fs)
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h *= (b0 + b1 * z + b2 * z * z) / (a0 + a1 * z + a2 * z * z)
        return h


def _pair_poles(poles: np.ndarray) -> list[tuple[float, float]]:
    """Group conjugate/real poles into (a1, a2) denominators."""
    tol = 1e-10
    upper = sorted((p for p in poles if p.imag > tol), key=lambda p: abs(p))
    real = sorted(p.real for p in poles if abs(p.imag) <= tol)
    dens = [(-2.0 * p.real, abs(p) ** 2) for p in upper]
    for r1, r2 in zip(real[::2], real[1::2]):
        dens.append((-(r1 + r2), r1 * r2))
    return dens


def design_bandpass(band: BandDef, fs: float, order: int = DEFAULT_ORDER) -> FilterCoeffs:
    """Butterworth band-pass of prototype ``order`` as ``order`` biquads.

    Bilinear transform with both edges pre-warped; the cascade has total
    order ``2 * order``.
    """
    if order < 2:
        raise DSPError("filter order must be >= 2")
    band.check(fs)
    fs2 = 2.0 * fs
    w_lo = fs2 * math.tan(math.pi * band.lo_hz / fs)
    w_hi = fs2 * math.tan(math.pi * band.hi_hz / fs)
    w0sq = w_lo * w_hi
    bw = w_hi - w_lo

    k = np.arange(order)
    proto = np.exp(1j * np.pi * (2 * k + order + 1) / (2 * order))
    # s^2 - p*bw*s + w0^2 = 0 for every prototype pole p
    pb = proto * bw
    disc = np.sqrt(pb * pb - 4 * w0sq + 0j)
    analog = np.concatenate([(pb + disc) / 2, (pb - disc) / 2])
    digital = (fs2 + analog) / (fs2 - analog)
    # order zeros at s=0 -> z=1, order zeros at infinity -> z=-1
    gain = bw**order * np.real(fs2**order / np.prod(fs2 - analog))

    dens = _pair_poles(digital)
    if len(dens) != order:
        raise DSPError("pole pairing failed")
    g = abs(gain) ** (1.0 / order)
    sos = np.zeros((order, 6))
    for i, (a1, a2) in enumerate(dens):
        sos[i] = [g, 0.0, -g, 1.0, a1, a2]
    if gain < 0:
        sos[0, :3] *= -1
    coeffs = FilterCoeffs(sos, band, order, float(fs))
    if not coeffs.is_stable():
        raise DSPError(f"unstable design for band {band.name} at {fs} Hz")
    return coeffs


def filter_bank(fs: float, order: int = DEFAULT_ORDER, bands=BANDS) -> list[FilterCoeffs]:
    return [design_bandpass(b, fs, order) for b in bands]


def pad_length(coeffs: FilterCoeffs) -> int:
    return 3 * coeffs.cascade_order


def apply_zero_phase(x, coeffs: FilterCoeffs) -> np.ndarray:
    """Forward-backward filtering along the last axis with odd-reflection padding."""
    x = np.asarray(x, dtype=np.float64)
    padlen = pad_length(coeffs)
    if x.shape[-1] <= padlen:
        raise DSPError(f"signal too short: {x.shape[-1]} samples, need more than {padlen}")
    return sps.sosfiltfilt(coeffs.sos, x, axis=-1, padtype="odd", padlen=padlen)


def epoch_signal(x, fs: int, window_s: int = 1) -> np.ndarray:
    """Cut the last axis into non-overlapping windows of ``fs * window_s`` samples.

    Returns shape ``(..., n_windows, window)``; a trailing partial window is dropped.
    """
    x = np.asarray(x)
    win = int(fs * window_s)
    n = x.shape[-1] // win
    if n < 1:
        raise DSPError(f"signal shorter than window ({x.shape[-1]} < {win} samples)")
    return x[..., : n * win].reshape(*x.shape[:-1], n, win)


def differential_entropy(variance, floor: float = DE_FLOOR):
    """Gaussian differential entropy 0.5 * ln(2*pi*e*var) in nats, variance clamped at ``floor``."""
    var = np.asarray(variance, dtype=np.float64)
    if np.any(var < 0) or np.any(np.isnan(var)):
        raise DSPError("negative variance")
    out = 0.5 * np.log(2 * np.pi * np.e * np.maximum(var, floor))
    return float(out) if out.ndim == 0 else out


@dataclass
class FeatureTensor:
    """DE features of one trial, axes (window, band, channel)."""

    values: np.ndarray
    label: LabelClass
    trial_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.label = LabelClass(self.label)
        if self.values.ndim != 3 or self.values.shape[1:] != (5, 5) or self.values.shape[0] < 1:
            raise DSPError(f"feature tensor must be T x 5 x 5, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DSPError("non-finite feature value")

    @property
    def n_windows(self) -> int:
        return self.values.shape[0]


def featurize_trial(
    trial: RawTrial,
    channels=TARGET_CHANNELS,
    order: int = DEFAULT_ORDER,
    floor: float = DE_FLOOR,
    window_s: int = 1,
    bands=BANDS,
) -> FeatureTensor:
    """Filter each channel into the five bands, window, and take DE of each window's variance."""
    if list(trial.channel_names) != list(channels):
        raise DSPError(
            f"wrong channel set: expected {list(channels)}, got {list(trial.channel_names)}"
        )
    fs = trial.sample_rate_hz
    if fs < 90:
        raise DSPError("sample rate below 90 Hz cannot resolve the gamma band")
    if trial.n_samples < fs * window_s:
        raise DSPError(f"trial too short: {trial.n_samples} samples")
    x = np.asarray(trial.samples, dtype=np.float64)
    per_band = []
    for coeffs in filter_bank(fs, order, bands):
        filtered = apply_zero_phase(x, coeffs)  # channels x S
        windows = epoch_signal(filtered, fs, window_s)  # channels x T x W
        per_band.append(differential_entropy(windows.var(axis=-1), floor))
    # bands x channels x T -> T x bands x channels
    values = np.stack(per_band).transpose(2, 0, 1)
    return FeatureTensor(values, trial.label, trial.trial_id)


# --------------------------------------------------------------------------
# feature file format

_FHEAD = struct.Struct("<4sHIHHB")


def encode_features(ft: FeatureTensor) -> bytes:
    tid = ft.trial_id.encode("utf-8")
    if len(tid) > 255:
        raise DSPError("trial id longer than 255 bytes")
    head = _FHEAD.pack(FEATURE_MAGIC, FEATURE_VERSION, ft.n_windows, 5, 5, int(ft.label))
    head += struct.pack("<B", len(tid)) + tid
    return head + np.ascontiguousarray(ft.values, dtype="<f4").tobytes()


def decode_features(buf: bytes) -> FeatureTensor:
    if len(buf) < _FHEAD.size + 1 or buf[:4] != FEATURE_MAGIC:
        raise DSPError("bad magic")
    _, version, n_win, n_bands, n_ch, label = _FHEAD.unpack_from(buf, 0)
    if version != FEATURE_VERSION:
        raise DSPError(f"unsupported feature version {version}")
    if (n_bands, n_ch) != (5, 5):
        raise DSPError(f"expected 5 bands x 5 channels, got {n_bands} x {n_ch}")
    pos = _FHEAD.size
    tlen = buf[pos]
    tid = buf[pos + 1 : pos + 1 + tlen].decode("utf-8")
    pos += 1 + tlen
    count = n_win * 25
    if len(buf) - pos < 4 * count:
        raise DSPError("truncated payload")
    vals = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(n_win, 5, 5)
    return FeatureTensor(vals.astype(np.float32), LabelClass(label), tid)


def write_features(ft: FeatureTensor, path) -> None:
    Path(path).write_bytes(encode_features(ft))


def read_features(path) -> FeatureTensor:
    return decode_features(Path(path).read_bytes())
