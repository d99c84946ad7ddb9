"""Window featurization: robust statistics, motion/energy, spectral features.

Each window's multichannel frame series becomes one fixed-length vector:
per-channel family outputs concatenated in schema order plus two global
features (valid frame ratio, frame count).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from ontask import kernels
from ontask.errors import ParseError, SchemaMismatchError, ValidationError
from ontask.ingest import ChannelSchema, SessionTimeline
from ontask.windowing import Window


class FeatureFamily(enum.Enum):
    ROBUST_STATS = "robust_stats"
    MOTION_ENERGY = "motion_energy"
    SPECTRAL = "spectral"


ALL_FAMILIES = (
    FeatureFamily.ROBUST_STATS,
    FeatureFamily.MOTION_ENERGY,
    FeatureFamily.SPECTRAL,
)

DEFAULT_BANDS_HZ = ((0.1, 0.5), (0.5, 1.0), (1.0, 2.0), (2.0, 4.0))

ROBUST_STAT_NAMES = (
    "median",
    "mad",
    "iqr",
    "p10",
    "p90",
    "trimmed_mean",
    "min",
    "max",
    "range",
)

MOTION_STAT_NAMES = (
    "mean_abs_vel",
    "max_abs_vel",
    "mean_abs_acc",
    "signal_energy",
    "zero_crossing_rate",
)

GLOBAL_FEATURE_NAMES = ("valid_frame_ratio", "frame_count")


@dataclass(frozen=True)
class ChannelSeries:
    """One channel's samples over a window, with a per-sample validity mask."""

    values: np.ndarray
    valid_mask: np.ndarray
    dt_s: float
    all_invalid: bool = False

    def __post_init__(self) -> None:
        if len(self.values) != len(self.valid_mask) or len(self.values) < 1:
            raise ValidationError("values and valid_mask must have equal length >= 1")
        if not self.dt_s > 0:
            raise ValidationError("dt_s must be > 0")


@dataclass(frozen=True)
class FeatureSpec:
    families: tuple[FeatureFamily, ...] = ALL_FAMILIES
    bands_hz: tuple[tuple[float, float], ...] = DEFAULT_BANDS_HZ
    trim_fraction: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ValidationError("trim_fraction must be in [0, 0.5)")
        for low, high in self.bands_hz:
            if not 0.0 < low < high:
                raise ValidationError(f"bad frequency band ({low}, {high})")
        if not self.families:
            raise ValidationError("at least one feature family is required")

    def spectral_stat_names(self) -> tuple[str, ...]:
        band_names = tuple(
            f"band_{low:g}_{high:g}hz" for low, high in self.bands_hz
        )
        return ("dominant_freq_hz", "spectral_entropy", "total_band_power") + band_names

    def to_json_obj(self) -> dict:
        return {
            "families": [f.value for f in self.families],
            "bands_hz": [list(b) for b in self.bands_hz],
            "trim_fraction": self.trim_fraction,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "FeatureSpec":
        return cls(
            families=tuple(FeatureFamily(f) for f in obj["families"]),
            bands_hz=tuple((float(lo), float(hi)) for lo, hi in obj["bands_hz"]),
            trim_fraction=float(obj["trim_fraction"]),
        )


@dataclass(frozen=True)
class FeatureVector:
    names: tuple[str, ...]
    values: np.ndarray
    window_ref: tuple[str, int]


@dataclass(frozen=True)
class FeatureMatrix:
    """Feature vectors for many windows, keyed by (session_id, index)."""

    names: tuple[str, ...]
    refs: tuple[tuple[str, int], ...]
    values: np.ndarray

    def row(self, i: int) -> FeatureVector:
        return FeatureVector(self.names, self.values[i], self.refs[i])


# ---------------------------------------------------------------------------
# per-series operations


def impute(series: ChannelSeries) -> ChannelSeries:
    """Replace invalid samples by linear interpolation between valid neighbors.

    Leading/trailing invalid runs take the nearest valid value. A series with
    no valid samples becomes all zeros with all_invalid set.
    """
    mask = np.asarray(series.valid_mask, dtype=bool)
    values = np.asarray(series.values, dtype=np.float64)
    if mask.all():
        return ChannelSeries(values, np.ones_like(mask), series.dt_s)
    if not mask.any():
        return ChannelSeries(
            np.zeros_like(values), np.ones_like(mask), series.dt_s, all_invalid=True
        )
    idx = np.flatnonzero(mask)
    filled = np.interp(np.arange(len(values)), idx, values[idx])
    return ChannelSeries(filled, np.ones_like(mask), series.dt_s)


def robust_stats(series: ChannelSeries, trim_fraction: float = 0.1) -> dict[str, float]:
    """Robust location/spread statistics of an (imputed) series.

    Percentiles use linear interpolation on the sorted values; MAD is the
    median absolute deviation from the median; the trimmed mean drops
    floor(n * trim_fraction) samples from each tail.
    """
    v = np.asarray(series.values, dtype=np.float64)
    n = len(v)
    p10, p25, median, p75, p90 = (
        float(p) for p in np.percentile(v, [10, 25, 50, 75, 90])
    )
    mad = float(np.median(np.abs(v - median)))
    k = int(n * trim_fraction)
    ordered = np.sort(v)
    trimmed = float(np.mean(ordered[k : n - k])) if n - 2 * k > 0 else median
    vmin = float(ordered[0])
    vmax = float(ordered[-1])
    return {
        "median": median,
        "mad": mad,
        "iqr": p75 - p25,
        "p10": p10,
        "p90": p90,
        "trimmed_mean": trimmed,
        "min": vmin,
        "max": vmax,
        "range": vmax - vmin,
    }


def motion_energy(series: ChannelSeries) -> dict[str, float]:
    """Velocity/acceleration magnitudes, energy, and zero-crossing rate.

    Velocities are first differences over dt, accelerations second
    differences. signal_energy and the zero-crossing rate are computed on the
    mean-removed series, so a constant channel scores 0 everywhere; the rate
    is sign changes per second of window span.
    """
    v = np.asarray(series.values, dtype=np.float64)
    dt = series.dt_s
    n = len(v)
    centered = v - np.mean(v)
    if n >= 2:
        vel = np.abs(np.diff(v) / dt)
        mean_abs_vel = float(np.mean(vel))
        max_abs_vel = float(np.max(vel))
    else:
        mean_abs_vel = max_abs_vel = 0.0
    if n >= 3:
        acc = np.abs(np.diff(v, 2) / (dt * dt))
        mean_abs_acc = float(np.mean(acc))
    else:
        mean_abs_acc = 0.0
    signal_energy = float(np.sum(centered * centered))
    signs = np.sign(centered)
    crossings = int(np.sum(signs[:-1] * signs[1:] < 0)) if n >= 2 else 0
    zero_crossing_rate = crossings / (n * dt)
    return {
        "mean_abs_vel": mean_abs_vel,
        "max_abs_vel": max_abs_vel,
        "mean_abs_acc": mean_abs_acc,
        "signal_energy": signal_energy,
        "zero_crossing_rate": zero_crossing_rate,
    }


def dft(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """One-sided complex spectrum of a real series (bins 0 .. N//2)."""
    return kernels.dft_onesided(np.asarray(values, dtype=np.float64))


def _power_from_spectrum(spectrum: np.ndarray, n: int) -> np.ndarray:
    power = (spectrum.real * spectrum.real + spectrum.imag * spectrum.imag) / (n * n)
    scale = np.full(len(power), 2.0)
    scale[0] = 1.0
    if n % 2 == 0:
        scale[-1] = 1.0
    return power * scale


def onesided_power(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """One-sided power spectrum scaled so the bins sum to mean(x^2).

    Interior bins are doubled to account for the conjugate half, keeping
    Parseval's identity recoverable from the one-sided form.
    """
    x = np.asarray(values, dtype=np.float64)
    return _power_from_spectrum(dft(x), len(x))


def spectral_features(
    series: ChannelSeries,
    bands_hz: Sequence[tuple[float, float]] = DEFAULT_BANDS_HZ,
) -> dict[str, float]:
    """Frequency-domain features of a mean-removed (imputed) series.

    dominant_freq_hz is the bin-center frequency with the largest one-sided
    magnitude (DC excluded); spectral_entropy is the Shannon entropy in nats
    of the normalized one-sided power distribution (DC excluded); band powers
    sum the bins whose center frequency lies in [low, high).
    """
    v = np.asarray(series.values, dtype=np.float64)
    n = len(v)
    dt = series.dt_s
    nyquist = 0.5 / dt
    for low, high in bands_hz:
        if high > nyquist * (1 + 1e-12):
            raise ValidationError(
                f"band ({low}, {high}) exceeds the Nyquist frequency {nyquist:g}"
            )
    band_names = [f"band_{low:g}_{high:g}hz" for low, high in bands_hz]
    out = {
        "dominant_freq_hz": 0.0,
        "spectral_entropy": 0.0,
        "total_band_power": 0.0,
    }
    for name in band_names:
        out[name] = 0.0
    if n < 2:
        return out

    centered = v - np.mean(v)
    spectrum = dft(centered)
    power = _power_from_spectrum(spectrum, n)
    freqs = np.arange(len(power)) / (n * dt)

    magnitudes = np.abs(spectrum[1:])
    nondc_power = power[1:]
    total = float(np.sum(nondc_power))
    if total == 0.0:
        return out

    out["dominant_freq_hz"] = float(freqs[1 + int(np.argmax(magnitudes))])
    q = nondc_power / total
    nonzero = q[q > 0]
    out["spectral_entropy"] = float(-np.sum(nonzero * np.log(nonzero)))
    out["total_band_power"] = total
    for name, (low, high) in zip(band_names, bands_hz):
        in_band = (freqs[1:] >= low) & (freqs[1:] < high)
        out[name] = float(np.sum(nondc_power[in_band]))
    return out


# ---------------------------------------------------------------------------
# window featurization


def feature_names(schema: ChannelSchema, spec: FeatureSpec) -> tuple[str, ...]:
    """Deterministic feature name order: schema channels x family statistics,
    then the global features."""
    per_channel: list[str] = []
    if FeatureFamily.ROBUST_STATS in spec.families:
        per_channel += ROBUST_STAT_NAMES
    if FeatureFamily.MOTION_ENERGY in spec.families:
        per_channel += MOTION_STAT_NAMES
    if FeatureFamily.SPECTRAL in spec.families:
        per_channel += spec.spectral_stat_names()
    names = [
        f"{channel}__{stat}"
        for channel in schema.channel_names
        for stat in per_channel
    ]
    return tuple(names) + GLOBAL_FEATURE_NAMES


def featurize_window(
    window: Window,
    timeline: SessionTimeline,
    schema: ChannelSchema,
    spec: FeatureSpec,
) -> FeatureVector:
    """Extract the window's feature vector from the timeline's frames.

    Windows below the configured valid-frame ratio are still featurized; the
    ratio itself travels along as a feature. A window with no frames at all
    yields an all-zero vector.
    """
    names = feature_names(schema, spec)
    ref = (window.session_id, window.index)
    lo, hi = window.frame_slice.start, window.frame_slice.stop
    n = hi - lo
    if n == 0:
        return FeatureVector(names, np.zeros(len(names)), ref)

    channels = timeline.frame_channels
    if channels.shape[1] != schema.arity:
        raise SchemaMismatchError(
            f"frames carry {channels.shape[1]} channels but schema declares "
            f"{schema.arity}"
        )
    valid = timeline.frame_valid[lo:hi]
    dt = 1.0 / schema.sample_rate_hz

    values: list[float] = []
    for j in range(schema.arity):
        series = impute(ChannelSeries(channels[lo:hi, j], valid, dt))
        if FeatureFamily.ROBUST_STATS in spec.families:
            values.extend(robust_stats(series, spec.trim_fraction).values())
        if FeatureFamily.MOTION_ENERGY in spec.families:
            values.extend(motion_energy(series).values())
        if FeatureFamily.SPECTRAL in spec.families:
            values.extend(spectral_features(series, spec.bands_hz).values())
    values.append(window.valid_frame_ratio)
    values.append(float(n))
    vec = np.array(values, dtype=np.float64)
    if not np.isfinite(vec).all():
        raise ValidationError(f"non-finite feature value for window {ref}")
    return FeatureVector(names, vec, ref)


# ---------------------------------------------------------------------------
# feature matrix CSV


def write_feature_matrix(matrix: FeatureMatrix, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["session_id", "index", *matrix.names])
    for (session_id, index), row in zip(matrix.refs, matrix.values):
        writer.writerow([session_id, index] + [repr(float(v)) for v in row])


def read_feature_matrix(stream: IO[str]) -> FeatureMatrix:
    rows = csv.reader(stream)
    header = next(rows, None)
    if not header or header[:2] != ["session_id", "index"]:
        raise ParseError("feature matrix must start with session_id,index columns")
    names = tuple(header[2:])
    refs: list[tuple[str, int]] = []
    data: list[list[float]] = []
    for row_no, cells in enumerate(rows, start=2):
        if not cells:
            continue
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} columns", row=row_no)
        try:
            refs.append((cells[0], int(cells[1])))
            data.append([float(c) for c in cells[2:]])
        except ValueError:
            raise ParseError("malformed feature row", row=row_no) from None
    values = np.array(data, dtype=np.float64) if data else np.zeros((0, len(names)))
    return FeatureMatrix(names=names, refs=tuple(refs), values=values)
