"""Parametric stand-in for the power supply and the acoustic path.

Schedules (or realized workload traces) become audio through a square or sine
emission model, then pass a per-PSU band mask and an additive noise channel.
The measurement instruments (band power, SNR, BER, sweep analysis) live here too.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.signal import resample_poly

from src.errors import BandError, ConfigError, NyquistError, SampleRateMismatch
from src.framing import BitsLike, as_bits
from src.modem import MAX_TONE_HZ, SymbolSchedule
from src.scheduler import WorkerState, WorkloadTrace
from src.waveform import Waveform

log = logging.getLogger(__name__)

Band = tuple[float, float]


class Waveshape(str, Enum):
    SQUARE = "SQUARE"
    SINE = "SINE"


@dataclass(frozen=True)
class Passband:
    low: float
    high: float
    gain_db: float = 0.0


@dataclass(frozen=True)
class PsuModel:
    band_mask: tuple[Passband, ...] = (Passband(0.0, MAX_TONE_HZ),)
    amplitude_per_core: float = 0.05
    waveshape: Waveshape = Waveshape.SQUARE
    stop_gain_db: float = -60.0
    max_harmonic: int = 9
    name: str = "full-pass"
    snr_grade: Optional[tuple[float, float]] = None

    def __post_init__(self) -> None:
        bands = tuple(sorted((b if isinstance(b, Passband) else Passband(*b) for b in self.band_mask), key=lambda b: b.low))
        object.__setattr__(self, "band_mask", bands)
        object.__setattr__(self, "waveshape", Waveshape(self.waveshape))
        if not bands:
            raise ConfigError("a PSU model needs at least one passband")
        for b in bands:
            if not 0.0 <= b.low < b.high <= MAX_TONE_HZ:
                raise ConfigError(f"passband {b.low:g}-{b.high:g} Hz outside [0, {MAX_TONE_HZ:g}]")
        for a, b in zip(bands, bands[1:]):
            if b.low < a.high:
                raise ConfigError(f"passbands {a.low:g}-{a.high:g} and {b.low:g}-{b.high:g} overlap")
        if self.amplitude_per_core <= 0:
            raise ConfigError("amplitude_per_core must be positive")
        if self.max_harmonic < 1:
            raise ConfigError("max_harmonic must be >= 1")

    def gain(self, freqs: np.ndarray) -> np.ndarray:
        """Linear gain of the band mask at each frequency."""
        freqs = np.asarray(freqs, dtype=float)
        out = np.full(freqs.shape, 10.0 ** (self.stop_gain_db / 20.0))
        for b in self.band_mask:
            out[(freqs >= b.low) & (freqs <= b.high)] = 10.0 ** (b.gain_db / 20.0)
        return out

    def passes(self, freq: float) -> bool:
        return any(b.low <= freq <= b.high for b in self.band_mask)


class ChannelMode(str, Enum):
    SNR_TARGET = "SNR_TARGET"
    DISTANCE = "DISTANCE"


@dataclass(frozen=True)
class ChannelConfig:
    mode: ChannelMode = ChannelMode.SNR_TARGET
    snr_db: float = 30.0
    band: Optional[Band] = None  # None means the whole spectrum
    distance_cm: float = 20.0
    exponent: float = 2.0
    ref_distance_cm: float = 20.0
    noise_rms: float = 1e-3
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", ChannelMode(self.mode))
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ConfigError("snr_db must be a number (inf turns noise off)")
        if self.distance_cm < 0:
            raise ConfigError("distance must be >= 0")
        if self.ref_distance_cm <= 0 or self.noise_rms < 0:
            raise ConfigError("reference distance must be positive and noise_rms >= 0")


# --- emission ---------------------------------------------------------------

def _pulse(phase: np.ndarray, freq: np.ndarray, duty: np.ndarray, model: PsuModel, sample_rate: int) -> np.ndarray:
    """Unit-height emission of one core: band-limited unipolar pulse train or raised sine."""
    if model.waveshape is Waveshape.SINE:
        return duty * (1.0 + np.sin(2 * np.pi * phase))
    out = duty.copy()
    nyquist = sample_rate / 2.0
    for k in range(1, model.max_harmonic + 1):
        live = (k * freq < nyquist) & (freq > 0)
        if not live.any():
            break
        coef = 2.0 / (np.pi * k) * np.sin(np.pi * k * duty)
        term = coef * np.cos(2 * np.pi * k * phase - np.pi * k * duty)
        out += np.where(live, term, 0.0)
    return out


def _apply_mask(samples: np.ndarray, model: PsuModel, sample_rate: int) -> np.ndarray:
    if samples.size == 0:
        return samples
    bins = np.fft.rfftfreq(samples.size, 1.0 / sample_rate)
    gain = model.gain(bins)
    if np.all(gain == 1.0):
        return samples
    return np.fft.irfft(np.fft.rfft(samples) * gain, n=samples.size)


def _synthesize_schedule(schedule: SymbolSchedule, model: PsuModel, sample_rate: int) -> np.ndarray:
    if len(schedule) == 0:
        raise ConfigError("cannot synthesize an empty schedule")
    if sample_rate < 2 * schedule.max_frequency:
        raise NyquistError(
            f"sample rate {sample_rate} Hz below twice the highest carrier {schedule.max_frequency:g} Hz"
        )
    edges = np.round(np.concatenate([[0.0], np.cumsum(schedule.durations_ms)]) * sample_rate / 1000.0).astype(np.int64)
    counts = np.diff(edges)
    out = np.zeros(int(edges[-1]))
    active = schedule.active_mask
    cache: dict[tuple[bytes, bytes], np.ndarray] = {}
    for c in range(schedule.cores):
        if not active[:, c].any():
            continue
        freqs = np.where(active[:, c], schedule.freqs[:, c], 0.0)
        duties = np.where(active[:, c], schedule.duties[:, c], 0.0)
        key = (freqs.tobytes(), duties.tobytes())
        if key not in cache:
            f_s = np.repeat(freqs, counts)
            d_s = np.repeat(duties, counts)
            phase = np.mod(np.concatenate([[0.0], np.cumsum(f_s)[:-1]]) / sample_rate, 1.0)
            cache[key] = _pulse(phase, f_s, d_s, model, sample_rate)
        levels = np.repeat(np.where(active[:, c], schedule.levels[:, c], 0.0), counts)
        out += model.amplitude_per_core * levels * cache[key]
    return out


def _synthesize_trace(trace: WorkloadTrace, model: PsuModel, sample_rate: int, oversample: int) -> np.ndarray:
    if trace.is_empty:
        raise ConfigError("cannot synthesize an empty trace")
    rate_hi = sample_rate * oversample
    t0 = min(core[0][0] for core in trace.events if core)
    n_hi = int(math.ceil((trace.end_ns - t0) * rate_hi / 1e9)) + oversample
    steps = np.zeros(n_hi + 1)
    for core in trace.events:
        for t, state in core:
            i = int(round((t - t0) * rate_hi / 1e9))
            steps[i] += 1.0 if state is WorkerState.BUSY else -1.0
    busy = np.cumsum(steps)[:n_hi]
    if model.waveshape is Waveshape.SINE:
        log.debug("trace synthesis ignores SINE waveshape; the realized edges define the waveform")
    return model.amplitude_per_core * resample_poly(busy, 1, oversample)


def synthesize(
    source: Union[SymbolSchedule, WorkloadTrace],
    model: PsuModel,
    sample_rate: int,
    *,
    oversample: int = 8,
) -> Waveform:
    if isinstance(source, WorkloadTrace):
        raw = _synthesize_trace(source, model, sample_rate, oversample)
    else:
        raw = _synthesize_schedule(source, model, sample_rate)
    return Waveform(_apply_mask(raw, model, sample_rate), sample_rate)


# --- channel ----------------------------------------------------------------

def band_power(wave: Waveform, band: Optional[Band] = None) -> float:
    """Mean-square power of the components inside band (Parseval over the rfft)."""
    n = len(wave)
    if n == 0:
        return 0.0
    spec = np.abs(np.fft.rfft(wave.samples)) ** 2
    bins = np.fft.rfftfreq(n, 1.0 / wave.sample_rate)
    weight = np.full(spec.size, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    if band is not None:
        lo, hi = band
        weight[(bins < lo) | (bins > hi)] = 0.0
    return float(np.sum(weight * spec) / n**2)


def apply_channel(wave: Waveform, cfg: ChannelConfig) -> Waveform:
    if len(wave) == 0:
        return wave
    rng = np.random.default_rng(cfg.seed)

    if cfg.mode is ChannelMode.DISTANCE:
        distance = max(cfg.distance_cm, cfg.ref_distance_cm)
        factor = (cfg.ref_distance_cm / distance) ** (cfg.exponent / 2.0)
        noise = cfg.noise_rms * rng.standard_normal(len(wave))
        return wave.with_samples(wave.samples * factor + noise)

    if math.isinf(cfg.snr_db):
        return wave
    noise = rng.standard_normal(len(wave))
    p_signal = band_power(wave, cfg.band)
    p_unit = band_power(Waveform(noise, wave.sample_rate), cfg.band)
    if p_signal == 0.0 or p_unit == 0.0:
        log.warning("no signal power in band %s; adding the noise floor only", cfg.band)
        return wave.with_samples(wave.samples + cfg.noise_rms * noise)
    scale = math.sqrt(p_signal / (p_unit * 10.0 ** (cfg.snr_db / 10.0)))
    return wave.with_samples(wave.samples + scale * noise)


def measure_snr(
    wave: Waveform,
    signal_band: Optional[Band],
    noise_reference: Waveform,
    *,
    subtract_noise: bool = False,
) -> float:
    """10*log10(in-band signal power / in-band noise power), +inf for a silent reference.

    With subtract_noise the reference power is removed from the signal
    recording first, for recordings that carry their own background.
    """
    if wave.sample_rate != noise_reference.sample_rate:
        raise SampleRateMismatch(f"{wave.sample_rate} Hz signal vs {noise_reference.sample_rate} Hz noise")
    p_noise = band_power(noise_reference, signal_band)
    p_signal = band_power(wave, signal_band)
    if subtract_noise:
        p_signal = max(p_signal - p_noise, 0.0)
    if p_noise == 0.0:
        return math.inf
    if p_signal == 0.0:
        return -math.inf
    return 10.0 * math.log10(p_signal / p_noise)


def count_bit_errors(sent: BitsLike, received: BitsLike) -> int:
    a, b = as_bits(sent), as_bits(received)
    m = min(a.size, b.size)
    return int(np.count_nonzero(a[:m] != b[:m])) + (a.size - m)


def measure_ber(sent: BitsLike, received: BitsLike) -> float:
    """Hamming distance over the sent length; missing received bits count as errors."""
    n = as_bits(sent).size
    return count_bit_errors(sent, received) / n if n else 0.0


# --- sweep ------------------------------------------------------------------

def sweep_signal(
    f_low: float,
    f_high: float,
    duration: float,
    *,
    slot_ms: float = 20.0,
    cores: int = 4,
) -> SymbolSchedule:
    """Linear chirp from f_low to f_high as a fine-grained slot schedule."""
    if not 0 < f_low < f_high <= MAX_TONE_HZ:
        raise BandError(f"sweep band {f_low:g}-{f_high:g} Hz must satisfy 0 < low < high <= {MAX_TONE_HZ:g}")
    if duration <= 0:
        raise BandError("sweep duration must be positive")
    n = max(1, round(duration * 1000.0 / slot_ms))
    freqs = np.linspace(f_low, f_high, n)
    return SymbolSchedule(
        np.full(n, duration * 1000.0 / n),
        np.repeat(freqs[:, None], cores, axis=1),
        1.0,
        0.5,
    )


@dataclass(frozen=True)
class SweepReport:
    bands: tuple[Band, ...]
    step_hz: float
    levels: pd.DataFrame = field(repr=False)

    def matches(self, model: PsuModel, *, tolerance: Optional[float] = None, span: Optional[Band] = None) -> bool:
        return matches_profile(self, model, tolerance=tolerance, span=span)


def analyze_sweep(
    wave: Waveform,
    f_low: float,
    f_high: float,
    duration: float,
    *,
    slot_ms: float = 20.0,
    threshold_db: float = 10.0,
) -> SweepReport:
    """Detect passbands from a recorded sweep.

    Each slot is measured at its own chirp frequency with a Hann-windowed
    single-bin DFT; slots within threshold_db of the strongest one pass, and
    runs of passing slots become bands.
    """
    schedule = sweep_signal(f_low, f_high, duration, slot_ms=slot_ms, cores=1)
    freqs = schedule.freqs[:, 0]
    edges = np.round(np.concatenate([[0.0], np.cumsum(schedule.durations_ms)]) * wave.sample_rate / 1000.0).astype(int)
    x = wave.samples
    levels = np.zeros(freqs.size)
    for i, f in enumerate(freqs):
        seg = x[edges[i] : min(edges[i + 1], x.size)]
        if seg.size < 2:
            continue
        w = np.hanning(seg.size)
        n = np.arange(seg.size)
        levels[i] = 2.0 * np.abs(np.sum(w * seg * np.exp(-2j * np.pi * f * n / wave.sample_rate))) / w.sum()

    level_db = 20.0 * np.log10(levels + 1e-12)
    passing = level_db >= level_db.max() - threshold_db

    bands: list[Band] = []
    start = None
    for i, ok in enumerate(passing):
        if ok and start is None:
            start = i
        if start is not None and (not ok or i == passing.size - 1):
            stop = i if ok else i - 1
            bands.append((float(freqs[start]), float(freqs[stop])))
            start = None

    step = float(freqs[1] - freqs[0]) if freqs.size > 1 else 0.0
    table = pd.DataFrame({"freq_hz": freqs, "level_db": level_db, "passing": passing})
    log.info("sweep analysis: %d band(s) %s", len(bands), [f"{lo:.0f}-{hi:.0f}" for lo, hi in bands])
    return SweepReport(tuple(bands), step, table)


def matches_profile(
    report: SweepReport,
    model: PsuModel,
    *,
    tolerance: Optional[float] = None,
    span: Optional[Band] = None,
) -> bool:
    """True when detected bands equal the model's passbands (clipped to the swept span) within tolerance."""
    tol = tolerance if tolerance is not None else max(100.0, 2.0 * report.step_hz)
    lo_span, hi_span = span if span is not None else (0.0, MAX_TONE_HZ)
    expected = [
        (max(b.low, lo_span), min(b.high, hi_span))
        for b in model.band_mask
        if b.high > lo_span and b.low < hi_span
    ]
    if len(expected) != len(report.bands):
        return False
    return all(
        abs(lo - e_lo) <= tol and abs(hi - e_hi) <= tol
        for (lo, hi), (e_lo, e_hi) in zip(report.bands, expected)
    )
