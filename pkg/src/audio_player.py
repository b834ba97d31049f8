from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from src.errors import ConfigError, NyquistError, PlaybackRateError, WavFormatError
from src.modem import MAX_TONE_HZ, SymbolSchedule, am_quantize, pwm_quantize

log = logging.getLogger(__name__)

MIN_WAV_RATE = 8_000
MAX_WAV_RATE = 48_000
DEFAULT_PWM_CARRIER_HZ = 20_000.0


class PlayMode(str, Enum):
    AM = "AM"
    PWM = "PWM"


@dataclass(frozen=True, eq=False)
class AudioStream:
    samples: np.ndarray
    sample_rate: int
    bit_depth: int = 16
    channels: int = 1

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64).ravel()
        if arr.size and np.abs(arr).max() > 1.0:
            raise ConfigError("audio samples must lie in [-1, 1]")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def load_wav(path: Union[str, Path]) -> AudioStream:
    """Read an 8- or 16-bit PCM WAV, mono or stereo (averaged)."""
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise WavFormatError(f"cannot read {path}: {exc}") from exc

    if data.dtype == np.uint8:
        depth, samples = 8, (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        depth, samples = 16, data.astype(np.float64) / 32768.0
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}, need 8/16-bit PCM")
    if not MIN_WAV_RATE <= rate <= MAX_WAV_RATE:
        raise WavFormatError(f"{path}: sample rate {rate} Hz outside {MIN_WAV_RATE}-{MAX_WAV_RATE}")

    channels = 1 if samples.ndim == 1 else samples.shape[1]
    if channels > 1:
        samples = samples.mean(axis=1)
    log.debug("loaded %s: %d samples @ %d Hz, %d-bit, %d ch", path, samples.size, rate, depth, channels)
    return AudioStream(samples, rate, depth, channels)


def max_playback_rate(carrier: float) -> float:
    """Fastest audio rate that still fits two carrier cycles per sample."""
    return carrier / 2.0


def resample_for_playback(stream: AudioStream, carrier: float) -> AudioStream:
    cap = int(max_playback_rate(carrier))
    if stream.sample_rate <= cap:
        return stream
    ratio = Fraction(cap, stream.sample_rate).limit_denominator(1000)
    out = resample_poly(stream.samples, ratio.numerator, ratio.denominator)
    rate = stream.sample_rate * ratio.numerator // ratio.denominator
    log.info("resampled %d Hz audio to %d Hz for a %g Hz carrier", stream.sample_rate, rate, carrier)
    return AudioStream(np.clip(out, -1.0, 1.0), rate, stream.bit_depth, stream.channels)


def render(
    stream: AudioStream,
    mode: Union[PlayMode, str],
    carrier: float,
    levels: int = 4,
    *,
    cores: Optional[int] = None,
    pwm_offset: bool = False,
) -> SymbolSchedule:
    """One schedule slot per audio sample.

    AM turns on round(|s| * levels) cores at the carrier. PWM sets the carrier
    duty to the sample quantized to 1/levels steps, on `cores` cores (default 1).
    Negative samples are silent in PWM unless pwm_offset maps [-1, 1] onto [0, 1].
    """
    if not isinstance(mode, PlayMode):
        try:
            mode = PlayMode(str(mode).upper())
        except ValueError as exc:
            raise ConfigError(f"unknown play mode {mode!r}; use AM or PWM") from exc
    if not 0 < carrier <= MAX_TONE_HZ:
        raise NyquistError(f"carrier {carrier:g} Hz outside (0, {MAX_TONE_HZ:g}]")
    if stream.sample_rate > max_playback_rate(carrier):
        raise PlaybackRateError(
            f"{stream.sample_rate} Hz audio needs a carrier of at least {2 * stream.sample_rate} Hz"
        )
    if len(stream) == 0:
        raise ConfigError("nothing to play")

    n = len(stream)
    durations = np.full(n, 1000.0 / stream.sample_rate)
    if mode is PlayMode.AM:
        count = np.asarray(am_quantize(stream.samples, levels)).reshape(-1)
        on = np.arange(levels)[None, :] < count[:, None]
        freqs = np.where(on, carrier, np.nan)
        return SymbolSchedule(durations, freqs, on.astype(float), 0.5)

    width = cores or 1
    x = (stream.samples + 1.0) / 2.0 if pwm_offset else stream.samples
    duty = np.asarray(pwm_quantize(x, levels)).reshape(-1)
    freqs = np.where(duty[:, None] > 0, carrier, np.nan) * np.ones((1, width))
    return SymbolSchedule(durations, freqs, 1.0, np.repeat(duty[:, None], width, axis=1))
