from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.io import wavfile

from src.errors import ConfigError, SampleRateMismatch, WavFormatError

log = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        arr = np.asarray(self.samples, dtype=np.float64).ravel()
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def clipped(self) -> int:
        """Number of samples outside [-1, 1]."""
        return int(np.count_nonzero(np.abs(self.samples) > 1.0))

    @property
    def peak(self) -> float:
        return float(np.abs(self.samples).max()) if self.samples.size else 0.0

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2))) if self.samples.size else 0.0

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate)

    def scaled(self, gain: float) -> "Waveform":
        return self.with_samples(self.samples * gain)

    def window(self, start: float, stop: float) -> "Waveform":
        """Sub-waveform between two times in seconds."""
        a = max(0, round(start * self.sample_rate))
        b = min(self.samples.size, round(stop * self.sample_rate))
        return self.with_samples(self.samples[a:b])

    def padded(self, lead: float = 0.0, tail: float = 0.0) -> "Waveform":
        return self.with_samples(
            np.concatenate(
                [
                    np.zeros(round(lead * self.sample_rate)),
                    self.samples,
                    np.zeros(round(tail * self.sample_rate)),
                ]
            )
        )

    @classmethod
    def silence(cls, duration: float, sample_rate: int) -> "Waveform":
        return cls(np.zeros(round(duration * sample_rate)), sample_rate)

    @classmethod
    def concat(cls, parts: Sequence["Waveform"]) -> "Waveform":
        rates = {p.sample_rate for p in parts}
        if len(rates) != 1:
            raise SampleRateMismatch(f"cannot join waveforms at rates {sorted(rates)}")
        return cls(np.concatenate([p.samples for p in parts]), rates.pop())


def to_mono_float(data: np.ndarray) -> np.ndarray:
    """PCM array from scipy.io.wavfile to float in [-1, 1], stereo averaged."""
    if data.dtype == np.uint8:
        out = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        out = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        out = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        out = data.astype(np.float64)
    else:
        raise WavFormatError(f"unsupported sample type {data.dtype}")
    return out.mean(axis=1) if out.ndim == 2 else out


def read_wav(path: PathLike) -> Waveform:
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, EOFError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc
    return Waveform(to_mono_float(data), rate)


def write_wav(path: PathLike, wave: Waveform) -> Path:
    """Write mono 16-bit PCM. Samples beyond +/-1 are clipped and reported."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if wave.clipped:
        log.warning("%s: clipping %d of %d samples", out.name, wave.clipped, len(wave))
    pcm = np.clip(np.round(wave.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(out), wave.sample_rate, pcm)
    return out
