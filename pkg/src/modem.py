from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from src.errors import ConfigError
from src.framing import BitsLike, as_bits

MAX_TONE_HZ = 24_000.0
DEFAULT_SYMBOL_TIME_MS = 20.0

Number = Union[float, np.ndarray]


@dataclass(frozen=True)
class FskConfig:
    f0: float
    f1: float
    symbol_time: float = DEFAULT_SYMBOL_TIME_MS  # ms
    cores: int = 4

    def __post_init__(self) -> None:
        if self.f0 == self.f1:
            raise ConfigError("f0 and f1 must differ")
        for f in (self.f0, self.f1):
            if not 0 < f <= MAX_TONE_HZ:
                raise ConfigError(f"tone {f} Hz outside (0, {MAX_TONE_HZ:.0f}]")
        if self.symbol_time <= 0:
            raise ConfigError("symbol_time must be positive")
        if self.cores < 1:
            raise ConfigError("at least one core is needed")

    @property
    def bitrate(self) -> float:
        return 1000.0 / self.symbol_time


@dataclass(frozen=True)
class OfdmConfig:
    subcarriers: tuple[float, ...]
    symbol_time: float = DEFAULT_SYMBOL_TIME_MS  # ms
    max_cores: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "subcarriers", tuple(float(f) for f in self.subcarriers))
        if not self.subcarriers:
            raise ConfigError("at least one sub-carrier is needed")
        if len(set(self.subcarriers)) != len(self.subcarriers):
            raise ConfigError("sub-carrier frequencies must be pairwise distinct")
        for f in self.subcarriers:
            if not 0 < f <= MAX_TONE_HZ:
                raise ConfigError(f"sub-carrier {f} Hz outside (0, {MAX_TONE_HZ:.0f}]")
        if self.max_cores is not None and len(self.subcarriers) > self.max_cores:
            raise ConfigError(
                f"{len(self.subcarriers)} sub-carriers but only {self.max_cores} cores available"
            )
        if self.symbol_time <= 0:
            raise ConfigError("symbol_time must be positive")


@dataclass(frozen=True)
class CoreEntry:
    freq: Optional[float]  # None means SILENT
    level: float = 1.0
    duty: float = 0.5

    @property
    def active(self) -> bool:
        return self.freq is not None and self.level > 0 and self.duty > 0


@dataclass(frozen=True)
class Slot:
    duration_ms: float
    entries: tuple[CoreEntry, ...]

    @property
    def active_entries(self) -> list[tuple[int, CoreEntry]]:
        return [(i, e) for i, e in enumerate(self.entries) if e.active]


@dataclass(frozen=True, eq=False)
class SymbolSchedule:
    """Time-ordered carrier assignments, one row per slot and one column per core.

    A NaN frequency marks a SILENT core for that slot.
    """

    durations_ms: np.ndarray
    freqs: np.ndarray
    levels: np.ndarray
    duties: np.ndarray
    padding: int = 0

    def __post_init__(self) -> None:
        durations = np.asarray(self.durations_ms, dtype=float).ravel()
        freqs = np.atleast_2d(np.asarray(self.freqs, dtype=float))
        levels = np.broadcast_to(np.asarray(self.levels, dtype=float), freqs.shape).copy()
        duties = np.broadcast_to(np.asarray(self.duties, dtype=float), freqs.shape).copy()
        if freqs.shape[0] != durations.size:
            raise ConfigError("one frequency row per slot is required")
        if durations.size and np.any(durations <= 0):
            raise ConfigError("slot durations must be positive")
        tones = freqs[~np.isnan(freqs)]
        if np.any(tones <= 0):
            raise ConfigError("frequencies must be positive")
        if np.any((levels < 0) | (levels > 1)) or np.any((duties < 0) | (duties > 1)):
            raise ConfigError("levels and duty cycles must lie in [0, 1]")
        levels[np.isnan(freqs)] = 0.0
        for name, arr in (("durations_ms", durations), ("freqs", freqs), ("levels", levels), ("duties", duties)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_slots(cls, slots: Sequence[Slot]) -> "SymbolSchedule":
        if not slots:
            raise ConfigError("a schedule needs at least one slot")
        width = len(slots[0].entries)
        if any(len(s.entries) != width for s in slots):
            raise ConfigError("every slot must have the same core count")
        freqs = [[np.nan if e.freq is None else e.freq for e in s.entries] for s in slots]
        levels = [[e.level for e in s.entries] for s in slots]
        duties = [[e.duty for e in s.entries] for s in slots]
        return cls(np.array([s.duration_ms for s in slots]), np.array(freqs), np.array(levels), np.array(duties))

    @classmethod
    def silence(cls, duration_ms: float, cores: int) -> "SymbolSchedule":
        return cls(np.array([duration_ms]), np.full((1, cores), np.nan), 0.0, 0.5)

    @classmethod
    def concat(cls, parts: Sequence["SymbolSchedule"]) -> "SymbolSchedule":
        width = parts[0].cores
        if any(p.cores != width for p in parts):
            raise ConfigError("cannot join schedules with different core counts")
        return cls(
            np.concatenate([p.durations_ms for p in parts]),
            np.vstack([p.freqs for p in parts]),
            np.vstack([p.levels for p in parts]),
            np.vstack([p.duties for p in parts]),
            padding=sum(p.padding for p in parts),
        )

    def __len__(self) -> int:
        return self.durations_ms.size

    def __iter__(self) -> Iterator[Slot]:
        for i in range(len(self)):
            yield self.slot(i)

    def slot(self, i: int) -> Slot:
        entries = tuple(
            CoreEntry(None if np.isnan(f) else float(f), float(l), float(d))
            for f, l, d in zip(self.freqs[i], self.levels[i], self.duties[i])
        )
        return Slot(float(self.durations_ms[i]), entries)

    @property
    def cores(self) -> int:
        return self.freqs.shape[1]

    @property
    def duration_ms(self) -> float:
        return float(self.durations_ms.sum())

    @property
    def max_frequency(self) -> float:
        active = self.freqs[~np.isnan(self.freqs)]
        return float(active.max()) if active.size else 0.0

    @property
    def active_mask(self) -> np.ndarray:
        return ~np.isnan(self.freqs) & (self.levels > 0) & (self.duties > 0)

    def to_text(self) -> str:
        lines = [f"# schedule cores={self.cores} padding={self.padding}"]
        for i in range(len(self)):
            tokens = [format(self.durations_ms[i], ".10g")]
            for f, lvl, duty in zip(self.freqs[i], self.levels[i], self.duties[i]):
                if np.isnan(f):
                    tokens.append("-")
                    continue
                tok = format(f, ".10g")
                if lvl != 1.0:
                    tok += f":{lvl:.10g}"
                if duty != 0.5:
                    tok += f"@{duty:.10g}"
                tokens.append(tok)
            lines.append(" ".join(tokens))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SymbolSchedule":
        padding = 0
        slots: list[Slot] = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for part in line[1:].split():
                    if part.startswith("padding="):
                        padding = int(part.split("=", 1)[1])
                continue
            duration, *tokens = line.split()
            entries = []
            for tok in tokens:
                if tok == "-":
                    entries.append(CoreEntry(None, 0.0))
                    continue
                duty = 0.5
                if "@" in tok:
                    tok, duty_s = tok.split("@", 1)
                    duty = float(duty_s)
                level = 1.0
                if ":" in tok:
                    tok, level_s = tok.split(":", 1)
                    level = float(level_s)
                entries.append(CoreEntry(float(tok), level, duty))
            slots.append(Slot(float(duration), tuple(entries)))
        sched = cls.from_slots(slots)
        object.__setattr__(sched, "padding", padding)
        return sched


def fsk_modulate(bits: BitsLike, cfg: FskConfig) -> SymbolSchedule:
    arr = as_bits(bits)
    if arr.size == 0:
        raise ConfigError("nothing to modulate")
    tones = np.where(arr == 1, cfg.f1, cfg.f0).astype(float)
    freqs = np.repeat(tones[:, None], cfg.cores, axis=1)
    return SymbolSchedule(np.full(arr.size, cfg.symbol_time), freqs, 1.0, 0.5)


def ofdm_modulate(bits: BitsLike, cfg: OfdmConfig) -> SymbolSchedule:
    """Positional on-off keying: sub-carrier k is ON iff bit k of the group is 1."""
    arr = as_bits(bits)
    if arr.size == 0:
        raise ConfigError("nothing to modulate")
    width = len(cfg.subcarriers)
    pad = -arr.size % width
    groups = np.concatenate([arr, np.zeros(pad, dtype=np.uint8)]).reshape(-1, width)
    carriers = np.asarray(cfg.subcarriers)
    freqs = np.where(groups == 1, carriers[None, :], np.nan)
    levels = (groups == 1).astype(float)
    return SymbolSchedule(np.full(groups.shape[0], cfg.symbol_time), freqs, levels, 0.5, padding=pad)


def am_quantize(sample: Number, n_levels: int) -> Number:
    """Active core count for a PCM sample: round(|sample| * N)."""
    if n_levels < 1:
        raise ConfigError("n_levels must be at least 1")
    counts = np.floor(np.clip(np.abs(sample), 0.0, 1.0) * n_levels + 0.5).astype(int)
    return int(counts) if np.ndim(counts) == 0 else counts


def pwm_quantize(sample: Number, resolution: int) -> Number:
    """Duty cycle for a sample in [0, 1], quantized to 1/resolution steps."""
    if resolution < 2:
        raise ConfigError("resolution must be at least 2")
    duty = np.floor(np.clip(sample, 0.0, 1.0) * resolution + 0.5) / resolution
    return float(duty) if np.ndim(duty) == 0 else duty
