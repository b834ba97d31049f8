from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from src.errors import ConfigError, CrcError, SampleRateMismatch
from src.framing import CODEWORD_BITS, decode_frame
from src.waveform import Waveform

log = logging.getLogger(__name__)


class RxState(str, Enum):
    PREAMBLE = "PREAMBLE"
    DEMODULATE = "DEMODULATE"


class EventKind(str, Enum):
    PREAMBLE = "PREAMBLE"
    PAYLOAD = "PAYLOAD"
    CRC_ERROR = "CRC_ERROR"
    SIGNAL_LOST = "SIGNAL_LOST"


@dataclass(frozen=True)
class ReceiverConfig:
    sample_rate: int = 44_100
    fft_size: int = 4096
    hop: int = 1024
    smoothing_window: int = 4
    lost_signal_timeout: float = 3.0  # s
    detection_margin_db: float = 6.0
    band: tuple[float, float] = (2000.0, 24000.0)
    max_symbol_time: float = 1.0  # s
    min_symbol_hops: int = 3

    def __post_init__(self) -> None:
        if self.fft_size < 2 or self.fft_size & (self.fft_size - 1):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 < self.hop <= self.fft_size:
            raise ConfigError("hop must satisfy 0 < hop <= fft_size")
        if self.smoothing_window < 1:
            raise ConfigError("smoothing_window must be >= 1")
        if self.lost_signal_timeout <= 0:
            raise ConfigError("lost_signal_timeout must be positive")
        if self.sample_rate <= 0 or self.max_symbol_time <= 0 or self.min_symbol_hops < 1:
            raise ConfigError("sample_rate, max_symbol_time and min_symbol_hops must be positive")
        lo, hi = self.band
        if not 0 <= lo < hi:
            raise ConfigError(f"bad receiver band {self.band}")

    @classmethod
    def for_symbol_time(cls, symbol_time: float, **overrides) -> "ReceiverConfig":
        """FFT geometry giving at least four hops per symbol of symbol_time seconds.

        ``max_hop`` and ``max_fft_size`` bound the geometry used for long symbols.

        The smoothing window is capped at a quarter of the hops per symbol so the
        averaged spectrum never spans more than one symbol.
        """
        rate = overrides.get("sample_rate", cls.sample_rate)
        max_hop = overrides.pop("max_hop", 1024)
        max_fft = overrides.pop("max_fft_size", 4096)
        hop = overrides.get("hop", max_hop)
        if "hop" not in overrides:
            while hop > 16 and symbol_time * rate / hop < 4:
                hop //= 2
        cap = max(1, int(symbol_time * rate / hop) // 4)
        smoothing = min(overrides.pop("smoothing_window", cls.smoothing_window), cap)
        params = dict(
            hop=hop,
            fft_size=min(4 * hop, max_fft),
            max_symbol_time=4 * symbol_time,
            smoothing_window=smoothing,
        )
        params.update(overrides)
        return cls(**params)

    @property
    def bin_width(self) -> float:
        return self.sample_rate / self.fft_size

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def bin_of(self, freq: float) -> int:
        return int(min(max(round(freq / self.bin_width), 0), self.n_bins - 1))

    @property
    def band_bins(self) -> tuple[int, int]:
        lo, hi = self.band
        return self.bin_of(lo), self.bin_of(min(hi, self.sample_rate / 2))

    @property
    def margin(self) -> float:
        return 10.0 ** (self.detection_margin_db / 20.0)

    @property
    def frame_delay(self) -> float:
        """Offset from a frame's first sample to the effective time of its smoothed spectrum."""
        return (self.fft_size / 2 - (self.smoothing_window - 1) * self.hop / 2) / self.sample_rate


@dataclass(frozen=True)
class ChannelParams:
    T: float  # s
    f0: float
    f1: float
    amp0: float
    amp1: float
    payload_start: float = 0.0  # s, stream time of the first payload bit

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise ConfigError("symbol time must be positive")
        if self.f0 == self.f1:
            raise ConfigError("f0 and f1 must differ")
        if self.amp0 < 0 or self.amp1 < 0:
            raise ConfigError("tone amplitudes must be >= 0")

    def bit_center(self, k: int) -> float:
        return self.payload_start + (k + 0.5) * self.T


@dataclass(frozen=True)
class ReceiverEvent:
    time: float
    kind: EventKind
    payload: Optional[int] = None
    detail: str = ""

    @property
    def hex(self) -> str:
        return f"{self.payload:08X}" if self.payload is not None else ""


# --- spectral front end ------------------------------------------------------

def _window(n: int) -> np.ndarray:
    return get_window("hann", n)


def spectral_frame(samples: np.ndarray, fft_size: Optional[int] = None) -> np.ndarray:
    """Hann-windowed magnitude spectrum, scaled so a full-scale sine reads 1.0."""
    x = np.asarray(samples, dtype=float)
    if fft_size is not None and x.size != fft_size:
        raise ConfigError(f"window length {x.size} != fft_size {fft_size}")
    w = _window(x.size)
    return np.abs(np.fft.rfft(w * x)) * (2.0 / w.sum())


def spectrogram(samples: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Magnitude spectra of every full window, frames[i] starting at sample i*hop."""
    x = np.asarray(samples, dtype=float)
    if x.size < fft_size:
        return np.zeros((0, fft_size // 2 + 1))
    frames = sliding_window_view(x, fft_size)[::hop]
    w = _window(fft_size)
    return np.abs(np.fft.rfft(frames * w, axis=1)) * (2.0 / w.sum())


def smooth(spectra: np.ndarray, w: int) -> np.ndarray:
    """Causal per-bin mean over the current and previous w-1 spectra."""
    if w < 1:
        raise ConfigError("w must be >= 1")
    s = np.asarray(spectra, dtype=float)
    if w == 1 or s.shape[0] == 0:
        return s.copy()
    csum = np.cumsum(s, axis=0)
    out = csum.copy()
    out[w:] = csum[w:] - csum[:-w]
    counts = np.minimum(np.arange(1, s.shape[0] + 1), w).reshape((-1,) + (1,) * (s.ndim - 1))
    return out / counts


def tone_level(spectrum: np.ndarray, params: ChannelParams, cfg: ReceiverConfig) -> float:
    return float(max(spectrum[cfg.bin_of(params.f0)], spectrum[cfg.bin_of(params.f1)]))


def demodulate_step(spectrum: np.ndarray, params: ChannelParams, cfg: ReceiverConfig) -> int:
    """1 iff the f1 bin is strictly stronger than the f0 bin; ties read as 0."""
    return int(spectrum[cfg.bin_of(params.f1)] > spectrum[cfg.bin_of(params.f0)])


class _QuietTimer:
    """How long the carrier has stayed below the loss threshold."""

    def __init__(self, timeout: float) -> None:
        self.timeout = timeout
        self.since: Optional[float] = None

    def update(self, t: float, quiet: bool) -> bool:
        """Feed one frame; True once the quiet run reaches the timeout."""
        if not quiet:
            self.since = None
            return False
        if self.since is None:
            self.since = t
        return t - self.since >= self.timeout


def _is_quiet(spectrum: np.ndarray, params: ChannelParams, cfg: ReceiverConfig) -> bool:
    return tone_level(spectrum, params, cfg) < params.amp0 / cfg.margin


def signal_lost(
    spectra: np.ndarray,
    times: np.ndarray,
    params: ChannelParams,
    cfg: ReceiverConfig,
) -> bool:
    """True iff both tones stayed below amp0 less the margin for at least the timeout."""
    timer = _QuietTimer(cfg.lost_signal_timeout)
    return any(timer.update(float(t), _is_quiet(s, params, cfg)) for s, t in zip(spectra, times))


# --- preamble acquisition ------------------------------------------------------

_PENDING = object()


def _candidate_bins(peaks: np.ndarray, n_bins: int, min_count: int, limit: int = 3) -> list[int]:
    """Most frequent dominant bins, neighbours pooled, picks at least two bins apart."""
    if peaks.size == 0:
        return []
    counts = np.bincount(peaks, minlength=n_bins).astype(float)
    pooled = counts.copy()
    pooled[1:] += counts[:-1]
    pooled[:-1] += counts[1:]
    out: list[int] = []
    while len(out) < limit:
        b = int(np.argmax(pooled))
        if pooled[b] < min_count:
            break
        lo = max(b - 1, 0)
        best = lo + int(np.argmax(counts[lo : b + 2]))
        out.append(best)
        pooled[max(min(b, best) - 1, 0) : max(b, best) + 2] = 0.0
    return out


def _crossings(d: np.ndarray, times: np.ndarray, hysteresis: float) -> list[tuple[float, int]]:
    """Zero crossings of d confirmed by hysteresis, as (time, new sign)."""
    out: list[tuple[float, int]] = []
    sign = 0
    last = -1
    for i, v in enumerate(d):
        s = 1 if v > hysteresis else -1 if v < -hysteresis else 0
        if s == 0:
            continue
        if sign and s != sign:
            k = i - 1
            while k > last and d[k] * s > 0:
                k -= 1
            dk, dk1 = d[k], d[k + 1]
            frac = dk / (dk - dk1) if dk != dk1 else 0.0
            out.append((float(times[k] + (times[k + 1] - times[k]) * frac), s))
        sign = s
        last = i
    return out


def _refine(mean_spec: np.ndarray, b: int, cfg: ReceiverConfig) -> float:
    lo, hi = max(b - 1, 1), min(b + 1, mean_spec.size - 2)
    b = lo + int(np.argmax(mean_spec[lo : hi + 1]))
    a, m, c = np.log(mean_spec[b - 1 : b + 2] + 1e-20)
    denom = a - 2 * m + c
    delta = 0.5 * (a - c) / denom if denom < 0 else 0.0
    return (b + float(np.clip(delta, -0.5, 0.5))) * cfg.bin_width


def _nearest(times: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(times, t))
    if i <= 0:
        return 0
    if i >= times.size:
        return times.size - 1
    return i if times[i] - t < t - times[i - 1] else i - 1


def _match_pair(spectra, times, floor, a: int, b: int, cfg: ReceiverConfig):
    ma, mb = spectra[:, a], spectra[:, b]
    loud = np.maximum(ma, mb) >= floor * cfg.margin
    if loud.sum() < 2 * cfg.min_symbol_hops:
        return None
    d = mb - ma
    hysteresis = 0.3 * float(np.percentile(np.abs(d[loud]), 90))
    cross = _crossings(d, times, hysteresis)
    dt = cfg.hop / cfg.sample_rate

    for start in range(len(cross) - 6):
        run = cross[start : start + 7]
        c = np.array([t for t, _ in run])
        spacing = np.diff(c)
        med = float(np.median(spacing))
        if med < cfg.min_symbol_hops * dt or med > cfg.max_symbol_time:
            continue
        if np.any(np.abs(spacing - med) > 0.25 * med):
            continue
        T, c1 = np.polyfit(np.arange(7), c, 1)
        c7 = c1 + 6 * T
        # first crossing leaves the '1' tone
        one, zero = (a, b) if run[0][1] > 0 else (b, a)

        # frames straddling an edge carry both tones; judge the flanks by majority
        pre = (times >= c1 - 0.6 * T) & (times <= c1 - 0.15 * T)
        if times[0] > c1 - 0.15 * T or not pre.any():
            continue
        if np.mean(spectra[pre, one] > spectra[pre, zero]) <= 0.5:
            continue
        # a run that starts inside a longer alternation is not the first '1'
        before = c1 - 1.5 * T
        if before >= times[0]:
            j = _nearest(times, before)
            s = spectra[j]
            if s[zero] >= s[one] * cfg.margin and s[zero] >= floor[j] * cfg.margin:
                continue

        ok = True
        centers = [(c1 + (i + 0.5) * T, zero if i % 2 == 0 else one) for i in range(6)]
        for t, dom in centers:
            j = _nearest(times, t)
            other = one if dom == zero else zero
            s = spectra[j]
            if s[dom] < s[other] * cfg.margin or s[dom] < floor[j] * cfg.margin:
                ok = False
                break
        if not ok:
            continue

        if times[-1] < c7 + 0.6 * T:
            return _PENDING
        post = (times >= c7 + 0.15 * T) & (times <= c7 + 0.6 * T)
        if not post.any() or np.mean(spectra[post, zero] > spectra[post, one]) <= 0.5:
            continue

        one_rows = [_nearest(times, t) for t, dom in centers if dom == one]
        zero_rows = [_nearest(times, t) for t, dom in centers if dom == zero]
        f1 = _refine(spectra[one_rows].mean(axis=0), one, cfg)
        f0 = _refine(spectra[zero_rows].mean(axis=0), zero, cfg)
        if cfg.bin_of(f0) == cfg.bin_of(f1):
            continue
        amp1 = float(spectra[one_rows, cfg.bin_of(f1)].mean())
        amp0 = float(spectra[zero_rows, cfg.bin_of(f0)].mean())
        return ChannelParams(T=float(T), f0=f0, f1=f1, amp0=amp0, amp1=amp1, payload_start=float(c7 + T))
    return None


def detect_preamble(spectra: np.ndarray, times: np.ndarray, cfg: ReceiverConfig) -> Optional[ChannelParams]:
    """Find the earliest '10101010' preamble in a run of smoothed spectra.

    Candidate tone pairs come from the most frequent dominant bins in the band.
    The learned parameters carry the stream time where the payload begins.
    """
    found = _detect(spectra, times, cfg)
    return None if found is _PENDING else found


def _detect(spectra: np.ndarray, times: np.ndarray, cfg: ReceiverConfig):
    if times.size < 8 * cfg.min_symbol_hops:
        return None
    lo, hi = cfg.band_bins
    band = spectra[:, lo : hi + 1]
    floor = np.median(band, axis=1)
    peaks = np.argmax(band, axis=1) + lo
    tonal = band.max(axis=1) >= floor * cfg.margin
    candidates = _candidate_bins(peaks[tonal], cfg.n_bins, 2 * cfg.min_symbol_hops)
    for a, b in itertools.combinations(candidates, 2):
        if abs(a - b) < 2:
            continue
        found = _match_pair(spectra, times, floor, min(a, b), max(a, b), cfg)
        if found is not None:
            return found
    return None


# --- stream state machine -----------------------------------------------------

class Receiver:
    """Incremental receiver: feed sample blocks, collect events.

    Must be driven from one context at a time.
    """

    def __init__(self, cfg: ReceiverConfig) -> None:
        self.cfg = cfg
        self.events: list[ReceiverEvent] = []
        self.state = RxState.PREAMBLE
        self.params: Optional[ChannelParams] = None
        self.bits: list[int] = []

        self._pending = np.zeros(0)
        self._frames_done = 0
        self._raw_tail = np.zeros((0, cfg.n_bins))
        self._times = np.zeros(0)
        self._spectra = np.zeros((0, cfg.n_bins))
        self._first = 0  # absolute index of _times[0]
        self._cursor = 0  # absolute index of the next frame to demodulate
        self._quiet = _QuietTimer(cfg.lost_signal_timeout)
        self._capacity = int(math.ceil(10 * cfg.max_symbol_time * cfg.sample_rate / cfg.hop)) + cfg.smoothing_window
        self._chunk = max(cfg.fft_size, (self._capacity // 4) * cfg.hop)

    # -- history

    def _append(self, samples: np.ndarray) -> None:
        cfg = self.cfg
        buf = np.concatenate([self._pending, samples])
        raw = spectrogram(buf, cfg.fft_size, cfg.hop)
        n = raw.shape[0]
        self._pending = buf[n * cfg.hop :]
        if n == 0:
            return
        tail = self._raw_tail
        smoothed = smooth(np.vstack([tail, raw]), cfg.smoothing_window)[tail.shape[0] :]
        keep = cfg.smoothing_window - 1
        self._raw_tail = np.vstack([tail, raw])[-keep:] if keep else raw[:0]
        idx = self._frames_done + np.arange(n)
        times = idx * cfg.hop / cfg.sample_rate + cfg.frame_delay
        self._frames_done += n
        self._times = np.concatenate([self._times, times])
        self._spectra = np.vstack([self._spectra, smoothed])
        excess = self._times.size - self._capacity
        if self.state is RxState.DEMODULATE:
            excess = min(excess, self._cursor - 2 - self._first)
        if excess > 0:
            self._drop(excess)

    def _drop(self, n: int) -> None:
        self._times = self._times[n:]
        self._spectra = self._spectra[n:]
        self._first += n

    def _drop_before(self, t: float) -> None:
        self._drop(int(np.searchsorted(self._times, t, side="left")))

    # -- events

    def _emit(self, time: float, kind: EventKind, payload: Optional[int] = None, detail: str = "") -> ReceiverEvent:
        event = ReceiverEvent(time, kind, payload, detail)
        self.events.append(event)
        if kind in (EventKind.CRC_ERROR, EventKind.SIGNAL_LOST):
            log.warning("%.3fs %s %s", time, kind.value, detail)
        else:
            log.info("%.3fs %s %s", time, kind.value, detail or event.hex)
        return event

    def _reset(self) -> None:
        self.state = RxState.PREAMBLE
        self.params = None
        self.bits = []
        self._quiet = _QuietTimer(self.cfg.lost_signal_timeout)

    # -- driving

    def feed(self, samples: np.ndarray) -> list[ReceiverEvent]:
        start = len(self.events)
        x = np.asarray(samples, dtype=float).ravel()
        for i in range(0, max(x.size, 1), self._chunk):
            self._append(x[i : i + self._chunk])
            self._run()
        return self.events[start:]

    def flush(self) -> list[ReceiverEvent]:
        """End of stream: push the tail through and report an unfinished frame."""
        start = len(self.events)
        self.feed(np.zeros(self.cfg.fft_size))
        if self.state is RxState.DEMODULATE:
            t = float(self._times[-1]) if self._times.size else 0.0
            self._emit(t, EventKind.SIGNAL_LOST, detail=f"stream ended after {len(self.bits)} bits")
            self._reset()
        self._pending = np.zeros(0)
        return self.events[start:]

    def _run(self) -> None:
        while True:
            if self.state is RxState.PREAMBLE:
                found = _detect(self._spectra, self._times, self.cfg)
                if found is None or found is _PENDING:
                    return
                self._lock(found)
            if not self._demodulate():
                return

    def _lock(self, params: ChannelParams) -> None:
        self.state = RxState.DEMODULATE
        self.params = params
        self.bits = []
        self._quiet = _QuietTimer(self.cfg.lost_signal_timeout)
        self._cursor = self._first + int(np.searchsorted(self._times, params.payload_start - params.T, side="right"))
        self._emit(
            params.payload_start,
            EventKind.PREAMBLE,
            detail=f"T={params.T * 1000:.1f}ms f0={params.f0:.0f}Hz f1={params.f1:.0f}Hz",
        )

    def _demodulate(self) -> bool:
        """Advance over unread frames. True when the state returned to PREAMBLE."""
        cfg, p = self.cfg, self.params
        times, spectra = self._times, self._spectra
        while self._cursor - self._first < times.size:
            j = self._cursor - self._first
            t = float(times[j])
            quiet_since = self._quiet.since
            if self._quiet.update(t, _is_quiet(spectra[j], p, cfg)):
                self._emit(t, EventKind.SIGNAL_LOST, detail=f"{len(self.bits)} bits discarded")
                self._reset()
                self._drop(j + 1)
                return True
            if self._quiet.since is None and quiet_since is not None and t - quiet_since >= p.T and j > 0:
                level = tone_level(spectra[j], p, cfg)
                prev_level = tone_level(spectra[j - 1], p, cfg)
                half = 0.5 * p.amp0
                frac = (half - prev_level) / (level - prev_level) if level > prev_level else 1.0
                onset = float(times[j - 1] + (t - times[j - 1]) * np.clip(frac, 0.0, 1.0))
                p = replace(p, payload_start=onset - len(self.bits) * p.T)
                self.params = p
                log.debug("carrier resumed at %.3fs after %.2fs", onset, t - quiet_since)

            while self._quiet.since is None:
                center = p.bit_center(len(self.bits))
                if center > t:
                    break
                k = _nearest(times, center)
                self.bits.append(demodulate_step(spectra[k], p, cfg))
                if len(self.bits) == CODEWORD_BITS:
                    self._finish_frame()
                    return True
            self._cursor += 1
        return False

    def _finish_frame(self) -> None:
        p = self.params
        end = p.payload_start + CODEWORD_BITS * p.T
        try:
            payload = decode_frame(self.bits)
        except CrcError as exc:
            self._emit(end, EventKind.CRC_ERROR, detail=str(exc))
        else:
            self._emit(end, EventKind.PAYLOAD, payload=payload)
        self._reset()
        self._drop_before(end + 0.25 * p.T)


def receive_stream(wave: Waveform, cfg: ReceiverConfig) -> list[ReceiverEvent]:
    """Run a whole recording through the receiver; returns PAYLOAD and CRC_ERROR events."""
    return [
        e
        for e in receive_events(wave, cfg)
        if e.kind in (EventKind.PAYLOAD, EventKind.CRC_ERROR)
    ]


def receive_events(wave: Waveform, cfg: ReceiverConfig) -> list[ReceiverEvent]:
    """Full event log (preamble locks and signal loss included)."""
    if wave.sample_rate != cfg.sample_rate:
        raise SampleRateMismatch(f"waveform at {wave.sample_rate} Hz, receiver expects {cfg.sample_rate} Hz")
    if len(wave) == 0:
        return []
    rx = Receiver(cfg)
    rx.feed(wave.samples)
    rx.flush()
    return rx.events


# --- aided instruments ------------------------------------------------------------

def _centered_frame(x: np.ndarray, center: int, n: int) -> np.ndarray:
    a = center - n // 2
    out = np.zeros(n)
    lo, hi = max(a, 0), min(a + n, x.size)
    if hi > lo:
        out[lo - a : hi - a] = x[lo:hi]
    return out


def demodulate_aligned(wave: Waveform, params: ChannelParams, n_bits: int, cfg: ReceiverConfig) -> np.ndarray:
    """Bit decisions with known timing and tones, one centred window per bit."""
    x = wave.samples
    bits = np.zeros(n_bits, dtype=np.uint8)
    for k in range(n_bits):
        center = round(params.bit_center(k) * wave.sample_rate)
        spec = spectral_frame(_centered_frame(x, center, cfg.fft_size))
        bits[k] = demodulate_step(spec, params, cfg)
    return bits


def detect_ook(
    wave: Waveform,
    subcarriers: Sequence[float],
    symbol_time: float,
    n_slots: int,
    *,
    start: float = 0.0,
    margin_db: float = 6.0,
) -> np.ndarray:
    """Per-slot ON/OFF decisions for each sub-carrier with known slot timing.

    Returns an (n_slots, len(subcarriers)) uint8 array.
    """
    rate = wave.sample_rate
    slot = int(symbol_time * rate)
    n = 1 << max(4, int(math.floor(math.log2(max(slot, 16)))))
    n = min(n, 4096)
    bins = [round(f * n / rate) for f in subcarriers]
    levels = np.zeros((n_slots, len(bins)))
    floors = np.zeros(n_slots)
    for i in range(n_slots):
        center = round((start + (i + 0.5) * symbol_time) * rate)
        spec = spectral_frame(_centered_frame(wave.samples, center, n))
        levels[i] = spec[bins]
        floors[i] = np.median(spec[1:])
    margin = 10.0 ** (margin_db / 20.0)
    noise = float(np.median(floors)) if floors.size else 0.0
    reference = float(np.percentile(levels, 99)) if levels.size else 0.0
    if reference > noise * margin**2:
        threshold = np.maximum(reference / 2.0, floors * margin)
    else:
        # no slot is clearly ON; only outliers far above the floor count
        threshold = floors * margin**2
    return (levels > threshold[:, None]).astype(np.uint8)
