from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.channel_sim import (
    ChannelConfig,
    ChannelMode,
    PsuModel,
    apply_channel,
    count_bit_errors,
    measure_snr,
    synthesize,
)
from src.errors import ConfigError
from src.framing import FRAME_BITS, PAYLOAD_BITS, PREAMBLE, encode_stream, int_to_bits
from src.modem import FskConfig, SymbolSchedule, fsk_modulate
from src.receiver import ChannelParams, EventKind, ReceiverConfig, demodulate_aligned, receive_stream
from src.waveform import Waveform

log = logging.getLogger(__name__)

BER_COLUMNS = ["snr_db", "bitrate", "bits", "errors", "ber", "frames", "frames_ok", "crc_errors"]

LEAD_S = 0.25
TAIL_S = 0.5


@dataclass(frozen=True)
class BerSetup:
    f0: float = 8500.0
    f1: float = 8750.0
    cores: int = 4
    sample_rate: int = 44_100
    smoothing_window: int = 1
    model: PsuModel = PsuModel()


@dataclass(frozen=True)
class EvaluationReport:
    ber_cells: int
    core_rows: int
    distance_rows: int


def _cell_seeds(seed: int, index: int) -> tuple[int, int]:
    data, noise = np.random.SeedSequence([seed, index]).spawn(2)
    return int(data.generate_state(1)[0]), int(noise.generate_state(1)[0])


def count_matching(sent: Sequence[int], received: Sequence[int]) -> int:
    """Received payloads matching the sent ones in order (a lost frame skips ahead)."""
    i = matched = 0
    for p in received:
        while i < len(sent) and sent[i] != p:
            i += 1
        if i == len(sent):
            break
        matched += 1
        i += 1
    return matched


def transmit_frames(payloads: Sequence[int], fsk: FskConfig, setup: BerSetup) -> Waveform:
    """Framed FSK burst through the emission model, with lead and tail silence."""
    schedule: SymbolSchedule = fsk_modulate(encode_stream(payloads), fsk)
    return synthesize(schedule, setup.model, setup.sample_rate).padded(LEAD_S, TAIL_S)


def ber_cell(snr_db: float, bitrate: float, bits: int, seed: int, index: int, setup: BerSetup) -> dict:
    data_seed, noise_seed = _cell_seeds(seed, index)
    rng = np.random.default_rng(data_seed)
    n_frames = max(1, math.ceil(bits / PAYLOAD_BITS))
    payloads = [int(p) for p in rng.integers(0, 2**32, size=n_frames, dtype=np.uint64)]
    T = 1.0 / bitrate
    fsk = FskConfig(setup.f0, setup.f1, symbol_time=1000.0 * T, cores=setup.cores)

    clean = transmit_frames(payloads, fsk, setup)
    band = (setup.f0 - bitrate, setup.f1 + bitrate)
    noisy = apply_channel(clean, ChannelConfig(snr_db=snr_db, band=band, seed=noise_seed))

    rx_cfg = ReceiverConfig.for_symbol_time(
        T, sample_rate=setup.sample_rate, smoothing_window=setup.smoothing_window
    )
    frame_bits = FRAME_BITS
    params = ChannelParams(T, setup.f0, setup.f1, 1.0, 1.0, payload_start=LEAD_S)
    decided = demodulate_aligned(noisy, params, n_frames * frame_bits, rx_cfg).reshape(n_frames, frame_bits)
    got = decided[:, len(PREAMBLE) : len(PREAMBLE) + PAYLOAD_BITS].ravel()[:bits]
    sent = np.concatenate([int_to_bits(p, PAYLOAD_BITS) for p in payloads])[:bits]
    errors = count_bit_errors(sent, got)

    events = receive_stream(noisy, rx_cfg)
    received = [e.payload for e in events if e.kind is EventKind.PAYLOAD]
    row = {
        "snr_db": snr_db,
        "bitrate": bitrate,
        "bits": bits,
        "errors": errors,
        "ber": errors / bits,
        "frames": n_frames,
        "frames_ok": count_matching(payloads, received),
        "crc_errors": sum(e.kind is EventKind.CRC_ERROR for e in events),
    }
    log.info("BER cell snr=%g dB rate=%g bps: %d/%d errors, %d/%d frames", snr_db, bitrate, errors, bits, row["frames_ok"], n_frames)
    return row


def _ber_cell_args(args: tuple) -> dict:
    return ber_cell(*args)


def ber_grid(
    snrs: Sequence[float],
    bitrates: Sequence[float],
    *,
    bits: int = 1000,
    seed: int = 42,
    setup: BerSetup = BerSetup(),
    workers: int = 1,
) -> pd.DataFrame:
    """
    End-to-end BER per (SNR, bitrate) cell.

    - ber / errors: aided decisions (known timing), so acquisition does not mask bit errors
    - frames_ok / crc_errors: blind reception of the same recording
    Each cell seeds its payloads and noise from (seed, cell index).
    """
    if not snrs or not bitrates:
        raise ConfigError("BER grid needs at least one SNR and one bitrate")
    cells = [
        (float(snr), float(rate), int(bits), int(seed), i, setup)
        for i, (rate, snr) in enumerate((r, s) for r in bitrates for s in snrs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_ber_cell_args, cells))
    else:
        rows = [_ber_cell_args(c) for c in cells]
    return pd.DataFrame(rows, columns=BER_COLUMNS)


def _tone(freq: float, cores: int, duration: float, *, duty: float = 0.5) -> SymbolSchedule:
    return SymbolSchedule(
        np.array([duration * 1000.0]),
        np.full((1, cores), float(freq)),
        1.0,
        duty,
    )


def core_scaling(
    *,
    max_cores: int = 8,
    freq: float = 8500.0,
    model: PsuModel = PsuModel(),
    sample_rate: int = 44_100,
    noise_rms: float = 0.06,
    seed: int = 42,
) -> pd.DataFrame:
    """SNR and RMS of a one-second tone against a fixed noise floor for 1..max_cores cores."""
    noise = Waveform(noise_rms * np.random.default_rng(seed).standard_normal(sample_rate), sample_rate)
    band = (freq - 50.0, freq + 50.0)
    rows = []
    for n in range(1, max_cores + 1):
        wave = synthesize(_tone(freq, n, 1.0), model, sample_rate)
        rows.append({"cores": n, "rms": wave.rms, "snr_db": measure_snr(wave, band, noise)})
    return pd.DataFrame(rows, columns=["cores", "rms", "snr_db"])


def distance_profile(
    distances_cm: Sequence[float],
    *,
    freq: float = 8500.0,
    cores: int = 4,
    model: PsuModel = PsuModel(),
    sample_rate: int = 44_100,
    exponent: float = 2.0,
    noise_rms: float = 0.02,
    seed: int = 42,
) -> pd.DataFrame:
    """
    SNR versus receiver distance.

    A one-second recording of the tone is compared with a one-second recording
    of background noise at every distance.
    """
    clean = synthesize(_tone(freq, cores, 1.0), model, sample_rate)
    silence = Waveform.silence(1.0, sample_rate)
    band = (freq - 50.0, freq + 50.0)
    rows = []
    for i, d in enumerate(distances_cm):
        cfg = ChannelConfig(
            mode=ChannelMode.DISTANCE,
            distance_cm=float(d),
            exponent=exponent,
            noise_rms=noise_rms,
            seed=seed + i,
        )
        recording = apply_channel(clean, cfg)
        background = apply_channel(silence, ChannelConfig(mode=ChannelMode.DISTANCE, noise_rms=noise_rms, seed=seed + 10_000 + i))
        snr = measure_snr(recording, band, background, subtract_noise=True)
        rows.append({"distance_cm": float(d), "snr_db": snr})
    return pd.DataFrame(rows, columns=["distance_cm", "snr_db"])


def export_tables_to_csv(
    tables: dict[str, pd.DataFrame],
    *,
    out_dir: str = "outputs/reports",
) -> dict[str, str]:
    """Write each table as <name>.csv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    paths: dict[str, str] = {}
    for name, df in tables.items():
        path = out / f"{name}.csv"
        df.to_csv(path, index=False)
        paths[name] = str(path)
    return paths


def run_evaluation(
    *,
    snrs: Sequence[float] = (0, 5, 10, 20, 30),
    bitrates: Sequence[float] = (50,),
    bits: int = 1000,
    distances_cm: Sequence[float] = (20, 50, 100, 150, 200, 250),
    seed: int = 42,
    out_dir: str = "outputs/reports",
    workers: int = 1,
    setup: Optional[BerSetup] = None,
) -> tuple[EvaluationReport, dict[str, str]]:
    setup = setup or BerSetup()
    tables = {
        "ber": ber_grid(snrs, bitrates, bits=bits, seed=seed, setup=setup, workers=workers),
        "core_scaling": core_scaling(model=setup.model, sample_rate=setup.sample_rate, seed=seed),
        "distance": distance_profile(distances_cm, model=setup.model, sample_rate=setup.sample_rate, seed=seed),
    }
    report = EvaluationReport(
        ber_cells=len(tables["ber"]),
        core_rows=len(tables["core_scaling"]),
        distance_rows=len(tables["distance"]),
    )
    return report, export_tables_to_csv(tables, out_dir=out_dir)
