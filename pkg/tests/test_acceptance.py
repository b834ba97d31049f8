"""End-to-end runs over the simulated channel at evaluation scale."""
import numpy as np
import pytest

from src.channel_sim import ChannelConfig, PsuModel, apply_channel, synthesize
from src.framing import encode_frame
from src.modem import FskConfig, OfdmConfig, fsk_modulate, ofdm_modulate
from src.receiver import ReceiverConfig, detect_ook, detect_preamble, smooth, spectral_frame, spectrogram
from src.reporting import ber_grid
from src.waveform import Waveform

pytestmark = pytest.mark.slow

RATE = 44_100


def test_error_free_at_30_db():
    df = ber_grid([30.0], [50.0], bits=1024, seed=42)
    row = df.iloc[0]
    assert row.ber == 0.0
    assert row.crc_errors == 0
    assert row.frames_ok == row.frames == 32


def test_ber_falls_with_snr_and_is_chance_at_minus_ten():
    df = ber_grid([-10.0, 0.0, 5.0, 10.0, 20.0, 30.0], [50.0], bits=2048, seed=42)
    ber = df.ber.to_numpy()
    assert np.all(np.diff(ber[1:]) <= 0)
    assert 0.40 <= ber[0] <= 0.60


def test_fsk_symbols_land_in_their_bins():
    cfg = FskConfig(8500, 8750, symbol_time=200)
    bits = "010101010"
    wave = synthesize(fsk_modulate(bits, cfg), PsuModel(), RATE)
    width = RATE / 4096
    for k, b in enumerate(bits):
        center = round((k + 0.5) * 0.2 * RATE)
        spec = spectral_frame(wave.samples[center - 2048 : center + 2048])
        spec[0] = 0.0
        expected = 8750 if b == "1" else 8500
        assert abs(int(np.argmax(spec)) - expected / width) <= 1


def test_ofdm_256_slots(rng):
    carriers = (8000.0, 8200.0, 8400.0, 8600.0)
    bits = rng.integers(0, 2, size=1024).astype(np.uint8)
    wave = synthesize(ofdm_modulate(bits, OfdmConfig(carriers, symbol_time=50)), PsuModel(), RATE).padded(0.25, 0.1)
    wave = apply_channel(wave, ChannelConfig(snr_db=30, band=(7900, 8700), seed=8))
    got = detect_ook(wave, carriers, 0.05, 256, start=0.25)
    assert (got == bits.reshape(256, 4)).mean() == 1.0


def test_preamble_acquired_every_time_at_20_db():
    cfg = ReceiverConfig.for_symbol_time(0.02)
    fsk = FskConfig(8500, 8750, symbol_time=20)
    clean = synthesize(fsk_modulate(encode_frame(0x5A5AF00F), fsk), PsuModel(), RATE).padded(0.25, 0.3)
    dt = cfg.hop / RATE
    width = cfg.bin_width
    for seed in range(100):
        wave = apply_channel(clean, ChannelConfig(snr_db=20, band=(8450, 8800), seed=seed))
        spectra = smooth(spectrogram(wave.samples, cfg.fft_size, cfg.hop), cfg.smoothing_window)
        times = np.arange(spectra.shape[0]) * dt + cfg.frame_delay
        params = detect_preamble(spectra, times, cfg)
        assert params is not None, f"seed {seed}"
        assert abs(params.f0 - 8500) <= width and abs(params.f1 - 8750) <= width
        assert abs(params.T - 0.02) <= dt


def test_no_false_preamble_in_a_minute_of_noise():
    cfg = ReceiverConfig.for_symbol_time(0.02)
    noise = Waveform(0.05 * np.random.default_rng(99).standard_normal(60 * RATE), RATE)
    spectra = spectrogram(noise.samples, cfg.fft_size, cfg.hop)
    times = np.arange(spectra.shape[0]) * cfg.hop / RATE + cfg.frame_delay
    window = int(2.0 * RATE / cfg.hop)
    for start in range(0, spectra.shape[0] - window, window // 2):
        assert detect_preamble(spectra[start : start + window], times[start : start + window], cfg) is None
