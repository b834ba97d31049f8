
import numpy as np
import pytest

from src.errors import SampleRateMismatch, WavFormatError
from src.waveform import Waveform, read_wav, write_wav


def test_wav_round_trip_is_16_bit(tmp_path):
    wave = Waveform(0.5 * np.sin(np.linspace(0, 20, 1000)), 44_100)
    back = read_wav(write_wav(tmp_path / "w.wav", wave))
    assert back.sample_rate == 44_100
    np.testing.assert_allclose(back.samples, wave.samples, atol=1 / 16_000)


def test_clipping_is_counted(tmp_path):
    wave = Waveform(np.array([0.0, 1.5, -2.0, 0.5]), 8000)
    assert wave.clipped == 2
    back = read_wav(write_wav(tmp_path / "clip.wav", wave))
    assert back.peak <= 1.0


def test_read_wav_rejects_garbage(tmp_path):
    path = tmp_path / "x.wav"
    path.write_bytes(b"garbage")
    with pytest.raises(WavFormatError):
        read_wav(path)


def test_window_pad_concat():
    wave = Waveform(np.ones(100), 100)
    assert len(wave.padded(0.5, 0.25)) == 175
    assert len(wave.window(0.2, 0.5)) == 30
    assert len(Waveform.concat([wave, Waveform.silence(1.0, 100)])) == 200
    with pytest.raises(SampleRateMismatch):
        Waveform.concat([wave, Waveform(np.ones(5), 50)])
