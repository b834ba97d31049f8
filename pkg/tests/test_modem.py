import numpy as np
import pytest

from src.errors import ConfigError
from src.modem import (
    CoreEntry,
    FskConfig,
    OfdmConfig,
    Slot,
    SymbolSchedule,
    am_quantize,
    fsk_modulate,
    ofdm_modulate,
    pwm_quantize,
)


def read_fsk_bits(schedule, cfg):
    """Noiseless readback: the ideal FSK demodulator."""
    return (schedule.freqs[:, 0] == cfg.f1).astype(np.uint8)


def read_ook_bits(schedule):
    bits = schedule.active_mask.astype(np.uint8).ravel()
    return bits[: bits.size - schedule.padding] if schedule.padding else bits


def test_fsk_alternating_pattern():
    cfg = FskConfig(8500, 8750)
    sched = fsk_modulate("010101010", cfg)
    assert len(sched) == 9
    np.testing.assert_array_equal(sched.freqs[:, 0], [8500, 8750] * 4 + [8500])
    assert (sched.freqs == sched.freqs[:, :1]).all()
    assert (sched.levels == 1.0).all()


def test_fsk_single_zero():
    sched = fsk_modulate("0", FskConfig(8400, 8600))
    assert len(sched) == 1
    assert sched.freqs[0, 0] == 8400


def test_fsk_slot_duration():
    sched = fsk_modulate("11", FskConfig(8400, 8600, symbol_time=100))
    np.testing.assert_array_equal(sched.durations_ms, [100, 100])
    assert (sched.freqs == 8600).all()
    assert sched.duration_ms == 200


def test_fsk_readback_is_identity(rng):
    cfg = FskConfig(8500, 8750, symbol_time=20, cores=2)
    bits = rng.integers(0, 2, size=300).astype(np.uint8)
    sched = fsk_modulate(bits, cfg)
    np.testing.assert_array_equal(read_fsk_bits(sched, cfg), bits)
    assert sched.duration_ms == pytest.approx(300 * 20)


@pytest.mark.parametrize(
    "kwargs",
    [dict(f0=8500, f1=8500), dict(f0=0, f1=8500), dict(f0=8500, f1=25_000), dict(f0=1, f1=2, symbol_time=0)],
)
def test_fsk_config_validation(kwargs):
    with pytest.raises(ConfigError):
        FskConfig(**kwargs)


def test_fsk_rejects_empty():
    with pytest.raises(ConfigError):
        fsk_modulate("", FskConfig(8500, 8750))


def test_ofdm_positional_ook():
    cfg = OfdmConfig((8000, 8200, 8400, 8600))
    sched = ofdm_modulate("1010", cfg)
    assert len(sched) == 1
    np.testing.assert_array_equal(sched.active_mask[0], [True, False, True, False])
    assert sched.freqs[0, 0] == 8000 and sched.freqs[0, 2] == 8400


def test_ofdm_all_silent_and_all_on():
    cfg = OfdmConfig((8000, 8200, 8400, 8600))
    assert not ofdm_modulate("0000", cfg).active_mask.any()
    on = ofdm_modulate("11111111", cfg)
    assert len(on) == 2 and on.active_mask.all()


def test_ofdm_padding_recorded(rng):
    cfg = OfdmConfig((8000, 8200, 8400, 8600), symbol_time=50)
    bits = rng.integers(0, 2, size=10).astype(np.uint8)
    sched = ofdm_modulate(bits, cfg)
    assert sched.padding == 2
    assert len(sched) == 3
    assert sched.duration_ms == 150
    np.testing.assert_array_equal(read_ook_bits(sched), bits)


def test_ofdm_one_frequency_per_core(rng):
    cfg = OfdmConfig((8000, 8200, 8400, 8600))
    sched = ofdm_modulate(rng.integers(0, 2, size=64).astype(np.uint8), cfg)
    for col, f in enumerate(cfg.subcarriers):
        column = sched.freqs[:, col]
        assert set(column[~np.isnan(column)]) <= {f}


def test_ofdm_config_validation():
    with pytest.raises(ConfigError):
        OfdmConfig((8000, 8000))
    with pytest.raises(ConfigError):
        OfdmConfig((8000, 8200, 8400), max_cores=2)


def test_am_quantize():
    assert am_quantize(1.0, 4) == 4
    assert am_quantize(0.0, 4) == 0
    assert am_quantize(-0.5, 4) == 2
    counts = am_quantize(np.linspace(0, 1, 50), 8)
    assert (np.diff(counts) >= 0).all()
    with pytest.raises(ConfigError):
        am_quantize(0.5, 0)


def test_pwm_quantize():
    assert pwm_quantize(0.75, 8) == 0.75
    assert pwm_quantize(0.0, 8) == 0.0
    duties = pwm_quantize(np.linspace(1.0, 0.125, 8), 8)
    assert (np.diff(duties) < 0).all()
    with pytest.raises(ConfigError):
        pwm_quantize(0.5, 1)


def test_schedule_text_round_trip():
    sched = SymbolSchedule.from_slots(
        [
            Slot(20.0, (CoreEntry(8500.0), CoreEntry(None, 0.0))),
            Slot(12.5, (CoreEntry(9000.0, 0.5, 0.75), CoreEntry(8000.0))),
        ]
    )
    back = SymbolSchedule.from_text(sched.to_text())
    np.testing.assert_array_equal(back.durations_ms, sched.durations_ms)
    np.testing.assert_array_equal(back.freqs, sched.freqs)
    np.testing.assert_array_equal(back.levels, sched.levels)
    np.testing.assert_array_equal(back.duties, sched.duties)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        SymbolSchedule(np.array([0.0]), np.array([[8500.0]]), 1.0, 0.5)
    with pytest.raises(ConfigError):
        SymbolSchedule.from_slots([Slot(1.0, (CoreEntry(1.0),)), Slot(1.0, (CoreEntry(1.0), CoreEntry(1.0)))])
    with pytest.raises(ConfigError):
        SymbolSchedule.concat([SymbolSchedule.silence(1.0, 1), SymbolSchedule.silence(1.0, 2)])


def test_schedule_is_read_only():
    sched = fsk_modulate("01", FskConfig(8500, 8750))
    with pytest.raises(ValueError):
        sched.freqs[0, 0] = 1.0
