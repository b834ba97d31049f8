from dataclasses import dataclass
import os
from dotenv import load_dotenv

load_dotenv()


def _float(name: str, default: str) -> float:
    return float(os.getenv(name, default))


@dataclass(frozen=True)
class Settings:
    # Audio / receiver
    sample_rate: int = int(os.getenv("MODEM_SAMPLE_RATE", "44100"))
    fft_size: int = int(os.getenv("MODEM_FFT_SIZE", "4096"))
    hop: int = int(os.getenv("MODEM_HOP", "1024"))
    smoothing_window: int = int(os.getenv("MODEM_SMOOTHING", "4"))
    lost_signal_timeout: float = _float("MODEM_LOST_TIMEOUT", "3.0")
    detection_margin_db: float = _float("MODEM_DETECTION_MARGIN_DB", "6.0")
    band_low: float = _float("MODEM_BAND_LOW", "2000")
    band_high: float = _float("MODEM_BAND_HIGH", "24000")

    # Transmitter
    max_carrier_hz: float = _float("MODEM_MAX_CARRIER_HZ", "50000")
    symbol_time_ms: float = _float("MODEM_SYMBOL_TIME_MS", "20")
    f0: float = _float("MODEM_F0", "8500")
    f1: float = _float("MODEM_F1", "8750")
    cores: int = int(os.getenv("MODEM_CORES", "4"))

    # Simulator
    amplitude_per_core: float = _float("MODEM_AMPLITUDE_PER_CORE", "0.05")
    snr_db: float = _float("MODEM_SNR_DB", "30")
    seed: int = int(os.getenv("MODEM_SEED", "42"))

    output_dir: str = os.getenv("MODEM_OUTPUT_DIR", "outputs")
    log_level: str = os.getenv("MODEM_LOG_LEVEL", "INFO")

    @property
    def bitrate(self) -> float:
        return 1000.0 / self.symbol_time_ms

    @property
    def band(self) -> tuple[float, float]:
        return (self.band_low, self.band_high)
