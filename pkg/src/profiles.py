from __future__ import annotations

import json
from pathlib import Path
from typing import Union

from src.channel_sim import Passband, PsuModel, Waveshape
from src.errors import ConfigError

# Audible bands and SNR grades measured on six desk machines; the gains are
# model parameters, not measurements.
PRESETS: dict[str, PsuModel] = {
    "FULL": PsuModel(),
    "PC-1": PsuModel((Passband(2300, 22000),), name="PC-1", snr_grade=(30, 35)),
    "PC-2": PsuModel((Passband(2200, 22000),), name="PC-2", snr_grade=(30, 35)),
    "PC-3": PsuModel(
        (Passband(5491, 6223), Passband(8300, 9000)),
        amplitude_per_core=0.02,
        name="PC-3",
        snr_grade=(20, 30),
    ),
    "SERVER": PsuModel((Passband(8000, 17000),), amplitude_per_core=0.015, name="Server", snr_grade=(10, 20)),
    "NUK": PsuModel((Passband(1800, 24000),), amplitude_per_core=0.06, name="NUK", snr_grade=(30, 40)),
    "IOT": PsuModel((Passband(3100, 24000),), amplitude_per_core=0.03, name="IOT", snr_grade=(20, 30)),
}


def preset_names() -> list[str]:
    return [m.name for m in PRESETS.values()]


def get_profile(name: str) -> PsuModel:
    key = name.strip().upper()
    if key not in PRESETS:
        raise ConfigError(f"unknown PSU profile {name!r}; known: {', '.join(preset_names())}")
    return PRESETS[key]


def model_from_dict(data: dict) -> PsuModel:
    try:
        bands = tuple(
            Passband(float(b["low"]), float(b["high"]), float(b.get("gain_db", 0.0)))
            for b in data["band_mask"]
        )
        grade = data.get("snr_grade")
        return PsuModel(
            band_mask=bands,
            amplitude_per_core=float(data.get("amplitude_per_core", 0.05)),
            waveshape=Waveshape(str(data.get("waveshape", "SQUARE")).upper()),
            stop_gain_db=float(data.get("stop_gain_db", -60.0)),
            max_harmonic=int(data.get("max_harmonic", 9)),
            name=str(data.get("name", "custom")),
            snr_grade=tuple(grade) if grade else None,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad PSU profile: {exc}") from exc


def model_to_dict(model: PsuModel) -> dict:
    return {
        "name": model.name,
        "band_mask": [{"low": b.low, "high": b.high, "gain_db": b.gain_db} for b in model.band_mask],
        "amplitude_per_core": model.amplitude_per_core,
        "waveshape": model.waveshape.value,
        "stop_gain_db": model.stop_gain_db,
        "max_harmonic": model.max_harmonic,
        "snr_grade": list(model.snr_grade) if model.snr_grade else None,
    }


def load_profile(ref: Union[str, Path]) -> PsuModel:
    """Preset name, or path to a JSON file with the model fields."""
    path = Path(ref)
    if path.suffix.lower() == ".json" or path.is_file():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read profile {path}: {exc}") from exc
        return model_from_dict(data)
    return get_profile(str(ref))
