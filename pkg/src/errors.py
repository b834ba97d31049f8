from __future__ import annotations

from typing import Sequence


class ModemError(Exception):
    """Base class for every error raised by the modem toolkit."""


# Validation errors (bad input, bad configuration). They are ValueErrors too.

class ConfigError(ModemError, ValueError):
    pass


class PlanError(ModemError, ValueError):
    pass


class FrameLengthError(ModemError, ValueError):
    pass


class CrcError(ModemError, ValueError):
    def __init__(self, received: int, computed: int) -> None:
        super().__init__(f"CRC mismatch: received 0x{received:02X}, computed 0x{computed:02X}")
        self.received = received
        self.computed = computed


class NyquistError(ModemError, ValueError):
    pass


class SampleRateMismatch(ModemError, ValueError):
    pass


class BandError(ModemError, ValueError):
    pass


class WavFormatError(ModemError, ValueError):
    pass


class PlaybackRateError(ModemError, ValueError):
    pass


# Runtime errors raised while driving real cores.

class CoreBindingError(ModemError, RuntimeError):
    def __init__(self, failures: dict[int, str] | Sequence[int], message: str | None = None) -> None:
        if not isinstance(failures, dict):
            failures = {core: "unavailable" for core in failures}
        detail = ", ".join(f"core {c}: {why}" for c, why in sorted(failures.items()))
        super().__init__(message or f"could not bind workers ({detail})")
        self.failures = failures


class ClockError(ModemError, RuntimeError):
    pass


class SchedulerBusyError(ModemError, RuntimeError):
    pass
