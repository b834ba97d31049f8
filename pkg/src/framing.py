from __future__ import annotations

from typing import Iterable, Sequence, Union

import numpy as np

from src.errors import CrcError, FrameLengthError

BitsLike = Union[str, Sequence[int], np.ndarray]

PREAMBLE = np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=np.uint8)
PAYLOAD_BITS = 32
CRC_BITS = 8
FRAME_BITS = len(PREAMBLE) + PAYLOAD_BITS + CRC_BITS
CODEWORD_BITS = PAYLOAD_BITS + CRC_BITS

CRC8_POLY = 0x07


def _crc8_table(poly: int) -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
        table.append(crc)
    return table


_TABLE = _crc8_table(CRC8_POLY)
_TABLE_ARRAY = np.array(_TABLE, dtype=np.uint8)


def as_bits(bits: BitsLike) -> np.ndarray:
    """Normalize '0101', [0, 1, ...] or an array into a uint8 0/1 array."""
    if isinstance(bits, str):
        cleaned = bits.replace(" ", "").replace("_", "")
        if set(cleaned) - {"0", "1"}:
            raise ValueError(f"not a bit string: {bits!r}")
        return np.frombuffer(cleaned.encode("ascii"), dtype=np.uint8) - ord("0")
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    if arr.size and arr.max() > 1:
        raise ValueError("bit values must be 0 or 1")
    return arr


def bits_to_int(bits: BitsLike) -> int:
    value = 0
    for b in as_bits(bits):
        value = (value << 1) | int(b)
    return value


def int_to_bits(value: int, width: int) -> np.ndarray:
    if value < 0 or value >= 1 << width:
        raise ValueError(f"{value:#x} does not fit in {width} bits")
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def crc8_bytes(data: bytes | Iterable[int]) -> int:
    """CRC-8, poly 0x07, init 0x00, no reflection, no final XOR."""
    crc = 0
    for byte in data:
        crc = _TABLE[crc ^ byte]
    return crc


def crc8(bits: BitsLike) -> int:
    """CRC over a 32-bit payload, MSB first. Returns the CRC as an int (0..255)."""
    arr = as_bits(bits)
    if arr.size != PAYLOAD_BITS:
        raise FrameLengthError(f"payload must be {PAYLOAD_BITS} bits, got {arr.size}")
    return crc8_bytes(np.packbits(arr).tobytes())


def encode_frame(payload: BitsLike | int) -> np.ndarray:
    """preamble ∥ payload ∥ crc8(payload), 48 bits MSB first."""
    if isinstance(payload, (int, np.integer)):
        bits = int_to_bits(int(payload), PAYLOAD_BITS)
    else:
        bits = as_bits(payload)
    if bits.size != PAYLOAD_BITS:
        raise FrameLengthError(f"payload must be {PAYLOAD_BITS} bits, got {bits.size}")
    return np.concatenate([PREAMBLE, bits, int_to_bits(crc8(bits), CRC_BITS)])


def decode_frame(bits: BitsLike) -> int:
    """Check the 40 bits that follow a preamble and return the payload.

    Raises CrcError when the received CRC does not match the payload.
    """
    arr = as_bits(bits)
    if arr.size != CODEWORD_BITS:
        raise FrameLengthError(f"expected {CODEWORD_BITS} bits after the preamble, got {arr.size}")
    payload = arr[:PAYLOAD_BITS]
    received = bits_to_int(arr[PAYLOAD_BITS:])
    computed = crc8(payload)
    if received != computed:
        raise CrcError(received, computed)
    return bits_to_int(payload)


def segment_payload(data: bytes) -> list[int]:
    """Split bytes into 32-bit payloads; the last one is zero padded."""
    if not data:
        raise FrameLengthError("nothing to send")
    padded = data + bytes(-len(data) % 4)
    return [int.from_bytes(padded[i : i + 4], "big") for i in range(0, len(padded), 4)]


def _words(payloads: Sequence[int] | np.ndarray) -> np.ndarray:
    w = np.asarray(payloads, dtype=np.int64).ravel()
    if w.size and (w.min() < 0 or w.max() >= 1 << PAYLOAD_BITS):
        raise ValueError(f"payloads must fit in {PAYLOAD_BITS} bits")
    return w.astype(">u4").view(np.uint8).reshape(-1, 4)


def crc8_words(payloads: Sequence[int] | np.ndarray) -> np.ndarray:
    """crc8 of many 32-bit payloads at once, as a uint8 array."""
    data = _words(payloads)
    crc = np.zeros(data.shape[0], dtype=np.uint8)
    for k in range(4):
        crc = _TABLE_ARRAY[crc ^ data[:, k]]
    return crc


def encode_stream(payloads: Sequence[int] | np.ndarray) -> np.ndarray:
    """Back-to-back frames with no inter-frame gap."""
    data = _words(payloads)
    if data.shape[0] == 0:
        raise FrameLengthError("no payloads to frame")
    crc = crc8_words(payloads)
    frames = np.hstack(
        [
            np.tile(PREAMBLE, (data.shape[0], 1)),
            np.unpackbits(data, axis=1),
            np.unpackbits(crc[:, None], axis=1),
        ]
    )
    return frames.ravel()
