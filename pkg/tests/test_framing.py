import numpy as np
import pytest

from src.errors import CrcError, FrameLengthError
from src.framing import (
    CODEWORD_BITS,
    FRAME_BITS,
    PREAMBLE,
    as_bits,
    bits_to_int,
    crc8,
    crc8_bytes,
    crc8_words,
    decode_frame,
    encode_frame,
    encode_stream,
    int_to_bits,
    segment_payload,
)


def bitwise_crc8(value: int, width: int = 32) -> int:
    """Long division of value * x^8 by x^8 + x^2 + x + 1, one bit at a time."""
    reg = value << 8
    poly = 0x107
    for shift in range(width + 7, 7, -1):
        if reg & (1 << shift):
            reg ^= poly << (shift - 8)
    return reg & 0xFF


def test_crc_check_value():
    assert crc8_bytes(b"123456789") == 0xF4


def test_crc_zero_payload():
    assert crc8(int_to_bits(0, 32)) == 0x00


@pytest.mark.parametrize("value", [0xDEADBEEF, 0xFFFFFFFF, 0x00000001, 0x80000000, 0x12345678])
def test_crc_matches_bitwise_division(value):
    assert crc8(int_to_bits(value, 32)) == bitwise_crc8(value)


def test_crc_distinguishes_neighbours():
    assert crc8(int_to_bits(0xFFFFFFFF, 32)) != crc8(int_to_bits(0xFFFFFFFE, 32))


def test_crc_wrong_length():
    with pytest.raises(FrameLengthError):
        crc8("1010")


def test_as_bits_accepts_strings_and_rejects_garbage():
    np.testing.assert_array_equal(as_bits("10 1_0"), [1, 0, 1, 0])
    with pytest.raises(ValueError):
        as_bits("102")
    with pytest.raises(ValueError):
        as_bits([0, 2])


def test_int_bits_msb_first():
    np.testing.assert_array_equal(int_to_bits(0xA, 4), [1, 0, 1, 0])
    assert bits_to_int("10101010") == 0xAA
    with pytest.raises(ValueError):
        int_to_bits(16, 4)


def test_encode_zero_payload():
    frame = encode_frame(0)
    assert frame.size == FRAME_BITS
    np.testing.assert_array_equal(frame[:8], PREAMBLE)
    assert not frame[8:].any()


def test_wire_format_is_bytes_msb_first():
    frame = encode_frame(0xDEADBEEF)
    packed = np.packbits(frame).tobytes()
    assert packed[0] == 0xAA
    assert packed[1:5] == bytes.fromhex("DEADBEEF")
    assert packed[5] == bitwise_crc8(0xDEADBEEF)


BOUNDARY_PAYLOADS = [0x00000000, 0xFFFFFFFF, 0x80000000, 0x00000001]


def test_decode_round_trip(rng):
    values = np.concatenate(
        [np.array(BOUNDARY_PAYLOADS, dtype=np.uint64), rng.integers(0, 2**32, size=100_000, dtype=np.uint64)]
    )
    frames = encode_stream(values).reshape(-1, FRAME_BITS)
    assert (frames[:, :8] == PREAMBLE).all()
    decoded = [decode_frame(codeword) for codeword in frames[:, 8:]]
    assert decoded == values.tolist()


def test_crc8_words_matches_scalar_crc(rng):
    values = [*BOUNDARY_PAYLOADS, *rng.integers(0, 2**32, size=500, dtype=np.uint64).tolist()]
    assert crc8_words(values).tolist() == [bitwise_crc8(int(v)) for v in values]
    with pytest.raises(ValueError):
        crc8_words([1 << 32])


def test_every_single_bit_flip_is_detected(rng):
    for value in rng.integers(0, 2**32, size=1000, dtype=np.uint64):
        codeword = encode_frame(int(value))[8:]
        for pos in range(CODEWORD_BITS):
            bad = codeword.copy()
            bad[pos] ^= 1
            with pytest.raises(CrcError):
                decode_frame(bad)


def test_bursts_up_to_eight_bits_are_detected(rng):
    for value in rng.integers(0, 2**32, size=50, dtype=np.uint64):
        codeword = encode_frame(int(value))[8:]
        for length in range(1, 9):
            for start in range(CODEWORD_BITS - length + 1):
                pattern = rng.integers(0, 2, size=length).astype(np.uint8)
                pattern[0] = pattern[-1] = 1
                bad = codeword.copy()
                bad[start : start + length] ^= pattern
                with pytest.raises(CrcError):
                    decode_frame(bad)


def test_crc_error_carries_both_values():
    codeword = encode_frame(0x01020304)[8:]
    codeword[-1] ^= 1
    with pytest.raises(CrcError) as info:
        decode_frame(codeword)
    assert info.value.received == info.value.computed ^ 0x01


def test_decode_wrong_length():
    with pytest.raises(FrameLengthError):
        decode_frame(np.zeros(39, dtype=np.uint8))


def test_segment_payload_pads_last_word():
    assert segment_payload(b"\xde\xad\xbe\xef\x01") == [0xDEADBEEF, 0x01000000]
    assert len(segment_payload(bytes(8))) == 2
    with pytest.raises(FrameLengthError):
        segment_payload(b"")


def test_stream_is_back_to_back():
    stream = encode_stream([1, 2])
    assert stream.size == 2 * FRAME_BITS
    np.testing.assert_array_equal(stream[FRAME_BITS : FRAME_BITS + 8], PREAMBLE)
    with pytest.raises(FrameLengthError):
        encode_stream([])
