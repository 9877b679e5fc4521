"""Checksum tests against an independent reference.

The reference below accumulates byte pairs into a plain integer and
folds the carries at the end.  It is written on purpose in a different
style from the library implementation so the two can check each other.
"""

import random
import struct

import pytest

from netstack import errors, wire


def reference_checksum(data: bytes) -> int:
    if len(data) % 2:
        data = data + b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def test_empty_input_is_all_ones():
    assert wire.internet_checksum(b"") == 0xFFFF


def test_zero_word():
    assert wire.internet_checksum(b"\x00\x00") == 0xFFFF


def test_known_eight_byte_value():
    data = bytes([0x00, 0x01, 0xF2, 0x03, 0xF4, 0xF5, 0xF6, 0xF7])
    assert wire.internet_checksum(data) == 0x220D


def test_odd_length_padded_with_zero():
    assert wire.internet_checksum(b"\x12") == wire.internet_checksum(b"\x12\x00")


def test_matches_reference_on_random_buffers():
    rng = random.Random(7)
    for _ in range(2000):
        data = rng.randbytes(rng.randrange(0, 2001))
        assert wire.internet_checksum(data) == reference_checksum(data)


def test_insert_then_verify_yields_zero():
    rng = random.Random(8)
    for _ in range(200):
        buf = bytearray(rng.randbytes(rng.randrange(2, 64) * 2))
        buf[2:4] = b"\x00\x00"
        buf[2:4] = struct.pack("!H", wire.internet_checksum(bytes(buf)))
        assert wire.internet_checksum(bytes(buf)) == 0


def test_empty_udp_pseudo_header():
    zero = bytes(4)
    assert wire.transport_checksum(zero, zero, 17, b"") == 0xFFEE


def test_transport_matches_manual_pseudo_header():
    rng = random.Random(9)
    for _ in range(500):
        src = rng.randbytes(4)
        dst = rng.randbytes(4)
        proto = rng.choice([6, 17])
        seg = rng.randbytes(rng.randrange(0, 100))
        pseudo = src + dst + bytes([0, proto]) + struct.pack("!H", len(seg))
        assert wire.transport_checksum(src, dst, proto, seg) == reference_checksum(pseudo + seg)


def test_transport_rejects_oversize_segment():
    with pytest.raises(errors.LengthError):
        wire.transport_checksum(bytes(4), bytes(4), 6, bytes(65536))


def test_single_bit_flip_breaks_verification():
    # A UDP-shaped segment with its checksum filled in verifies to zero;
    # flipping any one payload bit must break that.
    src, dst = b"\x0a\x00\x00\x01", b"\x0a\x00\x00\x02"
    payload = bytes(range(16))
    head = struct.pack("!HHHH", 3200, 7, 8 + len(payload), 0)
    c = wire.transport_checksum(src, dst, 17, head + payload)
    seg = bytearray(head + payload)
    seg[6:8] = struct.pack("!H", c)
    assert wire.transport_checksum(src, dst, 17, bytes(seg)) == 0
    for byte_i in range(8, len(seg)):
        for bit in range(8):
            seg[byte_i] ^= 1 << bit
            assert wire.transport_checksum(src, dst, 17, bytes(seg)) != 0
            seg[byte_i] ^= 1 << bit
