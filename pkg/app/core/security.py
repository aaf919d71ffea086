"""
消息认证码原语

Wegman-Carter 风格：一次性密钥段拆为 (r, s)，对消息做模 2^127-1 的多项式求值，
再加上 s 并截断到标签长度。密钥段只用一次，由密钥池顺序分配。
"""
import hmac
from typing import Tuple

import numpy as np

P = (1 << 127) - 1
BLOCK_BYTES = 15


def bits_to_int(bits: np.ndarray) -> int:
    if bits.size == 0:
        return 0
    padded = np.packbits(bits.astype(np.uint8))
    value = int.from_bytes(padded.tobytes(), "big")
    # packbits 在末尾补零，需要右移掉
    return value >> (padded.size * 8 - bits.size)


def split_key(segment: np.ndarray) -> Tuple[int, int]:
    half = segment.size // 2
    r = bits_to_int(segment[:half]) % P
    s = bits_to_int(segment[half:])
    return (r or 1), s


def poly_digest(message: bytes, r: int, s: int, tag_bits: int) -> int:
    acc = 0
    for offset in range(0, len(message), BLOCK_BYTES):
        block = message[offset:offset + BLOCK_BYTES]
        n = int.from_bytes(block + b"\x01", "little")
        acc = ((acc + n) * r) % P
    return (acc + s) % (1 << tag_bits)


def compute_tag(segment: np.ndarray, message: bytes, tag_bits: int) -> str:
    r, s = split_key(segment)
    width = (tag_bits + 3) // 4
    return format(poly_digest(message, r, s, tag_bits), f"0{width}x")


def tags_equal(expected: str, received: str) -> bool:
    return hmac.compare_digest(expected.encode("ascii"), received.encode("ascii"))


def key_fingerprint(bits: np.ndarray, r: int, s: int, tag_bits: int) -> int:
    """对一串比特做同样的多项式摘要，用于纠错后的一致性验证"""
    return poly_digest(np.packbits(bits.astype(np.uint8)).tobytes() + bits.size.to_bytes(8, "big"), r or 1, s, tag_bits)
