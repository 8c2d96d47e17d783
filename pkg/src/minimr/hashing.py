"""Key hashing and the two hash-space partitions.

Keys are hashed with 64-bit FNV-1a followed by the murmur3 ``fmix64``
finalizer, so low and high bits both avalanche.  Segments are chosen by
the top bits of the hash, nodes by the hash modulo the cluster size, and
probe positions by the bottom bits.
"""
from __future__ import annotations

from .errors import ConfigError

MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & MASK64
    return h


def fmix64(h: int) -> int:
    h ^= h >> 33
    h = (h * 0xFF51AFD7ED558CCD) & MASK64
    h ^= h >> 33
    h = (h * 0xC4CEB9FE1A85EC53) & MASK64
    h ^= h >> 33
    return h


def hash_key(key: bytes) -> int:
    return fmix64(fnv1a64(key))


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def segment_bits(num_segments: int) -> int:
    if not is_power_of_two(num_segments):
        raise ConfigError(f"segment count must be a power of two, got {num_segments}")
    return num_segments.bit_length() - 1


def segment_of(h: int, num_segments: int) -> int:
    """Index of the contiguous hash range holding ``h``: its top log2(S) bits."""
    bits = segment_bits(num_segments)
    return h >> (64 - bits) if bits else 0


def segment_range(index: int, num_segments: int) -> tuple[int, int]:
    """Half-open ``[lo, hi)`` hash range owned by segment ``index``."""
    width = (1 << 64) // num_segments
    return index * width, (index + 1) * width


def owner(h: int, num_nodes: int) -> int:
    if num_nodes < 1:
        raise ConfigError("cluster size must be >= 1")
    return h % num_nodes


def as_key(key) -> bytes:
    if isinstance(key, str):
        return key.encode("utf-8")
    return bytes(key)
