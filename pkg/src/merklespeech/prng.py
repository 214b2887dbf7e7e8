"""Deterministic keyed randomness used by committed parameters.

Everything that must be reproducible from a recorded seed (the fingerprint
projection matrix, the carrier-cell shuffle, the payload interleaver) is
derived from a 64-bit counter-based generator rather than a library RNG, so
the streams are stable across library versions and platforms.

Generator: output k = mix64(seed + (k + 1) * GOLDEN) where mix64 is the
SplitMix64 finalizer (xor-shift / multiply avalanche). Uniform doubles take
the top 53 bits, offset so the result lies in (0, 1]; normals come from the
Box-Muller transform on consecutive pairs. Independent streams for different
purposes are separated by hashing an ASCII domain tag with the seed.
"""

from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix64(x: np.ndarray) -> np.ndarray:
    z = x ^ (x >> np.uint64(30))
    z = z * _MIX1
    z = z ^ (z >> np.uint64(27))
    z = z * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_stream_seed(seed: int, domain: str) -> int:
    """Domain-separated 64-bit subseed: SHA-256(domain tag, seed) truncated."""
    raw = hashlib.sha256(domain.encode("ascii") + b"\x00" + int(seed).to_bytes(8, "big", signed=False)).digest()
    return int.from_bytes(raw[:8], "big")


def uniform64(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """`count` raw 64-bit outputs of the counter stream, starting at `offset`."""
    counters = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    return _mix64(np.uint64(seed % (1 << 64)) + counters * _GOLDEN)


def uniform_open01(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Uniform doubles in (0, 1]; safe as Box-Muller log input."""
    bits = uniform64(seed, count, offset)
    return ((bits >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53


def standard_normals(seed: int, count: int) -> np.ndarray:
    """i.i.d. standard normals via Box-Muller on consecutive uniform pairs."""
    pairs = (count + 1) // 2
    u = uniform_open01(seed, 2 * pairs)
    u1, u2 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:count]


def permutation(seed: int, n: int) -> np.ndarray:
    """Deterministic permutation of range(n): argsort of the keyed u64 stream."""
    return np.argsort(uniform64(seed, n), kind="stable")
