"""Deterministic 256-bit chunk fingerprints.

A chunk's MFCC matrix is flattened row-major, projected through a fixed
seeded random matrix and binarised by sign. The projection seed, pooling
method and frame parameters are all committed inside Params, so a verifier
reproduces the exact same bits from the exact same samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import dsp, prng


class FingerprintError(ValueError):
    pass


_FIELDS = ("m", "n_mfcc", "n_mels", "projection_seed", "pooling", "chunk_samples", "n_fft", "hop", "win")


@dataclass(frozen=True)
class FingerprintSpec:
    """Committed fingerprint parameters (recorded in Params).

    The chunk length is committed alongside the rest: it fixes the frame
    count and with it the projection's input dimension.
    """

    m: int = 256
    n_mfcc: int = 13
    n_mels: int = 40
    projection_seed: int = 1122
    pooling: str = "flatten"
    chunk_samples: int = 32000
    n_fft: int = dsp.DEFAULT_N_FFT
    hop: int = dsp.DEFAULT_HOP
    win: int = dsp.DEFAULT_WIN

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in _FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "FingerprintSpec":
        return cls(**{k: d[k] for k in _FIELDS})

    @property
    def n_frames(self) -> int:
        return dsp.frame_count(self.chunk_samples, self.win, self.hop)


@dataclass(frozen=True)
class Fingerprint:
    """m-bit fingerprint serialised most-significant-bit-first."""

    bits: bytes

    def __post_init__(self) -> None:
        if len(self.bits) * 8 != 256 and len(self.bits) == 0:
            raise FingerprintError("empty fingerprint")

    @property
    def n_bits(self) -> int:
        return len(self.bits) * 8

    def hex(self) -> str:
        return self.bits.hex()


@lru_cache(maxsize=8)
def _projection(spec: FingerprintSpec) -> np.ndarray:
    dim = spec.n_frames * spec.n_mfcc
    flat = prng.standard_normals(spec.projection_seed, dim * spec.m)
    return flat.reshape(dim, spec.m)


def projection_matrix(spec: FingerprintSpec) -> np.ndarray:
    """The (frames * n_mfcc) x m projection; same seed gives identical entries."""
    return _projection(spec)


def compute_fingerprint(chunk_samples: np.ndarray, spec: FingerprintSpec) -> Fingerprint:
    """Fingerprint a fixed-length chunk: MFCC -> flatten -> project -> sign.

    Bit j is 1 iff the j-th projected value is >= 0 (ties map to 1).
    """
    x = np.asarray(chunk_samples, dtype=np.float64)
    if len(x) != spec.chunk_samples:
        raise FingerprintError(f"chunk has {len(x)} samples, spec commits to {spec.chunk_samples}")
    if spec.pooling != "flatten":
        raise FingerprintError(f"unsupported pooling {spec.pooling!r}")
    mfcc = dsp.mfcc_frames(
        x, n_mfcc=spec.n_mfcc, n_mels=spec.n_mels, n_fft=spec.n_fft, hop=spec.hop, win=spec.win
    )
    values = mfcc.reshape(-1) @ _projection(spec)
    bits = values >= 0.0
    return Fingerprint(bits=np.packbits(bits).tobytes())


def hamming(a: Fingerprint, b: Fingerprint) -> int:
    """Number of differing bits; fingerprints must be the same length."""
    if len(a.bits) != len(b.bits):
        raise FingerprintError("fingerprint length mismatch")
    return int.from_bytes(bytes(x ^ y for x, y in zip(a.bits, b.bits)), "big").bit_count()
