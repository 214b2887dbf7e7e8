"""Bit-exact payload packing, CRC screening, RS(40,32) coding, interleaving.

Packed layout (32 bytes, big-endian):

    byte  0      version << 4 (low nibble zero)
    bytes 1-16   cid, 128-bit random per-asset identifier
    bytes 17-19  chunk index, 24-bit
    bytes 20-27  rid, 64-bit repository lookup hint
    bytes 28-29  kid, 16-bit issuer key identifier
    bytes 30-31  CRC-16/CCITT-FALSE over bytes 0-29

The CRC is a deliberate hardening addition: a random word that slips past
Reed-Solomon decoding is still rejected with probability ~2^-16.

ECC is a systematic RS(40,32) over GF(2^8) with primitive polynomial 0x11D
and first consecutive root alpha^0; it corrects up to 4 byte errors. The
320 codeword bits are spread by a fixed permutation derived from the
watermark key (never from the CID, which the decoder does not know yet).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import prng

PACKED_LEN = 32
CODEWORD_LEN = 40
PARITY_LEN = 8
CODEWORD_BITS = CODEWORD_LEN * 8


class PayloadError(ValueError):
    """Base class for payload codec failures."""


class PayloadIntegrityError(PayloadError):
    """CRC mismatch; surfaces as no_payload upstream."""


class UnsupportedVersionError(PayloadError):
    pass


class RSDecodeError(PayloadError):
    """Uncorrectable Reed-Solomon word; surfaces as no_payload upstream."""


@dataclass(frozen=True)
class PayloadFields:
    """The in-band message: who issued what chunk, and where to look it up."""

    cid: bytes
    index: int
    rid: bytes
    kid: int
    version: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.version < 16:
            raise PayloadError("version out of range")
        if len(self.cid) != 16:
            raise PayloadError("cid must be 16 bytes")
        if not 0 <= self.index < 1 << 24:
            raise PayloadError("index out of range")
        if len(self.rid) != 8:
            raise PayloadError("rid must be 8 bytes")
        if not 0 <= self.kid < 1 << 16:
            raise PayloadError("kid out of range")


# ---------------------------------------------------------------------------
# CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, xorout 0)
# ---------------------------------------------------------------------------


def _build_crc_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
        table.append(crc)
    return table


_CRC_TABLE = _build_crc_table()


def crc16(data: bytes) -> int:
    crc = 0xFFFF
    for b in data:
        crc = ((crc << 8) & 0xFFFF) ^ _CRC_TABLE[(crc >> 8) ^ b]
    return crc


def pack(fields: PayloadFields) -> bytes:
    """Serialise fields to the 32-byte layout, appending the CRC."""
    out = bytearray(PACKED_LEN)
    out[0] = (fields.version << 4) & 0xF0
    out[1:17] = fields.cid
    out[17:20] = fields.index.to_bytes(3, "big")
    out[20:28] = fields.rid
    out[28:30] = fields.kid.to_bytes(2, "big")
    out[30:32] = crc16(bytes(out[:30])).to_bytes(2, "big")
    return bytes(out)


def unpack(packed: bytes) -> PayloadFields:
    """Inverse of pack; verifies the CRC and the version nibble."""
    if len(packed) != PACKED_LEN:
        raise PayloadError("packed payload must be 32 bytes")
    if crc16(packed[:30]) != int.from_bytes(packed[30:32], "big"):
        raise PayloadIntegrityError("payload CRC mismatch")
    version = packed[0] >> 4
    if version != 1:
        raise UnsupportedVersionError(f"unsupported payload version {version}")
    return PayloadFields(
        version=version,
        cid=packed[1:17],
        index=int.from_bytes(packed[17:20], "big"),
        rid=packed[20:28],
        kid=int.from_bytes(packed[28:30], "big"),
    )


# ---------------------------------------------------------------------------
# GF(2^8) arithmetic, tables for primitive polynomial 0x11D
# ---------------------------------------------------------------------------


def _build_gf_tables() -> tuple[list[int], list[int]]:
    exp = [0] * 512
    log = [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= 0x11D
    for i in range(255, 512):
        exp[i] = exp[i - 255]
    return exp, log


GF_EXP, GF_LOG = _build_gf_tables()
_GF_EXP_NP = np.array(GF_EXP, dtype=np.uint8)
_GF_LOG_NP = np.array(GF_LOG, dtype=np.int64)


def _gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return GF_EXP[GF_LOG[a] + GF_LOG[b]]


def _gf_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("GF(256) division by zero")
    if a == 0:
        return 0
    return GF_EXP[(GF_LOG[a] - GF_LOG[b]) % 255]


def _gf_poly_mul(p: list[int], q: list[int]) -> list[int]:
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a == 0:
            continue
        la = GF_LOG[a]
        for j, b in enumerate(q):
            if b:
                out[i + j] ^= GF_EXP[la + GF_LOG[b]]
    return out


@lru_cache(maxsize=None)
def _generator_poly(n_parity: int) -> tuple[int, ...]:
    # roots alpha^0 .. alpha^(n_parity-1); coefficients highest power first
    g = [1]
    for i in range(n_parity):
        g = _gf_poly_mul(g, [1, GF_EXP[i]])
    return tuple(g)


def rs_encode(message: bytes) -> bytes:
    """Systematic RS(40,32) codeword: message followed by 8 parity bytes."""
    if len(message) != PACKED_LEN:
        raise PayloadError("RS message must be 32 bytes")
    gen = _generator_poly(PARITY_LEN)
    rem = [0] * PARITY_LEN
    for byte in message:
        factor = byte ^ rem[0]
        rem = rem[1:] + [0]
        if factor:
            lf = GF_LOG[factor]
            for i in range(PARITY_LEN):
                g = gen[i + 1]
                if g:
                    rem[i] ^= GF_EXP[lf + GF_LOG[g]]
    return message + bytes(rem)


def _syndromes(received: bytes) -> list[int]:
    # S_j = r(alpha^j); coefficient of x^(n-1) is byte 0
    syn = []
    for j in range(PARITY_LEN):
        s = 0
        for byte in received:
            s = _gf_mul(s, GF_EXP[j]) ^ byte
        syn.append(s)
    return syn


def _berlekamp_massey(syn: list[int]) -> list[int]:
    # error locator Lambda(x), lowest power first
    c = [1] + [0] * PARITY_LEN
    b = [1] + [0] * PARITY_LEN
    L = 0
    m = 1
    bb = 1
    for k in range(PARITY_LEN):
        d = syn[k]
        for i in range(1, L + 1):
            if c[i] and syn[k - i]:
                d ^= GF_EXP[GF_LOG[c[i]] + GF_LOG[syn[k - i]]]
        if d == 0:
            m += 1
        elif 2 * L <= k:
            t = c[:]
            coef = _gf_div(d, bb)
            lc = GF_LOG[coef]
            for i in range(PARITY_LEN + 1 - m):
                if b[i]:
                    c[i + m] ^= GF_EXP[lc + GF_LOG[b[i]]]
            L = k + 1 - L
            b = t
            bb = d
            m = 1
        else:
            coef = _gf_div(d, bb)
            lc = GF_LOG[coef]
            for i in range(PARITY_LEN + 1 - m):
                if b[i]:
                    c[i + m] ^= GF_EXP[lc + GF_LOG[b[i]]]
            m += 1
    return c[: L + 1]


def rs_decode(received: bytes) -> bytes:
    """Correct up to 4 byte errors and return the 32-byte message.

    Raises RSDecodeError when the word is uncorrectable. A residual
    miscorrection (possible at exactly the decoding radius) is caught by the
    CRC stage above this one.
    """
    if len(received) != CODEWORD_LEN:
        raise PayloadError("RS codeword must be 40 bytes")
    syn = _syndromes(received)
    if not any(syn):
        return received[:PACKED_LEN]
    locator = _berlekamp_massey(syn)
    n_errors = len(locator) - 1
    if n_errors == 0 or n_errors > PARITY_LEN // 2:
        raise RSDecodeError("error locator degree out of range")

    # Chien search over the 40 used positions: position p (byte index) has
    # locator root X_p^-1 where X_p = alpha^(n-1-p)
    positions = []
    for p in range(CODEWORD_LEN):
        power = CODEWORD_LEN - 1 - p
        inv = GF_EXP[(255 - power) % 255]
        acc = 0
        xl = GF_LOG[inv] if inv else 0
        xx = 1
        for coef in locator:
            if coef:
                acc ^= _gf_mul(coef, xx)
            xx = _gf_mul(xx, inv)
        if acc == 0:
            positions.append(p)
    if len(positions) != n_errors:
        raise RSDecodeError("error locator roots do not match degree")

    # Forney: Omega(x) = S(x) * Lambda(x) mod x^(2t)
    omega = [0] * PARITY_LEN
    for i in range(len(locator)):
        if not locator[i]:
            continue
        li = GF_LOG[locator[i]]
        for j in range(PARITY_LEN - i):
            if syn[j]:
                omega[i + j] ^= GF_EXP[li + GF_LOG[syn[j]]]

    out = bytearray(received)
    for p in positions:
        power = CODEWORD_LEN - 1 - p
        x_inv = GF_EXP[(255 - power) % 255]
        num = 0
        xx = 1
        for coef in omega:
            if coef:
                num ^= _gf_mul(coef, xx)
            xx = _gf_mul(xx, x_inv)
        den = 0
        xx = 1
        x_inv2 = _gf_mul(x_inv, x_inv)
        for i in range(1, len(locator), 2):
            if locator[i]:
                den ^= _gf_mul(locator[i], xx)
            xx = _gf_mul(xx, x_inv2)
        if den == 0:
            raise RSDecodeError("Forney denominator vanished")
        magnitude = _gf_mul(GF_EXP[power % 255], _gf_div(num, den))
        out[p] ^= magnitude

    if any(_syndromes(bytes(out))):
        raise RSDecodeError("correction did not produce a codeword")
    return bytes(out[:PACKED_LEN])


def syndromes_batch(words: np.ndarray) -> np.ndarray:
    """Syndromes for a batch of 40-byte words, shape (n, 8); vectorised.

    Used by the mass false-accept evaluation; a word with any nonzero
    syndrome must still go through the scalar decoder to settle
    correctability.
    """
    w = np.asarray(words, dtype=np.uint8)
    if w.ndim != 2 or w.shape[1] != CODEWORD_LEN:
        raise PayloadError("batch must have shape (n, 40)")
    nz = w != 0
    logs = _GF_LOG_NP[w]
    powers = np.arange(CODEWORD_LEN - 1, -1, -1, dtype=np.int64)
    out = np.zeros((w.shape[0], PARITY_LEN), dtype=np.uint8)
    for j in range(PARITY_LEN):
        shift = (j * powers) % 255
        terms = np.where(nz, _GF_EXP_NP[(logs + shift[None, :]) % 255], 0)
        out[:, j] = np.bitwise_xor.reduce(terms, axis=1)
    return out


# ---------------------------------------------------------------------------
# Keyed bit interleaver
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def interleaver_permutation(key_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(forward, inverse) permutations of the 320 codeword bit positions."""
    sub = prng.derive_stream_seed(key_seed, "msv1/interleave")
    fwd = prng.permutation(sub, CODEWORD_BITS)
    inv = np.empty_like(fwd)
    inv[fwd] = np.arange(CODEWORD_BITS)
    return fwd, inv


def interleave(bits: np.ndarray, key_seed: int) -> np.ndarray:
    """Permute 320 codeword bits into channel order."""
    b = np.asarray(bits, dtype=np.uint8)
    if b.shape != (CODEWORD_BITS,):
        raise PayloadError("interleave expects exactly 320 bits")
    fwd, _ = interleaver_permutation(key_seed)
    out = np.empty_like(b)
    out[fwd] = b
    return out


def deinterleave(bits: np.ndarray, key_seed: int) -> np.ndarray:
    """Inverse of interleave."""
    b = np.asarray(bits, dtype=np.uint8)
    if b.shape != (CODEWORD_BITS,):
        raise PayloadError("deinterleave expects exactly 320 bits")
    fwd, _ = interleaver_permutation(key_seed)
    return b[fwd]


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()
