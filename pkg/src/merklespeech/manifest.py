"""Committed parameters, canonical serialisation, issuer keys, manifests.

Every parameter that affects enrollment or verification lives in Params and
is bound into params_hash = SHA-256(canonical JSON). The canonical form
sorts keys at every level, strips insignificant whitespace and uses the
shortest round-trip decimal for numbers, so structurally equal parameter
sets always hash identically.

The issuer signature covers root || cid || params_hash || canonical
issuer_meta under Ed25519. Verifying keys are resolved from a pinned trust
store: one `issuer_id kid pk_hex` record per line.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from . import __version__
from .fingerprint import FingerprintSpec
from .watermark import QimSpec


class ManifestError(ValueError):
    pass


class KeyUnresolvedError(ManifestError):
    """No trust-store entry matches (issuer_id, kid)."""


@dataclass(frozen=True)
class Params:
    """All committed enrollment parameters; hashed into every leaf."""

    chunk_seconds: float = 2.0
    stride_seconds: float = 2.0
    sample_rate: int = 16000
    fingerprint_spec: FingerprintSpec = field(default_factory=FingerprintSpec)
    qim_spec: QimSpec = field(default_factory=QimSpec)
    ecc: str = "RS(40,32)/0x11D/fcr0"
    cid_bits: int = 128
    kid: int = 1
    payload_version: int = 1
    merkle_rule: str = "sha256/leaf00-node01/dup-last"
    toolkit_version: str = __version__

    def to_dict(self) -> dict:
        return {
            "L": self.chunk_seconds,
            "S": self.stride_seconds,
            "sample_rate": self.sample_rate,
            "fingerprint_spec": self.fingerprint_spec.to_dict(),
            "qim_spec": self.qim_spec.to_dict(),
            "ecc": self.ecc,
            "cid_bits": self.cid_bits,
            "kid": self.kid,
            "payload_version": self.payload_version,
            "merkle_rule": self.merkle_rule,
            "toolkit_version": self.toolkit_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Params":
        return cls(
            chunk_seconds=d["L"],
            stride_seconds=d["S"],
            sample_rate=d["sample_rate"],
            fingerprint_spec=FingerprintSpec.from_dict(d["fingerprint_spec"]),
            qim_spec=QimSpec.from_dict(d["qim_spec"]),
            ecc=d["ecc"],
            cid_bits=d["cid_bits"],
            kid=d["kid"],
            payload_version=d["payload_version"],
            merkle_rule=d["merkle_rule"],
            toolkit_version=d["toolkit_version"],
        )

    def with_alpha(self, alpha: float) -> "Params":
        return replace(self, qim_spec=QimSpec(**{**self.qim_spec.to_dict(), "alpha": alpha}))

    @property
    def chunk_samples(self) -> int:
        return round(self.chunk_seconds * self.sample_rate)


def _check_finite(value, path="$"):
    if isinstance(value, float) and not math.isfinite(value):
        raise ManifestError(f"non-finite number at {path}")
    if isinstance(value, dict):
        for k, v in value.items():
            _check_finite(v, f"{path}.{k}")
    elif isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            _check_finite(v, f"{path}[{i}]")


def canonicalize(obj) -> bytes:
    """Canonical JSON bytes: sorted keys, no whitespace, shortest numbers."""
    if isinstance(obj, Params):
        obj = obj.to_dict()
    _check_finite(obj)
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False).encode("utf-8")


def params_hash(params: Params | dict) -> bytes:
    return hashlib.sha256(canonicalize(params)).digest()


# ---------------------------------------------------------------------------
# Issuer keys and trust store
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IssuerMeta:
    issuer_id: str
    kid: int

    def to_dict(self) -> dict:
        return {"issuer_id": self.issuer_id, "kid": self.kid}

    @classmethod
    def from_dict(cls, d: dict) -> "IssuerMeta":
        return cls(issuer_id=d["issuer_id"], kid=int(d["kid"]))


class IssuerKeypair:
    """Ed25519 keypair; serialised as the 32-byte private seed in hex."""

    def __init__(self, private: Ed25519PrivateKey, meta: IssuerMeta):
        self._private = private
        self.meta = meta

    @classmethod
    def generate(cls, issuer_id: str, kid: int) -> "IssuerKeypair":
        return cls(Ed25519PrivateKey.generate(), IssuerMeta(issuer_id, kid))

    @classmethod
    def from_seed(cls, seed: bytes, issuer_id: str, kid: int) -> "IssuerKeypair":
        if len(seed) != 32:
            raise ManifestError("Ed25519 seed must be 32 bytes")
        return cls(Ed25519PrivateKey.from_private_bytes(seed), IssuerMeta(issuer_id, kid))

    def seed_bytes(self) -> bytes:
        from cryptography.hazmat.primitives import serialization

        return self._private.private_bytes(
            serialization.Encoding.Raw,
            serialization.PrivateFormat.Raw,
            serialization.NoEncryption(),
        )

    def public_bytes(self) -> bytes:
        from cryptography.hazmat.primitives import serialization

        return self._private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


def verify_signature(pk_bytes: bytes, signature: bytes, message: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(pk_bytes).verify(signature, message)
        return True
    except (InvalidSignature, ValueError):
        return False


class TrustStore:
    """Pinned issuer keys: (issuer_id, kid) -> Ed25519 public key."""

    def __init__(self, entries: dict[tuple[str, int], bytes] | None = None):
        self._entries = dict(entries or {})

    def add(self, issuer_id: str, kid: int, pk: bytes) -> None:
        self._entries[(issuer_id, kid)] = pk

    def resolve(self, issuer_meta: IssuerMeta, kid: int) -> bytes:
        pk = self._entries.get((issuer_meta.issuer_id, kid))
        if pk is None:
            raise KeyUnresolvedError(f"no pinned key for ({issuer_meta.issuer_id!r}, kid={kid})")
        return pk

    @classmethod
    def load(cls, path) -> "TrustStore":
        store = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise ManifestError(f"{path}:{line_no}: expected `issuer_id kid pk_hex`")
                store.add(parts[0], int(parts[1]), bytes.fromhex(parts[2]))
        return store

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for (issuer_id, kid), pk in sorted(self._entries.items()):
                fh.write(f"{issuer_id} {kid} {pk.hex()}\n")


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def signed_message(root: bytes, cid: bytes, ph: bytes, issuer_meta: IssuerMeta) -> bytes:
    """The byte string the issuer signs: R || cid || params_hash || meta."""
    if len(root) != 32 or len(cid) != 16 or len(ph) != 32:
        raise ManifestError("bad field length in signed message")
    return root + cid + ph + canonicalize(issuer_meta.to_dict())


def sign_manifest(keypair: IssuerKeypair, root: bytes, cid: bytes, ph: bytes) -> bytes:
    return keypair.sign(signed_message(root, cid, ph, keypair.meta))


@dataclass(frozen=True)
class Manifest:
    """Repository record enabling third-party verification of one asset."""

    cid: bytes
    root: bytes
    sigma: bytes
    params: Params
    params_hash: bytes
    issuer_meta: IssuerMeta
    rid_alias: bytes

    def to_dict(self) -> dict:
        return {
            "cid": self.cid.hex(),
            "root": self.root.hex(),
            "sigma": self.sigma.hex(),
            "params": self.params.to_dict(),
            "params_hash": self.params_hash.hex(),
            "issuer_meta": self.issuer_meta.to_dict(),
            "rid_alias": self.rid_alias.hex(),
        }

    def to_json(self) -> bytes:
        return canonicalize(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Manifest":
        return cls(
            cid=bytes.fromhex(d["cid"]),
            root=bytes.fromhex(d["root"]),
            sigma=bytes.fromhex(d["sigma"]),
            params=Params.from_dict(d["params"]),
            params_hash=bytes.fromhex(d["params_hash"]),
            issuer_meta=IssuerMeta.from_dict(d["issuer_meta"]),
            rid_alias=bytes.fromhex(d["rid_alias"]),
        )

    @classmethod
    def from_json(cls, raw: bytes | str) -> "Manifest":
        return cls.from_dict(json.loads(raw))


def verify_manifest_signature(trust_store: TrustStore, mf: Manifest) -> bool:
    """True iff sigma verifies and the stored params_hash matches the params.

    Raises KeyUnresolvedError when the trust store has no matching key; the
    caller maps that to its bad_signature outcome.
    """
    if params_hash(mf.params) != mf.params_hash:
        return False
    pk = trust_store.resolve(mf.issuer_meta, mf.issuer_meta.kid)
    return verify_signature(pk, mf.sigma, signed_message(mf.root, mf.cid, mf.params_hash, mf.issuer_meta))
