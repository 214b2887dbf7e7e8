"""SHA-256 Merkle commitment over chunk leaf digests.

Leaf digests bind the protocol tag, asset identifier, chunk index,
fingerprint and committed-parameter hash:

    d_i = SHA256(0x00 || "MSv1" || cid(16) || i(4, big-endian) || b_i(32) || params_hash(32))

Interior nodes are SHA256(0x01 || left || right); the 0x00/0x01 prefixes
keep leaves and interior nodes in disjoint domains. A level of odd size > 1
duplicates its last node; a single-leaf tree's root is the leaf itself.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
PROTOCOL_TAG = b"MSv1"


class MerkleError(ValueError):
    pass


@dataclass(frozen=True)
class MerkleProof:
    """Inclusion path for one leaf: (sibling hash, side) pairs, leaf upward.

    side is "L" when the sibling is the left child at that level.
    """

    leaf_index: int
    path: tuple[tuple[bytes, str], ...]

    def to_dict(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "path": [{"hash": h.hex(), "side": side} for h, side in self.path],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MerkleProof":
        return cls(
            leaf_index=int(d["leaf_index"]),
            path=tuple((bytes.fromhex(p["hash"]), p["side"]) for p in d["path"]),
        )


def leaf_digest(cid: bytes, index: int, fingerprint: bytes, params_hash: bytes) -> bytes:
    """SHA-256 leaf digest over the 89-byte domain-separated encoding."""
    if len(cid) != 16:
        raise MerkleError("cid must be 16 bytes")
    if len(fingerprint) != 32:
        raise MerkleError("fingerprint must be 32 bytes")
    if len(params_hash) != 32:
        raise MerkleError("params_hash must be 32 bytes")
    if not 0 <= index < 1 << 32:
        raise MerkleError("index out of range")
    msg = LEAF_PREFIX + PROTOCOL_TAG + cid + index.to_bytes(4, "big") + fingerprint + params_hash
    return hashlib.sha256(msg).digest()


def _interior(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def merkle_build(leaves: list[bytes]) -> tuple[bytes, list[MerkleProof]]:
    """Build the tree; returns (root, proof for every leaf in index order)."""
    if not leaves:
        raise MerkleError("cannot build a tree over zero leaves")
    n = len(leaves)
    levels = [list(leaves)]
    while len(levels[-1]) > 1:
        cur = levels[-1]
        if len(cur) % 2 == 1:
            cur = cur + [cur[-1]]
            levels[-1] = cur
        levels.append([_interior(cur[i], cur[i + 1]) for i in range(0, len(cur), 2)])
    root = levels[-1][0]

    proofs = []
    for leaf_index in range(n):
        path = []
        pos = leaf_index
        for level in levels[:-1]:
            sibling = pos ^ 1
            if sibling < len(level):
                side = "L" if sibling < pos else "R"
                path.append((level[sibling], side))
            pos //= 2
        proofs.append(MerkleProof(leaf_index=leaf_index, path=tuple(path)))
    return root, proofs


def merkle_verify(digest: bytes, proof: MerkleProof, root: bytes) -> bool:
    """Fold the digest up the proof path; constant-time root comparison.

    Malformed proofs yield False rather than raising.
    """
    try:
        h = digest
        for sibling, side in proof.path:
            if len(sibling) != 32 or side not in ("L", "R"):
                return False
            h = _interior(sibling, h) if side == "L" else _interior(h, sibling)
        return hmac.compare_digest(h, root)
    except (TypeError, AttributeError):
        return False
