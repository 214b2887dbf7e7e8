"""Enrollment and streaming verification with two assurance tiers.

Enrollment: draw a random CID, chunk the audio, embed a per-chunk payload,
fingerprint the *watermarked* chunks (so inclusion proofs hold for the
published samples), build the Merkle tree, sign the root and publish the
manifest plus per-leaf proofs. The payload's repository hint cannot be the
final root (the root depends on the watermarked audio, which depends on the
payload), so it is the truncated root of a provisional tree over the
original chunks' fingerprints, stored in the manifest as rid_alias and
indexed by the repository.

Verification runs the gate sequence per window and reports the first
failing step as the record's reason code:

    decode -> manifest lookup -> signature (wm tier stops here)
           -> fingerprint recomputation -> proof lookup -> inclusion

Transport errors propagate as exceptions; a chunk is never marked
Unverified because the repository was unreachable.
"""

from __future__ import annotations

import json
import secrets
from dataclasses import dataclass, field

import numpy as np

from . import dsp, fingerprint, manifest as manifest_mod, merkle, payload, watermark
from .manifest import IssuerKeypair, Manifest, Params, TrustStore

TIER_WM = "wm_only"
TIER_MSV1 = "msv1"

REASON_OK = "ok"
REASON_NO_PAYLOAD = "no_payload"
REASON_MANIFEST_MISSING = "manifest_missing"
REASON_BAD_SIGNATURE = "bad_signature"
REASON_PROOF_MISSING = "proof_missing"
REASON_INCLUSION_FAIL = "inclusion_fail"

REASONS = (
    REASON_OK,
    REASON_NO_PAYLOAD,
    REASON_MANIFEST_MISSING,
    REASON_BAD_SIGNATURE,
    REASON_PROOF_MISSING,
    REASON_INCLUSION_FAIL,
)


class ProtocolError(ValueError):
    pass


@dataclass
class EnrollResult:
    audio: dsp.AudioBuffer
    manifest: Manifest
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class VerificationRecord:
    start_time: float
    tier: str
    status: str
    reason: str
    score: float
    chunk_index_claimed: int | None = None
    cid: bytes | None = None

    def to_dict(self) -> dict:
        return {
            "start_time": self.start_time,
            "tier": self.tier,
            "status": self.status,
            "reason": self.reason,
            "score": round(self.score, 6),
            "chunk_index_claimed": self.chunk_index_claimed,
            "cid": self.cid.hex() if self.cid is not None else None,
        }


@dataclass
class Timeline:
    records: list[VerificationRecord]
    stride_seconds: float

    @property
    def summary(self) -> dict[str, int]:
        counts = {reason: 0 for reason in REASONS}
        for rec in self.records:
            counts[rec.reason] = counts.get(rec.reason, 0) + 1
        return {k: v for k, v in counts.items() if v}

    def verified_rate(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.status == "Verified" for r in self.records) / len(self.records)

    def to_json(self) -> str:
        return json.dumps([r.to_dict() for r in self.records], sort_keys=True, separators=(",", ":"))


def _quantize_to_save_precision(samples: np.ndarray) -> np.ndarray:
    """Clamp and round-trip through float32, the on-disk WAV precision.

    Fingerprints are computed on exactly these values so a verifier reading
    the written file reproduces them bit for bit.
    """
    return np.clip(samples, -1.0, 1.0).astype(np.float32).astype(np.float64)


def enroll(
    audio: dsp.AudioBuffer,
    params: Params,
    keypair: IssuerKeypair,
    key: watermark.WatermarkKey,
    store,
    cid: bytes | None = None,
) -> EnrollResult:
    """Watermark, commit and publish one asset; returns the output audio.

    The output equals the input length: watermarked chunks followed by the
    untouched tail remainder.
    """
    if audio.sample_rate != params.sample_rate:
        raise ProtocolError(f"audio rate {audio.sample_rate} != committed rate {params.sample_rate}")
    if keypair.meta.kid != params.kid:
        raise ProtocolError(f"signing key kid {keypair.meta.kid} != params kid {params.kid}")
    chunks = dsp.chunk_audio(audio, params.chunk_seconds, params.stride_seconds)
    if not chunks:
        raise ProtocolError("audio shorter than one chunk")
    if len(chunks) >= 1 << 24:
        raise ProtocolError("chunk count exceeds the 24-bit payload index")

    if cid is None:
        cid = secrets.token_bytes(params.cid_bits // 8)
    elif len(cid) != params.cid_bits // 8:
        raise ProtocolError("cid length does not match params.cid_bits")

    ph = manifest_mod.params_hash(params)
    fspec = params.fingerprint_spec

    # provisional commitment over the original chunks yields the in-band
    # repository hint; the binding commitment is built afterwards over the
    # watermarked chunks
    provisional = [
        merkle.leaf_digest(cid, c.index, fingerprint.compute_fingerprint(c.samples, fspec).bits, ph)
        for c in chunks
    ]
    root0, _ = merkle.merkle_build(provisional)
    rid_alias = root0[:8]

    warnings = []
    wm_chunks = []
    for c in chunks:
        fields = payload.PayloadFields(cid=cid, index=c.index, rid=rid_alias, kid=params.kid)
        codeword = payload.rs_encode(payload.pack(fields))
        wm, converged, iters = watermark.embed_chunk(c.samples, codeword, key, params.qim_spec)
        if not converged:
            warnings.append(f"chunk {c.index}: embedding did not converge in {iters} iterations")
        wm_chunks.append(_quantize_to_save_precision(wm))

    leaves = [
        merkle.leaf_digest(cid, i, fingerprint.compute_fingerprint(wm, fspec).bits, ph)
        for i, wm in enumerate(wm_chunks)
    ]
    root, proofs = merkle.merkle_build(leaves)
    sigma = manifest_mod.sign_manifest(keypair, root, cid, ph)
    mf = Manifest(
        cid=cid,
        root=root,
        sigma=sigma,
        params=params,
        params_hash=ph,
        issuer_meta=keypair.meta,
        rid_alias=rid_alias,
    )
    store.put_manifest(mf)
    store.put_proofs(cid, proofs)

    chunk_len = params.chunk_samples
    out = audio.samples.copy()
    for i, wm in enumerate(wm_chunks):
        out[i * chunk_len : (i + 1) * chunk_len] = wm
    return EnrollResult(
        audio=dsp.AudioBuffer(samples=out, sample_rate=audio.sample_rate),
        manifest=mf,
        warnings=warnings,
    )


def verify_chunk(
    window: np.ndarray,
    key: watermark.WatermarkKey,
    trust_store: TrustStore,
    repo,
    tier: str = TIER_MSV1,
    start_time: float = 0.0,
    qim_spec: watermark.QimSpec | None = None,
) -> VerificationRecord:
    """Run the verification gate on one window; first failing step reports."""
    if tier not in (TIER_WM, TIER_MSV1):
        raise ProtocolError(f"unknown tier {tier!r}")
    qspec = qim_spec or watermark.QimSpec()
    det = watermark.decode_chunk(window, key, qspec)

    def record(status, reason, fields=None):
        return VerificationRecord(
            start_time=start_time,
            tier=tier,
            status=status,
            reason=reason,
            score=det.score,
            chunk_index_claimed=fields.index if fields else None,
            cid=fields.cid if fields else None,
        )

    if not det.decode_ok:
        return record("Unverified", REASON_NO_PAYLOAD)
    fields = det.payload

    mf = repo.get_manifest(cid=fields.cid, rid=fields.rid)
    if mf is None:
        return record("Unverified", REASON_MANIFEST_MISSING, fields)

    try:
        sig_ok = manifest_mod.verify_manifest_signature(trust_store, mf)
    except manifest_mod.KeyUnresolvedError:
        sig_ok = False
    if not sig_ok:
        return record("Unverified", REASON_BAD_SIGNATURE, fields)

    if tier == TIER_WM:
        return record("Verified", REASON_OK, fields)

    fp = fingerprint.compute_fingerprint(np.asarray(window, dtype=np.float64), mf.params.fingerprint_spec)
    digest = merkle.leaf_digest(fields.cid, fields.index, fp.bits, mf.params_hash)
    proof = repo.get_proof(fields.cid, fields.index)
    if proof is None:
        return record("Unverified", REASON_PROOF_MISSING, fields)
    if not merkle.merkle_verify(digest, proof, mf.root):
        return record("Unverified", REASON_INCLUSION_FAIL, fields)
    return record("Verified", REASON_OK, fields)


def verify_streaming(
    audio: dsp.AudioBuffer,
    key: watermark.WatermarkKey,
    trust_store: TrustStore,
    repo,
    tier: str = TIER_MSV1,
    chunk_seconds: float = 2.0,
    stride_seconds: float = 2.0,
    qim_spec: watermark.QimSpec | None = None,
    jobs: int | None = None,
) -> Timeline:
    """Verify sliding windows at the given stride into a timeline.

    Windows are independent, so memory stays constant in the audio length
    and the per-window work can fan out over a thread pool.
    """
    sr = audio.sample_rate
    window_len = round(chunk_seconds * sr)
    offsets = []
    k = 0
    while True:
        start = round(k * stride_seconds * sr)
        if start + window_len > len(audio.samples):
            break
        offsets.append(start)
        k += 1

    def one(start: int) -> VerificationRecord:
        return verify_chunk(
            audio.samples[start : start + window_len],
            key,
            trust_store,
            repo,
            tier=tier,
            start_time=start / sr,
            qim_spec=qim_spec,
        )

    if jobs is not None and jobs > 1 and len(offsets) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, offsets))
    else:
        records = [one(start) for start in offsets]
    return aggregate_timeline(records, stride_seconds, chunk_seconds)


# gate depth for picking the most informative record over a grid cell
_REASON_RANK = {
    REASON_NO_PAYLOAD: 0,
    REASON_MANIFEST_MISSING: 1,
    REASON_BAD_SIGNATURE: 2,
    REASON_PROOF_MISSING: 3,
    REASON_INCLUSION_FAIL: 4,
    REASON_OK: 5,
}


def aggregate_timeline(
    records: list[VerificationRecord],
    stride_seconds: float,
    chunk_seconds: float = 2.0,
) -> Timeline:
    """Assemble ordered records into a timeline.

    With stride == chunk length this is a pass-through (records sorted by
    start time). With overlapping windows (stride < chunk length) each
    chunk-grid cell takes the deepest-progress record among the windows
    covering it, so a cell is Verified iff any covering window verified.
    """
    ordered = sorted(records, key=lambda r: r.start_time)
    if not ordered or stride_seconds >= chunk_seconds:
        return Timeline(records=ordered, stride_seconds=stride_seconds)

    cells: list[VerificationRecord] = []
    end_time = ordered[-1].start_time + chunk_seconds
    cell_start = 0.0
    while cell_start < end_time:
        cell_end = cell_start + chunk_seconds
        covering = [r for r in ordered if r.start_time < cell_end and r.start_time + chunk_seconds > cell_start]
        if covering:
            best = max(covering, key=lambda r: (_REASON_RANK[r.reason], r.score))
            cells.append(
                VerificationRecord(
                    start_time=cell_start,
                    tier=best.tier,
                    status=best.status,
                    reason=best.reason,
                    score=best.score,
                    chunk_index_claimed=best.chunk_index_claimed,
                    cid=best.cid,
                )
            )
        cell_start = cell_end
    return Timeline(records=cells, stride_seconds=stride_seconds)
