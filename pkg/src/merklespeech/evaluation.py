"""Statistical evaluation harness: corpora, FPR, AUC, robustness, splices.

Produces a versioned results document (JSON) with top-level sections
`clean`, `robustness`, `alpha_sweep`, `splice`, `fpr` and `meta`. Reports
are reproducible: identical seeds give byte-identical JSON, so the meta
section records versions and seeds but never wall-clock times.

Negative windows are random 2-second crops of non-enrolled audio, sampled
with replacement (windows from one file may overlap, so confidence
intervals are approximate under that correlation). The screening-score
threshold is calibrated on a validation split at a target false positive
rate and measured on the held-out test split; the end-to-end FPR counts a
negative window only if the full verification pipeline returns Verified.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfilt
from scipy.stats import beta as beta_dist

from . import __version__, dsp, payload, protocol, watermark
from .manifest import IssuerKeypair, Params, TrustStore

RESULTS_SCHEMA = "msv1-results"
RESULTS_SCHEMA_VERSION = 1

# robustness conditions in the mildest-to-harshest presentation order
ROBUSTNESS_CONDITIONS = (
    ("clip_0.95", "clip:threshold=0.95"),
    ("resample_12k", "resample:rate_hz=12000"),
    ("resample_8k", "resample:rate_hz=8000"),
    ("noise_30db", "noise:snr_db=30"),
    ("bandpass_300_3400", "bandpass:high_hz=3400,low_hz=300"),
    ("noise_20db", "noise:snr_db=20"),
    ("noise_10db", "noise:snr_db=10"),
    ("reverb_rt60_0.3", "reverb:rt60_s=0.3"),
)

ALPHA_SWEEP = (0.2, 0.4, 0.6, 0.8, 1.0)


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Synthetic speech-like corpus
# ---------------------------------------------------------------------------

_FORMANTS = ((500.0, 250.0), (1500.0, 400.0), (2500.0, 500.0))
_NOISE_BANDS = ((700.0, 600.0, 1.0), (1800.0, 900.0, 0.7), (3000.0, 900.0, None))


def synth_speech(seed: int, duration_s: float | None = None, sample_rate: int = 16000) -> dsp.AudioBuffer:
    """One deterministic speech-like file: harmonic stack over drifting f0,
    formant-shaped noise, syllabic amplitude bursts and a low room floor.

    Per-file character (noise mix, low-band emphasis, burst duty cycle) is
    itself drawn from the seed so a corpus spans quiet sparse voices through
    dense ones.
    """
    r = np.random.default_rng(seed)
    if duration_s is None:
        duration_s = r.uniform(6.2, 12.0)
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    noise_mix = r.uniform(0.3, 0.8)
    low_boost = r.uniform(0.5, 1.5)
    hf_gain = r.uniform(0.3, 0.6)
    duty = r.uniform(0.62, 0.82)
    env_floor = r.uniform(0.06, 0.12)

    f0 = r.uniform(95.0, 220.0)
    f0_track = f0 * (1.0 + 0.04 * np.sin(2 * np.pi * r.uniform(0.8, 2.5) * t + r.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0_track) / sample_rate
    voiced = np.zeros(n)
    for h in range(1, int(4000.0 / f0)):
        fh = h * f0
        g = sum(np.exp(-0.5 * ((fh - fc) / bw) ** 2) for fc, bw in _FORMANTS)
        g += low_boost * np.exp(-0.5 * ((fh - 170.0) / 180.0) ** 2)
        voiced += (g + 0.08) / h**0.5 * np.sin(h * phase + r.uniform(0, 2 * np.pi))

    white = r.standard_normal(n)
    noise = np.zeros(n)
    for fc, bw, gain in _NOISE_BANDS:
        gain = hf_gain if gain is None else gain
        lo, hi = max(50.0, fc - bw / 2), min(7900.0, fc + bw / 2)
        sos = butter(2, [lo, hi], btype="band", fs=sample_rate, output="sos")
        noise += gain * sosfilt(sos, white)
    noise /= max(1e-12, float(np.sqrt(np.mean(noise**2))))
    voiced /= max(1e-12, float(np.sqrt(np.mean(voiced**2))))

    mix = voiced + noise_mix * noise
    syllable_rate = r.uniform(2.2, 4.5)
    cycle = ((2 * np.pi * syllable_rate * t + r.uniform(0, 2 * np.pi)) / (2 * np.pi)) % 1.0
    burst = np.where(cycle < duty, 0.5 * (1 - np.cos(2 * np.pi * cycle / duty)), 0.0)
    env = env_floor + (1 - env_floor) * burst
    mix = mix * env + 10 ** (-35 / 20) * r.standard_normal(n)

    rms = r.uniform(0.07, 0.15)
    mix = rms * mix / float(np.sqrt(np.mean(mix**2)))
    peak = float(np.max(np.abs(mix)))
    if peak > 0.7:
        mix *= 0.7 / peak
    return dsp.AudioBuffer(samples=mix, sample_rate=sample_rate)


def synth_corpus(n_files: int, seed: int, duration_s: float | None = None) -> list[dsp.AudioBuffer]:
    """Deterministic corpus; file i uses subseed seed*100000 + i."""
    return [synth_speech(seed * 100000 + i, duration_s=duration_s) for i in range(n_files)]


# ---------------------------------------------------------------------------
# Negative-window sampling
# ---------------------------------------------------------------------------


@dataclass
class NegativeSampler:
    corpus: list[dsp.AudioBuffer]
    windows_total: int
    seed: int
    per_file_cap: int = 10000
    split_fraction: float = 0.5
    window_samples: int = 32000


def sample_negative_windows(sampler: NegativeSampler) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Random (file, offset) crops with replacement, split into val/test.

    Offsets are uniform over valid start positions; files shorter than one
    window are skipped; drawing stops at the per-file cap.
    """
    eligible = [i for i, buf in enumerate(sampler.corpus) if len(buf.samples) >= sampler.window_samples]
    if not eligible:
        raise EvaluationError("corpus has no file of at least one window length")
    if sampler.windows_total > sampler.per_file_cap * len(eligible):
        raise EvaluationError("windows_total exceeds the per-file cap over this corpus")
    rng = np.random.default_rng(sampler.seed)
    counts = {i: 0 for i in eligible}
    windows: list[tuple[int, int]] = []
    while len(windows) < sampler.windows_total:
        i = int(eligible[rng.integers(len(eligible))])
        if counts[i] >= sampler.per_file_cap:
            continue
        max_off = len(sampler.corpus[i].samples) - sampler.window_samples
        off = int(rng.integers(0, max_off + 1))
        windows.append((i, off))
        counts[i] += 1
    order = rng.permutation(len(windows))
    windows = [windows[int(j)] for j in order]
    n_val = int(round(sampler.split_fraction * len(windows)))
    return windows[:n_val], windows[n_val:]


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def calibrate_threshold(val_scores, target_fpr: float) -> float:
    """Smallest threshold whose empirical validation FPR (score >= t) is
    <= target; when no observed score qualifies, sits just above the max.

    Tied scores are counted together, pushing the choice to a higher
    threshold rather than overshooting the target.
    """
    scores = np.sort(np.asarray(val_scores, dtype=np.float64))
    n = len(scores)
    if n == 0:
        raise EvaluationError("empty validation scores")
    unique = np.unique(scores)
    counts_ge = n - np.searchsorted(scores, unique, side="left")
    admissible = counts_ge / n <= target_fpr
    if admissible.any():
        return float(unique[int(np.argmax(admissible))])
    return float(np.nextafter(scores[-1], np.inf))


def measure_fpr(test_scores, threshold: float) -> float:
    scores = np.asarray(test_scores, dtype=np.float64)
    if len(scores) == 0:
        raise EvaluationError("empty test scores")
    return float(np.mean(scores >= threshold))


def roc_auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg) via average ranks."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise EvaluationError("both score sets must be non-empty")
    combined = np.concatenate([pos, neg])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(len(combined))
    ranks[order] = np.arange(1, len(combined) + 1)
    # average ranks across ties
    sorted_vals = combined[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = (i + 1 + j + 1) / 2.0
        i = j + 1
    rank_sum = float(np.sum(ranks[: len(pos)]))
    u = rank_sum - len(pos) * (len(pos) + 1) / 2.0
    return u / (len(pos) * len(neg))


def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if not 0 <= k <= n or n < 1:
        raise EvaluationError("need 0 <= k <= n, n >= 1")
    from scipy.stats import norm

    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def clopper_pearson_upper(k: int, n: int, confidence: float = 0.95) -> float:
    """Exact upper bound; for k = 0 this is 1 - (1-confidence_tail)^(1/n)."""
    if not 0 <= k <= n or n < 1:
        raise EvaluationError("need 0 <= k <= n, n >= 1")
    tail = (1.0 - confidence) / 2.0
    if k == n:
        return 1.0
    return float(beta_dist.ppf(1.0 - tail, k + 1, n - k))


def bootstrap_ci(samples, n_resamples: int = 2000, seed: int = 0, confidence: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    data = np.asarray(samples, dtype=np.float64)
    if len(data) == 0:
        raise EvaluationError("empty sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(data), size=(n_resamples, len(data)))
    means = data[idx].mean(axis=1)
    lo, hi = np.percentile(means, [100 * (1 - confidence) / 2, 100 * (1 + confidence) / 2])
    return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Enrollment helpers for benches
# ---------------------------------------------------------------------------


@dataclass
class EnrolledAsset:
    original: dsp.AudioBuffer
    watermarked: dsp.AudioBuffer
    manifest_cid: bytes
    rid_alias: bytes
    n_chunks: int


@dataclass
class BenchContext:
    params: Params
    keypair: IssuerKeypair
    trust_store: TrustStore
    key: watermark.WatermarkKey
    store: object
    cid_seed: int = 0


def make_context(
    store,
    alpha: float = 0.6,
    wm_seed: int = watermark.DEFAULT_KEY_SEED,
    issuer_id: str = "bench-issuer",
    kid: int = 1,
    cid_seed: int = 0,
) -> BenchContext:
    params = Params(kid=kid).with_alpha(alpha)
    # keys are seeded too: bench reports must be byte-identical across runs
    import hashlib

    sk_seed = hashlib.sha256(b"msv1/bench-issuer-key" + cid_seed.to_bytes(8, "big")).digest()
    keypair = IssuerKeypair.from_seed(sk_seed, issuer_id, kid)
    trust = TrustStore()
    trust.add(issuer_id, kid, keypair.public_bytes())
    return BenchContext(
        params=params, keypair=keypair, trust_store=trust, key=watermark.WatermarkKey(wm_seed),
        store=store, cid_seed=cid_seed,
    )


def _bench_cid(ctx: BenchContext, file_index: int) -> bytes:
    import hashlib

    raw = hashlib.sha256(b"msv1/bench-cid" + ctx.cid_seed.to_bytes(8, "big") + file_index.to_bytes(4, "big"))
    return raw.digest()[:16]


def enroll_corpus(ctx: BenchContext, corpus: list[dsp.AudioBuffer]) -> list[EnrolledAsset]:
    assets = []
    for file_index, buf in enumerate(corpus):
        result = protocol.enroll(buf, ctx.params, ctx.keypair, ctx.key, ctx.store, cid=_bench_cid(ctx, file_index))
        n_chunks = len(dsp.chunk_audio(buf, ctx.params.chunk_seconds, ctx.params.stride_seconds))
        assets.append(
            EnrolledAsset(
                original=buf,
                watermarked=result.audio,
                manifest_cid=result.manifest.cid,
                rid_alias=result.manifest.rid_alias,
                n_chunks=n_chunks,
            )
        )
    return assets


def _chunk_windows(assets: list[EnrolledAsset], limit: int | None = None) -> list[tuple[int, int]]:
    """(asset index, chunk index) pairs over complete chunks, round-robin by
    file so a limited selection spans the corpus."""
    pool: list[tuple[int, int]] = []
    depth = 0
    while True:
        layer = [(ai, depth) for ai, a in enumerate(assets) if depth < a.n_chunks]
        if not layer:
            break
        pool.extend(layer)
        depth += 1
    if limit is not None:
        pool = pool[:limit]
    return pool


# ---------------------------------------------------------------------------
# Bench runs
# ---------------------------------------------------------------------------


def _verify_rates(
    ctx: BenchContext,
    audio_by_asset: dict[int, dsp.AudioBuffer],
    chunk_refs: list[tuple[int, int]],
    assets: list[EnrolledAsset],
) -> dict:
    """Decode/WM/MSv1 rates over the referenced chunks of given audio."""
    chunk_len = ctx.params.chunk_samples
    n = len(chunk_refs)
    decode_ok = 0
    wm_ok = 0
    msv1_ok = 0
    for ai, ci in chunk_refs:
        window = audio_by_asset[ai].samples[ci * chunk_len : (ci + 1) * chunk_len]
        rec = protocol.verify_chunk(
            window, ctx.key, ctx.trust_store, ctx.store, tier=protocol.TIER_MSV1, qim_spec=ctx.params.qim_spec
        )
        decoded = rec.reason != protocol.REASON_NO_PAYLOAD
        decode_ok += decoded
        wm_ok += decoded and rec.reason not in (protocol.REASON_MANIFEST_MISSING, protocol.REASON_BAD_SIGNATURE)
        msv1_ok += rec.status == "Verified"
    def rate_entry(k):
        lo, hi = wilson_interval(k, n)
        return {"rate": k / n, "n": n, "wilson_ci": [round(lo, 6), round(hi, 6)]}
    return {
        "decode": rate_entry(decode_ok),
        "wm_only": rate_entry(wm_ok),
        "msv1": rate_entry(msv1_ok),
    }


def run_robustness_suite(
    ctx: BenchContext,
    assets: list[EnrolledAsset],
    conditions=ROBUSTNESS_CONDITIONS,
    n_chunks: int = 90,
    transform_seed: int = 7000,
) -> list[dict]:
    """Apply each transform to the watermarked files and verify both tiers."""
    refs = _chunk_windows(assets, limit=n_chunks)
    out = []
    for name, spec_text in conditions:
        spec = dsp.TransformSpec.parse(spec_text)
        transformed: dict[int, dsp.AudioBuffer] = {}
        for ai in {ai for ai, _ in refs}:
            spec_i = dsp.TransformSpec(kind=spec.kind, params=dict(spec.params), seed=transform_seed + ai)
            transformed[ai] = dsp.apply_transform(assets[ai].watermarked, spec_i)
        entry = {"condition": name, "transform": spec_text}
        entry.update(_verify_rates(ctx, transformed, refs, assets))
        out.append(entry)
    return out


def run_alpha_sweep(
    store_factory,
    corpus: list[dsp.AudioBuffer],
    alphas=ALPHA_SWEEP,
    n_chunks: int = 90,
    seed: int = 123,
) -> list[dict]:
    """Fresh enrollment per alpha (distinct CIDs); reports embedding SNR and
    the WM-only verified rate under 20 dB additive noise."""
    out = []
    for alpha_index, alpha in enumerate(alphas):
        # distinct cid_seed per alpha: each point is an independent enrollment
        ctx = make_context(store_factory(alpha), alpha=alpha, cid_seed=seed * 10 + alpha_index)
        assets = enroll_corpus(ctx, corpus)
        refs = _chunk_windows(assets, limit=n_chunks)
        chunk_len = ctx.params.chunk_samples
        snrs = []
        for ai, a in enumerate(assets):
            used = max((ci for aj, ci in refs if aj == ai), default=None)
            if used is None:
                continue
            upto = (used + 1) * chunk_len
            snrs.append(dsp.measure_snr(a.original.samples[:upto], a.watermarked.samples[:upto]))
        noisy: dict[int, dsp.AudioBuffer] = {}
        for ai in {ai for ai, _ in refs}:
            spec = dsp.TransformSpec(kind="noise", params={"snr_db": 20}, seed=seed + ai)
            noisy[ai] = dsp.apply_transform(assets[ai].watermarked, spec)
        rates = _verify_rates(ctx, noisy, refs, assets)
        out.append(
            {
                "alpha": alpha,
                "snr_db": round(float(np.mean(snrs)), 3),
                "wm_only_noise20": rates["wm_only"],
            }
        )
    return out


# ---------------------------------------------------------------------------
# Splice scenarios
# ---------------------------------------------------------------------------


def _not_verified_mask(ctx: BenchContext, audio: dsp.AudioBuffer, tier: str) -> list[bool]:
    timeline = protocol.verify_streaming(
        audio, ctx.key, ctx.trust_store, ctx.store, tier=tier,
        chunk_seconds=ctx.params.chunk_seconds, stride_seconds=ctx.params.stride_seconds,
        qim_spec=ctx.params.qim_spec,
    )
    return [r.status != "Verified" for r in timeline.records]


def _iou(predicted: list[bool], truth: list[bool]) -> float:
    inter = sum(p and t for p, t in zip(predicted, truth))
    union = sum(p or t for p, t in zip(predicted, truth))
    return 1.0 if union == 0 else inter / union


def _macro_f1(predicted: list, truth: list, labels: list) -> float:
    f1s = []
    for lab in labels:
        tp = sum(p == lab and t == lab for p, t in zip(predicted, truth))
        fp = sum(p == lab and t != lab for p, t in zip(predicted, truth))
        fn = sum(p != lab and t == lab for p, t in zip(predicted, truth))
        if tp == fp == fn == 0:
            f1s.append(1.0)  # vacuous class: no instances, no predictions
            continue
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec))
    return float(np.mean(f1s))


def run_splice_suite(ctx: BenchContext, asset_a: EnrolledAsset, asset_b: EnrolledAsset, seed: int = 99) -> dict:
    """Boundary-aligned edits: insert a foreign segment, mute a segment, and
    interleave chunks of two assets; all scored at chunk granularity."""
    chunk_len = ctx.params.chunk_samples
    rng = np.random.default_rng(seed)
    wm_a = asset_a.watermarked.samples
    n_a = asset_a.n_chunks

    def chunks_of(x):
        return [x[i * chunk_len : (i + 1) * chunk_len] for i in range(len(x) // chunk_len)]

    out: dict = {}

    # insert: one unwatermarked chunk-length segment at a chunk boundary
    insert_at = n_a // 2
    foreign = synth_speech(seed + 1, duration_s=ctx.params.chunk_seconds).samples[:chunk_len]
    edited = np.concatenate([wm_a[: insert_at * chunk_len], foreign, wm_a[insert_at * chunk_len : n_a * chunk_len]])
    truth = [False] * insert_at + [True] + [False] * (n_a - insert_at)
    for tier in (protocol.TIER_WM, protocol.TIER_MSV1):
        pred = _not_verified_mask(ctx, dsp.AudioBuffer(edited, ctx.params.sample_rate), tier)
        out.setdefault("insert", {})[tier] = {"iou": _iou(pred, truth), "n": len(truth)}

    # remove/mute: zero out one enrolled chunk
    mute_at = max(0, n_a // 3)
    muted = wm_a[: n_a * chunk_len].copy()
    muted[mute_at * chunk_len : (mute_at + 1) * chunk_len] = 0.0
    truth = [i == mute_at for i in range(n_a)]
    for tier in (protocol.TIER_WM, protocol.TIER_MSV1):
        pred = _not_verified_mask(ctx, dsp.AudioBuffer(muted, ctx.params.sample_rate), tier)
        out.setdefault("remove", {})[tier] = {"iou": _iou(pred, truth), "n": len(truth)}

    # mixed origin: alternate chunks from the two assets
    a_chunks = chunks_of(wm_a)[: asset_a.n_chunks]
    b_chunks = chunks_of(asset_b.watermarked.samples)[: asset_b.n_chunks]
    n_mix = min(len(a_chunks), len(b_chunks))
    mixed = []
    truth_labels = []
    for i in range(n_mix):
        src = "A" if i % 2 == 0 else "B"
        mixed.append(a_chunks[i] if src == "A" else b_chunks[i])
        truth_labels.append(src)
    mixed_audio = dsp.AudioBuffer(np.concatenate(mixed), ctx.params.sample_rate)
    cid_label = {asset_a.manifest_cid: "A", asset_b.manifest_cid: "B"}
    f1 = {}
    for tier in (protocol.TIER_WM, protocol.TIER_MSV1):
        timeline = protocol.verify_streaming(
            mixed_audio, ctx.key, ctx.trust_store, ctx.store, tier=tier,
            chunk_seconds=ctx.params.chunk_seconds, stride_seconds=ctx.params.stride_seconds,
            qim_spec=ctx.params.qim_spec,
        )
        pred = [cid_label.get(r.cid, "none") if r.cid is not None else "none" for r in timeline.records]
        f1[tier] = {"macro_f1": _macro_f1(pred, truth_labels, ["A", "B", "none"]), "n": n_mix}
    out["mixed"] = f1
    return out


# ---------------------------------------------------------------------------
# Clean-pipeline and FPR benches
# ---------------------------------------------------------------------------


def run_clean_bench(ctx: BenchContext, assets: list[EnrolledAsset]) -> dict:
    """Decode/BER/message and verified rates over every enrolled chunk."""
    chunk_len = ctx.params.chunk_samples
    refs = _chunk_windows(assets)
    rates = _verify_rates(ctx, {ai: a.watermarked for ai, a in enumerate(assets)}, refs, assets)
    # post-ECC BER and message match over chunks that decode
    bit_errors = 0
    decoded_chunks = 0
    msg_match = 0
    for ai, ci in refs:
        window = assets[ai].watermarked.samples[ci * chunk_len : (ci + 1) * chunk_len]
        det = watermark.decode_chunk(window, ctx.key, ctx.params.qim_spec)
        if not det.decode_ok:
            continue
        decoded_chunks += 1
        truth = payload.pack(
            payload.PayloadFields(
                cid=assets[ai].manifest_cid, index=ci, rid=assets[ai].rid_alias, kid=ctx.params.kid
            )
        )
        got = payload.pack(det.payload)
        msg_match += got == truth
        bit_errors += sum((a ^ b).bit_count() for a, b in zip(truth, got))
    snrs = [dsp.measure_snr(a.original.samples, a.watermarked.samples) for a in assets]
    return {
        "n_files": len(assets),
        "n_chunks": len(refs),
        "decode": rates["decode"],
        "wm_only": rates["wm_only"],
        "msv1": rates["msv1"],
        "post_ecc_ber": 0.0 if decoded_chunks == 0 else bit_errors / (decoded_chunks * payload.PACKED_LEN * 8),
        "msg_match_rate": 0.0 if decoded_chunks == 0 else msg_match / decoded_chunks,
        "mean_embed_snr_db": round(float(np.mean(snrs)), 3),
    }


def screen_windows(
    ctx: BenchContext,
    corpus: list[dsp.AudioBuffer],
    windows: list[tuple[int, int]],
    jobs: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """(decode_ok, score) per window; decode_ok means RS + CRC accepted."""
    window_len = ctx.params.chunk_samples

    def one(ref):
        i, off = ref
        det = watermark.decode_chunk(corpus[i].samples[off : off + window_len], ctx.key, ctx.params.qim_spec)
        return det.decode_ok, det.score

    if jobs is not None and jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, windows, chunksize=256))
    else:
        results = [one(ref) for ref in windows]
    ok = np.array([r[0] for r in results], dtype=bool)
    scores = np.array([r[1] for r in results], dtype=np.float64)
    return ok, scores


def measure_fpr_verified(
    ctx: BenchContext,
    corpus: list[dsp.AudioBuffer],
    windows: list[tuple[int, int]],
    tier: str,
    jobs: int | None = None,
) -> dict:
    """Full-pipeline false positives: a window counts only if it Verifies."""
    window_len = ctx.params.chunk_samples

    def one(ref):
        i, off = ref
        rec = protocol.verify_chunk(
            corpus[i].samples[off : off + window_len],
            ctx.key,
            ctx.trust_store,
            ctx.store,
            tier=tier,
            qim_spec=ctx.params.qim_spec,
        )
        return rec.status == "Verified"

    if jobs is not None and jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            flags = list(pool.map(one, windows, chunksize=256))
    else:
        flags = [one(ref) for ref in windows]
    count = int(sum(flags))
    n = len(flags)
    entry = {"tier": tier, "count": count, "n": n}
    if count == 0 and n >= 1:
        entry["cp_upper_95"] = clopper_pearson_upper(0, n)
    elif count > 0:
        lo, hi = bootstrap_ci([1.0 if f else 0.0 for f in flags], seed=ctx.key.seed)
        entry["bootstrap_ci_95"] = [lo, hi]
    return entry


def run_fpr_bench(
    ctx: BenchContext,
    assets: list[EnrolledAsset],
    negative_corpus: list[dsp.AudioBuffer],
    n_windows: int = 100000,
    taus=(1e-3, 1e-4),
    seed: int = 123,
    jobs: int | None = None,
) -> dict:
    """Screening (AUC, calibrated FPR_score) plus end-to-end FPR_verified."""
    sampler = NegativeSampler(corpus=negative_corpus, windows_total=n_windows, seed=seed,
                              window_samples=ctx.params.chunk_samples)
    val_refs, test_refs = sample_negative_windows(sampler)
    _, val_scores = screen_windows(ctx, negative_corpus, val_refs, jobs=jobs)
    test_ok, test_scores = screen_windows(ctx, negative_corpus, test_refs, jobs=jobs)

    chunk_len = ctx.params.chunk_samples
    pos_scores = []
    for a in assets:
        for ci in range(a.n_chunks):
            pos_scores.append(
                watermark.consistency_score(
                    a.watermarked.samples[ci * chunk_len : (ci + 1) * chunk_len], ctx.key, ctx.params.qim_spec
                )
            )
    pos_scores = np.asarray(pos_scores)

    fpr_score = {}
    for tau in taus:
        threshold = calibrate_threshold(val_scores, tau)
        fpr_score[f"{tau:g}"] = {
            "threshold": round(float(threshold), 6),
            "fpr_val_target": tau,
            "fpr_test": measure_fpr(test_scores, threshold),
            "n_val": len(val_scores),
            "n_test": len(test_scores),
        }

    verified = {}
    for tier in (protocol.TIER_WM, protocol.TIER_MSV1):
        # the pipeline short-circuits on decode failure, so only windows
        # whose payload decoded need the full gate; the rest are Unverified
        candidates = [ref for ref, ok in zip(test_refs, test_ok) if ok]
        entry = measure_fpr_verified(ctx, negative_corpus, candidates, tier, jobs=jobs)
        entry["n"] = len(test_refs)
        if entry["count"] == 0:
            entry["cp_upper_95"] = clopper_pearson_upper(0, len(test_refs))
        verified[tier] = entry

    return {
        "auc_screening": roc_auc(pos_scores, test_scores),
        "n_pos": len(pos_scores),
        "n_neg_val": len(val_refs),
        "n_neg_test": len(test_refs),
        "fpr_score": fpr_score,
        "fpr_verified": verified,
    }


# ---------------------------------------------------------------------------
# Report document
# ---------------------------------------------------------------------------


def make_report(sections: dict, seed: int, extra_meta: dict | None = None) -> dict:
    meta = {
        "schema": RESULTS_SCHEMA,
        "schema_version": RESULTS_SCHEMA_VERSION,
        "toolkit_version": __version__,
        "seed": seed,
        "python_version": sys.version.split()[0],
        "numpy_version": np.__version__,
    }
    if extra_meta:
        meta.update(extra_meta)
    doc = {"meta": meta}
    doc.update(sections)
    return doc


def emit_report(report: dict, path) -> None:
    """Write the results document; identical inputs yield identical bytes."""
    if report.get("meta", {}).get("schema") != RESULTS_SCHEMA:
        raise EvaluationError("report is missing its schema marker")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    meta = doc.get("meta", {})
    if meta.get("schema") != RESULTS_SCHEMA or meta.get("schema_version") != RESULTS_SCHEMA_VERSION:
        raise EvaluationError(f"unsupported results schema in {path}")
    return doc
