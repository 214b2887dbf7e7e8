"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The expensive artifacts
(the enrolled corpus, the negative-window screening pass) are module-scoped
fixtures shared across criteria.
"""

from __future__ import annotations

import math
import threading
import time

import numpy as np
import pytest

from merklespeech import dsp, evaluation, payload, protocol, watermark
from merklespeech.evaluation import (
    NegativeSampler,
    calibrate_threshold,
    clopper_pearson_upper,
    measure_fpr,
    roc_auc,
    sample_negative_windows,
)
from merklespeech.repository import FileStore, RepoClient, make_server

SEED = 123
POSITIVE_CHUNK_TARGET = 5000
NEGATIVE_WINDOWS = 100000


class _Criterion:
    def __init__(self, number: int, label: str):
        self.number = number
        self.label = label
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        verdict = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.notes)
        print(f"\n[criterion {self.number}] {verdict} - {self.label}" + (f" ({detail})" if detail else ""))
        return False


@pytest.fixture(scope="module")
def clean_run(tmp_path_factory):
    """Enroll synthetic files until the corpus holds >= 5000 chunks."""
    root = tmp_path_factory.mktemp("acc-repo")
    ctx = evaluation.make_context(FileStore(root), cid_seed=SEED)
    corpus = []
    total = 0
    i = 0
    while total < POSITIVE_CHUNK_TARGET:
        buf = evaluation.synth_speech(SEED * 100000 + i)
        corpus.append(buf)
        total += len(buf.samples) // ctx.params.chunk_samples
        i += 1
    t0 = time.perf_counter()
    assets = evaluation.enroll_corpus(ctx, corpus)
    enroll_seconds = time.perf_counter() - t0
    t0 = time.perf_counter()
    clean = evaluation.run_clean_bench(ctx, assets)
    verify_seconds = time.perf_counter() - t0
    return ctx, assets, clean, enroll_seconds, verify_seconds


@pytest.fixture(scope="module")
def negative_screen(clean_run):
    """Screen 1e5 negative windows once; criteria 2 and 3 both consume it."""
    ctx, _, _, _, _ = clean_run
    negatives = evaluation.synth_corpus(60, SEED + 1)
    sampler = NegativeSampler(corpus=negatives, windows_total=NEGATIVE_WINDOWS, seed=SEED,
                              window_samples=ctx.params.chunk_samples)
    val_refs, test_refs = sample_negative_windows(sampler)
    ok_val, scores_val = evaluation.screen_windows(ctx, negatives, val_refs)
    ok_test, scores_test = evaluation.screen_windows(ctx, negatives, test_refs)
    return negatives, (val_refs, ok_val, scores_val), (test_refs, ok_test, scores_test)


def test_criterion_1_clean_pipeline(clean_run):
    ctx, assets, clean, enroll_seconds, verify_seconds = clean_run
    with _Criterion(1, "clean pipeline") as c:
        c.note(f"{clean['n_files']} files, {clean['n_chunks']} chunks")
        c.note(f"decode={clean['decode']['rate']:.4f} wm={clean['wm_only']['rate']:.4f} msv1={clean['msv1']['rate']:.4f}")
        c.note(f"ber={clean['post_ecc_ber']:.2e} enroll={enroll_seconds:.1f}s verify={verify_seconds:.1f}s")
        assert clean["n_files"] >= 20
        assert clean["n_chunks"] >= 300
        assert clean["decode"]["rate"] >= 0.99
        assert clean["post_ecc_ber"] == 0.0
        assert clean["wm_only"]["rate"] >= 0.99
        assert clean["msv1"]["rate"] >= 0.99
        assert enroll_seconds + verify_seconds <= 300.0


def test_criterion_2_fpr_verified(clean_run, negative_screen):
    ctx, _, _, _, _ = clean_run
    negatives, (val_refs, ok_val, _), (test_refs, ok_test, _) = negative_screen
    with _Criterion(2, "tail FPR of the verified pipeline") as c:
        all_refs = list(val_refs) + list(test_refs)
        decode_flags = np.concatenate([ok_val, ok_test])
        n = len(all_refs)
        assert n >= 100000
        candidates = [ref for ref, ok in zip(all_refs, decode_flags) if ok]
        c.note(f"{n} windows, {len(candidates)} decoded candidates")
        verified_counts = {}
        for tier in (protocol.TIER_WM, protocol.TIER_MSV1):
            entry = evaluation.measure_fpr_verified(ctx, negatives, candidates, tier)
            verified_counts[tier] = entry["count"]
        c.note(f"verified wm={verified_counts[protocol.TIER_WM]} msv1={verified_counts[protocol.TIER_MSV1]}")
        bound = clopper_pearson_upper(0, n)
        c.note(f"CP upper bound {bound:.3e}")
        assert verified_counts[protocol.TIER_WM] == 0
        assert verified_counts[protocol.TIER_MSV1] == 0
        assert bound == pytest.approx(1 - 0.025 ** (1 / n), rel=1e-9)
        assert bound == pytest.approx(3.7e-5, rel=0.05)


def test_criterion_3_screening(clean_run, negative_screen):
    ctx, assets, _, _, _ = clean_run
    _, (val_refs, _, scores_val), (test_refs, _, scores_test) = negative_screen
    with _Criterion(3, "screening score AUC and calibrated FPR") as c:
        chunk_len = ctx.params.chunk_samples
        pos_scores = [
            watermark.consistency_score(
                a.watermarked.samples[i * chunk_len : (i + 1) * chunk_len], ctx.key, ctx.params.qim_spec
            )
            for a in assets
            for i in range(a.n_chunks)
        ]
        assert len(pos_scores) >= 5000
        assert len(scores_test) >= 5000
        auc = roc_auc(pos_scores, scores_test)
        threshold = calibrate_threshold(scores_val, 1e-3)
        fpr_test = measure_fpr(scores_test, threshold)
        c.note(f"AUC={auc:.4f} threshold={threshold:.4f} fpr_test={fpr_test:.2e} ({len(pos_scores)} pos / {len(scores_test)} neg)")
        assert auc >= 0.70
        assert measure_fpr(scores_val, threshold) <= 1e-3
        assert fpr_test <= 2e-3


@pytest.fixture(scope="module")
def robustness(clean_run):
    ctx, assets, _, _, _ = clean_run
    return evaluation.run_robustness_suite(ctx, assets, n_chunks=90, transform_seed=SEED + 7000)


def test_criterion_4_robustness_ordering(robustness):
    rows = {row["condition"]: row for row in robustness}
    with _Criterion(4, "robustness ladder at alpha 0.6, n=90 per condition") as c:
        wm = {name: rows[name]["wm_only"]["rate"] for name in rows}
        ms = {name: rows[name]["msv1"]["rate"] for name in rows}
        c.note(" ".join(f"{name}={wm[name]:.2f}/{ms[name]:.2f}" for name in rows))
        assert all(rows[name]["wm_only"]["n"] == 90 for name in rows)
        assert wm["clip_0.95"] >= 0.98 and ms["clip_0.95"] >= 0.98
        assert wm["resample_8k"] >= 0.90 and ms["resample_8k"] <= 0.05
        assert wm["resample_12k"] >= 0.90 and ms["resample_12k"] <= 0.05
        assert wm["noise_30db"] >= 0.90
        assert 0.6 <= wm["bandpass_300_3400"] <= 1.0
        assert 0.3 <= wm["noise_20db"] <= 0.9
        assert wm["noise_10db"] <= 0.2
        assert wm["reverb_rt60_0.3"] <= 0.2
        for name in ("noise_30db", "noise_20db", "noise_10db", "resample_8k", "resample_12k",
                     "bandpass_300_3400", "reverb_rt60_0.3"):
            assert ms[name] == 0.0, f"msv1 under {name}"
        # rate monotonicity across noise severities
        assert wm["noise_30db"] >= wm["noise_20db"] >= wm["noise_10db"]


def test_criterion_5_alpha_sweep(tmp_path_factory):
    with _Criterion(5, "quality-robustness sweep over alpha") as c:
        corpus = evaluation.synth_corpus(30, SEED + 2)
        root = tmp_path_factory.mktemp("sweep-repo")

        def store_factory(alpha):
            return FileStore(root / f"alpha-{alpha}")

        sweep = evaluation.run_alpha_sweep(store_factory, corpus, n_chunks=90, seed=SEED)
        snrs = [row["snr_db"] for row in sweep]
        rates = [row["wm_only_noise20"]["rate"] for row in sweep]
        c.note(" ".join(f"a={row['alpha']}: {row['snr_db']:.1f}dB/{r:.2f}" for row, r in zip(sweep, rates)))
        assert all(s1 > s2 for s1, s2 in zip(snrs, snrs[1:])), "SNR must strictly decrease in alpha"
        assert all(r1 <= r2 + 1e-12 for r1, r2 in zip(rates, rates[1:])), "noise-20 rate must be non-decreasing"
        assert 10.0 <= sweep[2]["snr_db"] <= 20.0  # alpha = 0.6
        assert rates[-1] - rates[0] >= 0.5


def test_criterion_6_splice(clean_run):
    ctx, assets, _, _, _ = clean_run
    with _Criterion(6, "boundary-aligned splice localisation") as c:
        out = evaluation.run_splice_suite(ctx, assets[0], assets[1], seed=SEED)
        c.note(
            f"insert={out['insert']['msv1']['iou']:.3f} remove={out['remove']['msv1']['iou']:.3f} "
            f"mixed={out['mixed']['msv1']['macro_f1']:.3f}"
        )
        for tier in (protocol.TIER_WM, protocol.TIER_MSV1):
            assert out["insert"][tier]["iou"] == 1.0
            assert out["remove"][tier]["iou"] == 1.0
            assert out["mixed"][tier]["macro_f1"] == 1.0


def test_criterion_7_crypto_properties(clean_run):
    import dataclasses

    from merklespeech import manifest as mf
    from merklespeech.manifest import IssuerKeypair, IssuerMeta, verify_manifest_signature
    from merklespeech.merkle import MerkleProof, merkle_build, merkle_verify

    ctx, assets, _, _, _ = clean_run
    with _Criterion(7, "commitment, ECC and signature properties") as c:
        # every enrolled leaf verifies against its stored proof
        manifest = ctx.store.get_manifest(cid=assets[0].manifest_cid)
        from merklespeech import fingerprint as fp_mod
        from merklespeech.merkle import leaf_digest

        chunk_len = ctx.params.chunk_samples
        for i in range(assets[0].n_chunks):
            window = assets[0].watermarked.samples[i * chunk_len : (i + 1) * chunk_len]
            fp = fp_mod.compute_fingerprint(window, manifest.params.fingerprint_spec)
            digest = leaf_digest(manifest.cid, i, fp.bits, manifest.params_hash)
            proof = ctx.store.get_proof(manifest.cid, i)
            assert merkle_verify(digest, proof, manifest.root)
        c.note(f"all {assets[0].n_chunks} leaves verify")

        # single-bit mutations of leaf, root and proof all fail
        rng = np.random.default_rng(SEED)
        leaves = [rng.bytes(32) for _ in range(9)]
        root, proofs = merkle_build(leaves)
        digest = leaves[4]
        flipped = bytearray(digest)
        flipped[0] ^= 1
        assert not merkle_verify(bytes(flipped), proofs[4], root)
        flipped_root = bytearray(root)
        flipped_root[31] ^= 0x80
        assert not merkle_verify(digest, proofs[4], bytes(flipped_root))
        sib, side = proofs[4].path[0]
        bad_sib = bytearray(sib)
        bad_sib[3] ^= 4
        assert not merkle_verify(digest, MerkleProof(4, ((bytes(bad_sib), side),) + proofs[4].path[1:]), root)

        # every manifest field mutation falsifies the signature
        mutations = [
            {"cid": bytes([manifest.cid[0] ^ 1]) + manifest.cid[1:]},
            {"root": bytes([manifest.root[0] ^ 1]) + manifest.root[1:]},
            {"sigma": bytes([manifest.sigma[0] ^ 1]) + manifest.sigma[1:]},
            {"params": manifest.params.with_alpha(0.9)},
            {"params_hash": bytes([manifest.params_hash[0] ^ 1]) + manifest.params_hash[1:]},
            {"issuer_meta": IssuerMeta("someone-else", manifest.issuer_meta.kid)},
        ]
        for change in mutations:
            mutated = dataclasses.replace(manifest, **change)
            try:
                ok = verify_manifest_signature(ctx.trust_store, mutated)
            except mf.KeyUnresolvedError:
                ok = False
            assert not ok, change
        c.note("leaf/root/proof/manifest mutations all rejected")

        # RS corrects every <= 4-byte error pattern over 1000 seeded trials
        rs_rng = np.random.default_rng(SEED + 5)
        for _ in range(1000):
            msg = rs_rng.bytes(32)
            word = bytearray(payload.rs_encode(msg))
            k = int(rs_rng.integers(1, 5))
            for p in rs_rng.choice(40, size=k, replace=False):
                word[p] ^= int(rs_rng.integers(1, 256))
            assert payload.rs_decode(bytes(word)) == msg
        c.note("RS corrected 1000/1000 seeded <=4-byte patterns")

        # random 40-byte words pass RS+CRC with frequency < 1e-4 over 1e6 trials
        trials = 1000000
        mass_rng = np.random.default_rng(SEED + 6)
        words = mass_rng.integers(0, 256, size=(trials, 40), dtype=np.uint8)
        syndromes = payload.syndromes_batch(words)
        nonzero = syndromes.any(axis=1)
        accepted = int((~nonzero).sum())  # immediate codewords
        for i in np.nonzero(nonzero)[0]:
            try:
                payload.unpack(payload.rs_decode(words[i].tobytes()))
                accepted += 1
            except payload.PayloadError:
                pass
        c.note(f"RS+CRC accepted {accepted}/1e6 random words")
        assert accepted / trials < 1e-4

        # Ed25519 RFC 8032 test vector 1
        seed_bytes = bytes.fromhex("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
        kp = IssuerKeypair.from_seed(seed_bytes, "rfc8032", 0)
        assert kp.public_bytes().hex() == "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a"
        assert kp.sign(b"").hex() == (
            "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155"
            "5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
        )
        c.note("RFC 8032 vector reproduced")


def test_criterion_8_qim_oracle():
    with _Criterion(8, "QIM quantiser and screening-score oracles") as c:
        rng = np.random.default_rng(SEED)
        x = rng.uniform(-50, 50, 10000)
        alpha = rng.uniform(0.05, 3.0, 10000)
        bits = rng.integers(0, 2, 10000)
        q = watermark.qim_quantize(x, alpha, bits)
        decoded = (watermark.qim_soft(q, alpha) <= 0).astype(int)
        np.testing.assert_array_equal(decoded, bits)
        c.note("decode(quantize) identity over 1e4 samples")

        fresh_bits = rng.integers(0, 2, (320, 1)).astype(float)
        fresh = watermark.qim_quantize(rng.uniform(-5, 5, (320, 16)), 0.6, fresh_bits)
        assert watermark._agreement_score(watermark.qim_soft(fresh, 0.6)) == 1.0
        c.note("score 1.0 on freshly quantised cells")

        # Monte Carlo oracle for uniform-random cells
        scores = []
        for _ in range(300):
            cells = rng.uniform(0, 0.6, (320, 16))
            scores.append(watermark._agreement_score(watermark.qim_soft(cells, 0.6)))
        mean_score = float(np.mean(scores))
        exact = sum(math.comb(16, b) * abs(2 * b - 16) for b in range(17)) / 2**16 / 16
        c.note(f"uniform-cell score {mean_score:.4f} (exact binomial {exact:.4f})")
        assert mean_score == pytest.approx(0.18, abs=0.03)
        assert mean_score == pytest.approx(exact, abs=0.005)


def test_criterion_9_service_equivalence(tmp_path_factory):
    with _Criterion(9, "HTTP repository equals local store byte-for-byte") as c:
        root = tmp_path_factory.mktemp("svc-repo")
        store = FileStore(root)
        ctx = evaluation.make_context(store, cid_seed=SEED + 9)
        corpus = evaluation.synth_corpus(2, SEED + 9)
        assets = evaluation.enroll_corpus(ctx, corpus)
        suspect = dsp.AudioBuffer(
            np.concatenate([assets[0].watermarked.samples, corpus[1].samples]),
            ctx.params.sample_rate,
        )

        server = make_server(store)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            host, port = server.server_address
            client = RepoClient(f"http://{host}:{port}")
            timelines = {}
            for name, repo in (("local", store), ("http", client)):
                tl = protocol.verify_streaming(
                    suspect, ctx.key, ctx.trust_store, repo,
                    tier=protocol.TIER_MSV1, qim_spec=ctx.params.qim_spec,
                )
                timelines[name] = tl.to_json()
            assert timelines["local"] == timelines["http"]
            c.note(f"{len(suspect.samples) // 32000} windows identical across transports")
        finally:
            server.shutdown()
            server.server_close()
