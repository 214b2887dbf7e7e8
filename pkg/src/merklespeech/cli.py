"""Command-line frontend.

Conventions:
  * every artifact is a file (WAV in/out, JSON reports and timelines);
  * `--repo DIR` (or MERKLESPEECH_REPO) selects a local store, `--repo-url`
    an HTTP repository; flags construct Params at enrollment while
    verification always trusts the manifest's committed params;
  * verification exit status does not depend on the verdicts: Unverified
    chunks are an answer, not a tool failure. Exit 1 means an operational
    error, exit 2 a usage error;
  * bench commands print their seed line so runs can be reproduced.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import click
import numpy as np

from . import __version__, dsp, evaluation, protocol, watermark
from .manifest import IssuerKeypair, Params, TrustStore
from .repository import FileStore, RepoClient, RepositoryError


class OperationalError(click.ClickException):
    exit_code = 1


def _repo_from_options(repo: str | None, repo_url: str | None, trust: TrustStore | None = None):
    if repo_url:
        return RepoClient(repo_url)
    repo = repo or os.environ.get("MERKLESPEECH_REPO")
    if not repo:
        raise click.UsageError("no repository: pass --repo/--repo-url or set MERKLESPEECH_REPO")
    return FileStore(repo, trust_store=trust)


def _load_keypair(sk_path: str, issuer_id: str, kid: int) -> IssuerKeypair:
    seed = bytes.fromhex(Path(sk_path).read_text().strip())
    return IssuerKeypair.from_seed(seed, issuer_id, kid)


@click.group()
@click.version_option(version=__version__)
def main():
    """Speech provenance: watermark enrollment, two-tier verification,
    repository service and the evaluation benches."""


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Directory for key material.")
@click.option("--issuer-id", default="issuer-1", show_default=True, help="Issuer identity string.")
@click.option("--kid", default=1, show_default=True, type=int, help="16-bit key identifier.")
def keygen(out_dir, issuer_id, kid):
    """Generate an Ed25519 issuer keypair and a trust-store line."""
    if not 0 <= kid < 1 << 16:
        raise click.UsageError("kid must fit in 16 bits")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kp = IssuerKeypair.generate(issuer_id, kid)
    (out / "issuer.sk").write_text(kp.seed_bytes().hex() + "\n")
    (out / "issuer.pk").write_text(kp.public_bytes().hex() + "\n")
    (out / "trust.txt").write_text(f"{issuer_id} {kid} {kp.public_bytes().hex()}\n")
    click.echo(f"wrote issuer.sk, issuer.pk, trust.txt to {out}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Input WAV (mono, 16 kHz).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Watermarked output WAV.")
@click.option("--sk", "sk_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Issuer secret key (hex seed file).")
@click.option("--repo", type=click.Path(file_okay=False), help="Local repository directory (default: MERKLESPEECH_REPO).")
@click.option("--repo-url", help="HTTP repository base URL (overrides --repo).")
@click.option("--issuer-id", default="issuer-1", show_default=True, help="Issuer identity recorded in the manifest.")
@click.option("--kid", default=1, show_default=True, type=int, help="Key identifier carried in payloads.")
@click.option("--alpha", default=0.6, show_default=True, type=float, help="QIM step size.")
@click.option("--wm-seed", default=watermark.DEFAULT_KEY_SEED, show_default=True, type=int, help="Secret watermark key seed.")
@click.option("--wav-format", default="float32", show_default=True, type=click.Choice(["float32", "pcm16"]), help="Output sample format.")
def enroll(in_path, out_path, sk_path, repo, repo_url, issuer_id, kid, alpha, wm_seed, wav_format):
    """Embed payloads, commit fingerprints and publish the signed manifest."""
    audio = dsp.read_wav(in_path)
    params = Params(kid=kid).with_alpha(alpha)
    keypair = _load_keypair(sk_path, issuer_id, kid)
    store = _repo_from_options(repo, repo_url)
    try:
        result = protocol.enroll(audio, params, keypair, watermark.WatermarkKey(wm_seed), store)
    except (protocol.ProtocolError, RepositoryError) as exc:
        raise OperationalError(str(exc))
    dsp.write_wav(out_path, result.audio, fmt=wav_format)
    for warning in result.warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(f"cid: {result.manifest.cid.hex()}")
    click.echo(f"root: {result.manifest.root.hex()}")
    click.echo(f"chunks: {len(dsp.chunk_audio(audio, params.chunk_seconds, params.stride_seconds))}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Suspect WAV.")
@click.option("--repo", type=click.Path(file_okay=False), help="Local repository directory (default: MERKLESPEECH_REPO).")
@click.option("--repo-url", help="HTTP repository base URL (overrides --repo).")
@click.option("--trust", "trust_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Pinned-keys trust store file.")
@click.option("--tier", default="msv1", show_default=True, type=click.Choice(["wm", "msv1"]), help="Assurance tier.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Timeline JSON output.")
@click.option("--wm-seed", default=watermark.DEFAULT_KEY_SEED, show_default=True, type=int, help="Secret watermark key seed.")
@click.option("--chunk-seconds", default=2.0, show_default=True, type=float, help="Window length L.")
@click.option("--stride-seconds", default=2.0, show_default=True, type=float, help="Window stride S.")
@click.option("--alpha", default=0.6, show_default=True, type=float, help="QIM step used by the decoder.")
@click.option("--jobs", default=None, type=int, help="Worker threads (default: CPU count).")
def verify(in_path, repo, repo_url, trust_path, tier, out_path, wm_seed, chunk_seconds, stride_seconds, alpha, jobs):
    """Verify suspect audio into a splice-aware timeline JSON."""
    audio = dsp.read_wav(in_path)
    trust = TrustStore.load(trust_path)
    store = _repo_from_options(repo, repo_url, trust=None)
    tier_name = protocol.TIER_WM if tier == "wm" else protocol.TIER_MSV1
    try:
        timeline = protocol.verify_streaming(
            audio,
            watermark.WatermarkKey(wm_seed),
            trust,
            store,
            tier=tier_name,
            chunk_seconds=chunk_seconds,
            stride_seconds=stride_seconds,
            qim_spec=watermark.QimSpec(alpha=alpha),
            jobs=jobs or os.cpu_count(),
        )
    except RepositoryError as exc:
        raise OperationalError(f"repository error: {exc}")
    Path(out_path).write_text(timeline.to_json() + "\n")
    counts = ", ".join(f"{k}={v}" for k, v in sorted(timeline.summary.items()))
    click.echo(f"windows: {len(timeline.records)} ({counts})")
    click.echo(f"verified rate: {timeline.verified_rate():.4f}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Input WAV.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Transformed output WAV.")
@click.option("--transform", "spec_text", required=True, help="Transform record, e.g. noise:snr_db=20,seed=7")
@click.option("--wav-format", default="float32", show_default=True, type=click.Choice(["float32", "pcm16"]), help="Output sample format.")
def attack(in_path, out_path, spec_text, wav_format):
    """Apply one signal transform from the robustness suite."""
    try:
        spec = dsp.TransformSpec.parse(spec_text)
    except dsp.TransformError as exc:
        raise click.UsageError(str(exc))
    audio = dsp.read_wav(in_path)
    out = dsp.apply_transform(audio, spec)
    dsp.write_wav(out_path, out, fmt=wav_format)
    click.echo(f"applied {spec.serialize()} to {in_path}")


@main.command()
@click.option("--mode", required=True, type=click.Choice(["insert", "remove", "mixed"]), help="Edit scenario.")
@click.option("--in-a", "in_a", required=True, type=click.Path(exists=True, dir_okay=False), help="Primary WAV (enrolled).")
@click.option("--in-b", "in_b", type=click.Path(exists=True, dir_okay=False), help="Second WAV (mixed mode / insert donor).")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Edited output WAV.")
@click.option("--ground-truth", "gt_path", type=click.Path(dir_okay=False), help="Optional chunk-level truth JSON.")
@click.option("--at-chunk", default=None, type=int, help="Boundary chunk index (default: middle).")
@click.option("--chunk-seconds", default=2.0, show_default=True, type=float, help="Chunk length L.")
@click.option("--seed", default=123, show_default=True, type=int, help="Seed for generated donor audio.")
def splice(mode, in_a, in_b, out_path, gt_path, at_chunk, chunk_seconds, seed):
    """Create a boundary-aligned spliced file plus its tamper ground truth."""
    a = dsp.read_wav(in_a)
    chunk_len = round(chunk_seconds * a.sample_rate)
    n_a = len(a.samples) // chunk_len
    if n_a < 2:
        raise OperationalError("primary input shorter than two chunks")
    cut = at_chunk if at_chunk is not None else n_a // 2
    if not 0 <= cut < n_a:
        raise click.UsageError("--at-chunk out of range")

    if mode == "insert":
        if in_b:
            donor = dsp.read_wav(in_b).samples[:chunk_len]
            if len(donor) < chunk_len:
                raise OperationalError("--in-b shorter than one chunk")
        else:
            donor = evaluation.synth_speech(seed, duration_s=chunk_seconds).samples[:chunk_len]
        edited = np.concatenate([a.samples[: cut * chunk_len], donor, a.samples[cut * chunk_len :]])
        truth = [False] * cut + [True] + [False] * (n_a - cut)
    elif mode == "remove":
        edited = a.samples.copy()
        edited[cut * chunk_len : (cut + 1) * chunk_len] = 0.0
        truth = [i == cut for i in range(n_a)]
    else:
        if not in_b:
            raise click.UsageError("--in-b is required for mixed mode")
        b = dsp.read_wav(in_b)
        n_b = len(b.samples) // chunk_len
        n = min(n_a, n_b)
        if n < 2:
            raise OperationalError("need at least two full chunks in both inputs")
        pieces, truth = [], []
        for i in range(n):
            src = a if i % 2 == 0 else b
            pieces.append(src.samples[i * chunk_len : (i + 1) * chunk_len])
            truth.append("A" if i % 2 == 0 else "B")
        edited = np.concatenate(pieces)

    dsp.write_wav(out_path, dsp.AudioBuffer(edited, a.sample_rate))
    if gt_path:
        Path(gt_path).write_text(json.dumps({"mode": mode, "chunk_seconds": chunk_seconds, "truth": truth}) + "\n")
    click.echo(f"{mode} splice written to {out_path} ({len(truth)} chunks)")


@main.command()
@click.option("--repo", required=True, type=click.Path(file_okay=False), help="Repository directory to serve.")
@click.option("--addr", default="127.0.0.1:8080", show_default=True, help="host:port to bind.")
@click.option("--trust", "trust_path", type=click.Path(exists=True, dir_okay=False), help="Trust store; PUTs are then signature-checked.")
def serve(repo, addr, trust_path):
    """Serve manifests and proofs over HTTP."""
    from .repository import serve as serve_forever

    host, _, port = addr.partition(":")
    trust = TrustStore.load(trust_path) if trust_path else None
    store = FileStore(repo, trust_store=trust)
    click.echo(f"serving {repo} on http://{host}:{port}")
    try:
        serve_forever(store, host, int(port))
    except KeyboardInterrupt:
        pass


def _bench_prelude(seed: int, jobs: int | None) -> int:
    click.echo(f"seed: {seed}")
    return jobs or os.cpu_count() or 1


def _load_corpus_dir(corpus_dir: str) -> list[dsp.AudioBuffer]:
    paths = sorted(Path(corpus_dir).glob("*.wav"))
    if not paths:
        raise OperationalError(f"no .wav files in {corpus_dir}")
    return [dsp.read_wav(p) for p in paths]


@main.command("bench-fpr")
@click.option("--windows", default=100000, show_default=True, type=int, help="Negative windows (val+test).")
@click.option("--seed", default=123, show_default=True, type=int, help="Master seed.")
@click.option("--alpha", default=0.6, show_default=True, type=float, help="QIM step for enrollment.")
@click.option("--enroll-files", default=30, show_default=True, type=int, help="Positive files to enroll.")
@click.option("--negative-files", default=40, show_default=True, type=int, help="Files in the negative corpus.")
@click.option("--corpus-dir", type=click.Path(file_okay=False, exists=True), help="Real 16 kHz WAV corpus instead of synthetic.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Results JSON path.")
@click.option("--jobs", default=None, type=int, help="Worker threads (default: CPU count).")
def bench_fpr(windows, seed, alpha, enroll_files, negative_files, corpus_dir, out_path, jobs):
    """Screening AUC, calibrated FPR_score and end-to-end FPR_verified."""
    jobs = _bench_prelude(seed, jobs)
    if corpus_dir:
        files = _load_corpus_dir(corpus_dir)
        positives, negatives = files[:enroll_files], files[enroll_files:]
        if not negatives:
            raise OperationalError("corpus too small to hold out negatives")
    else:
        positives = evaluation.synth_corpus(enroll_files, seed)
        negatives = evaluation.synth_corpus(negative_files, seed + 1)
    import tempfile

    with tempfile.TemporaryDirectory(prefix="msv1-bench-repo-") as tmp:
        ctx = evaluation.make_context(FileStore(tmp), alpha=alpha, cid_seed=seed)
        assets = evaluation.enroll_corpus(ctx, positives)
        clean = evaluation.run_clean_bench(ctx, assets)
        fpr = evaluation.run_fpr_bench(ctx, assets, negatives, n_windows=windows, seed=seed, jobs=jobs)
    report = evaluation.make_report({"clean": clean, "fpr": fpr}, seed, {"bench": "fpr", "alpha": alpha})
    evaluation.emit_report(report, out_path)
    click.echo(f"results: {out_path}")


@main.command("bench-robust")
@click.option("--seed", default=123, show_default=True, type=int, help="Master seed.")
@click.option("--alpha", default=0.6, show_default=True, type=float, help="QIM step for enrollment.")
@click.option("--enroll-files", default=30, show_default=True, type=int, help="Files to enroll.")
@click.option("--chunks", default=90, show_default=True, type=int, help="Positive chunks per condition.")
@click.option("--conditions", default=None, help="Comma-separated condition names (default: all eight).")
@click.option("--corpus-dir", type=click.Path(file_okay=False, exists=True), help="Real 16 kHz WAV corpus instead of synthetic.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Results JSON path.")
@click.option("--jobs", default=None, type=int, help="Worker threads (default: CPU count).")
def bench_robust(seed, alpha, enroll_files, chunks, conditions, corpus_dir, out_path, jobs):
    """Verified rates per transform condition, both tiers, with Wilson CIs."""
    _bench_prelude(seed, jobs)
    selected = evaluation.ROBUSTNESS_CONDITIONS
    if conditions:
        wanted = {c.strip() for c in conditions.split(",")}
        selected = tuple(c for c in evaluation.ROBUSTNESS_CONDITIONS if c[0] in wanted)
        missing = wanted - {c[0] for c in selected}
        if missing:
            raise click.UsageError(f"unknown conditions: {', '.join(sorted(missing))}")
    corpus = _load_corpus_dir(corpus_dir)[:enroll_files] if corpus_dir else evaluation.synth_corpus(enroll_files, seed)
    import tempfile

    with tempfile.TemporaryDirectory(prefix="msv1-bench-repo-") as tmp:
        ctx = evaluation.make_context(FileStore(tmp), alpha=alpha, cid_seed=seed)
        assets = evaluation.enroll_corpus(ctx, corpus)
        clean = evaluation.run_clean_bench(ctx, assets)
        robustness = evaluation.run_robustness_suite(ctx, assets, conditions=selected, n_chunks=chunks, transform_seed=seed + 7000)
    report = evaluation.make_report({"clean": clean, "robustness": robustness}, seed, {"bench": "robust", "alpha": alpha})
    evaluation.emit_report(report, out_path)
    click.echo(f"results: {out_path}")


@main.command("bench-sweep")
@click.option("--seed", default=123, show_default=True, type=int, help="Master seed.")
@click.option("--enroll-files", default=30, show_default=True, type=int, help="Files enrolled per alpha.")
@click.option("--chunks", default=90, show_default=True, type=int, help="Chunks scored per alpha.")
@click.option("--corpus-dir", type=click.Path(file_okay=False, exists=True), help="Real 16 kHz WAV corpus instead of synthetic.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False), help="Results JSON path.")
@click.option("--jobs", default=None, type=int, help="Worker threads (default: CPU count).")
def bench_sweep(seed, enroll_files, chunks, corpus_dir, out_path, jobs):
    """Quality-robustness trade-off: SNR and noise-20 rate per QIM step."""
    _bench_prelude(seed, jobs)
    corpus = _load_corpus_dir(corpus_dir)[:enroll_files] if corpus_dir else evaluation.synth_corpus(enroll_files, seed)
    import tempfile

    with tempfile.TemporaryDirectory(prefix="msv1-bench-repo-") as tmp:
        tmp_path = Path(tmp)

        def store_factory(alpha):
            d = tmp_path / f"alpha-{alpha}"
            return FileStore(d)

        sweep = evaluation.run_alpha_sweep(store_factory, corpus, n_chunks=chunks, seed=seed)
    report = evaluation.make_report({"alpha_sweep": sweep}, seed, {"bench": "sweep"})
    evaluation.emit_report(report, out_path)
    click.echo(f"results: {out_path}")


@main.command("synth-corpus")
@click.option("--n", "n_files", default=20, show_default=True, type=int, help="Number of files.")
@click.option("--seed", default=123, show_default=True, type=int, help="Corpus seed.")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False), help="Output directory for WAV files.")
@click.option("--wav-format", default="float32", show_default=True, type=click.Choice(["float32", "pcm16"]), help="Sample format.")
def synth_corpus_cmd(n_files, seed, out_dir, wav_format):
    """Generate the deterministic speech-like evaluation corpus."""
    click.echo(f"seed: {seed}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, buf in enumerate(evaluation.synth_corpus(n_files, seed)):
        dsp.write_wav(out / f"synth-{seed}-{i:04d}.wav", buf, fmt=wav_format)
    click.echo(f"wrote {n_files} files to {out}")


if __name__ == "__main__":
    main()
