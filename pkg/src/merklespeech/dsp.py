"""Audio I/O, chunking, STFT analysis/synthesis, MFCC features, transforms.

All operations are pure functions of their inputs. Audio is mono float64 in
[-1, 1] at a committed sample rate (16 kHz by default); STFT framing places
frame i over samples [i*hop, i*hop + win) with no centre padding, so the
frame count is exactly 1 + floor((len - win) / hop).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import butter, fftconvolve, resample_poly, sosfilt

LOG_FLOOR = 1e-8

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_N_FFT = 1024
DEFAULT_HOP = 256
DEFAULT_WIN = 1024


class AudioError(ValueError):
    """Raised for malformed audio inputs (length, rate, channel count)."""


@dataclass
class AudioBuffer:
    """Mono waveform plus its sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioError("audio must be mono (1-D)")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class Chunk:
    """Fixed-length slice of an AudioBuffer, identified by its index."""

    index: int
    samples: np.ndarray


@dataclass
class Spectrogram:
    """Complex STFT frames (F x B) with the framing parameters that made them."""

    frames: np.ndarray
    n_fft: int = DEFAULT_N_FFT
    hop: int = DEFAULT_HOP
    win: int = DEFAULT_WIN
    window: str = "hann"
    n_samples: int = 0

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_bins(self) -> int:
        return self.frames.shape[1]


def frame_count(n_samples: int, win: int = DEFAULT_WIN, hop: int = DEFAULT_HOP) -> int:
    if n_samples < win:
        raise AudioError("audio too short")
    return 1 + (n_samples - win) // hop


def _hann(win: int) -> np.ndarray:
    # periodic Hann: exact 4x-overlap COLA at hop = win/4
    n = np.arange(win)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win)


_WINDOW_CACHE: dict[int, np.ndarray] = {}


def _window(win: int) -> np.ndarray:
    w = _WINDOW_CACHE.get(win)
    if w is None:
        w = _hann(win)
        _WINDOW_CACHE[win] = w
    return w


def chunk_audio(audio: AudioBuffer, length_s: float, stride_s: float) -> list[Chunk]:
    """Split into fixed-length chunks; a trailing partial chunk is dropped.

    Chunk k starts at sample round(k * stride_s * sr) and spans exactly
    round(length_s * sr) samples.
    """
    if length_s <= 0:
        raise AudioError("chunk length must be positive")
    if not 0 < stride_s <= length_s:
        raise AudioError("stride must satisfy 0 < S <= L")
    sr = audio.sample_rate
    chunk_len = round(length_s * sr)
    chunks = []
    k = 0
    while True:
        start = round(k * stride_s * sr)
        if start + chunk_len > len(audio.samples):
            break
        chunks.append(Chunk(index=k, samples=audio.samples[start : start + chunk_len].copy()))
        k += 1
    return chunks


def stft(
    samples: np.ndarray,
    n_fft: int = DEFAULT_N_FFT,
    hop: int = DEFAULT_HOP,
    win: int = DEFAULT_WIN,
) -> Spectrogram:
    """Hann-windowed STFT; frames cover [i*hop, i*hop + win), no padding."""
    x = np.ascontiguousarray(samples, dtype=np.float64)
    n = len(x)
    f = frame_count(n, win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[:: hop][:f] * _window(win)[None, :]
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return Spectrogram(frames=spec, n_fft=n_fft, hop=hop, win=win, n_samples=n)


def istft(spec: Spectrogram, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse; output trimmed or zero-padded to `length`.

    Division by the per-sample squared-window sum makes the round trip exact
    (up to float error) over the fully-overlapped region. The denominator is
    floored at 10% of the overlap constant so the few edge samples where the
    window vanishes attenuate instead of amplifying; without the floor the
    embedding projection loop is numerically unstable at chunk boundaries.
    """
    frames = np.fft.irfft(spec.frames, n=spec.n_fft, axis=1)[:, : spec.win]
    w = _window(spec.win)
    frames = frames * w[None, :]
    f = frames.shape[0]
    total = (f - 1) * spec.hop + spec.win
    out = np.zeros(total)
    wsum = np.zeros(total)
    w2 = w * w
    for i in range(f):
        start = i * spec.hop
        out[start : start + spec.win] += frames[i]
        wsum[start : start + spec.win] += w2
    cola = np.max(wsum)
    out /= np.maximum(wsum, 0.1 * cola)
    if length is None:
        length = spec.n_samples or total
    if total >= length:
        return out[:length]
    return np.pad(out, (0, length - total))


def log_magnitude(spec_frames: np.ndarray) -> np.ndarray:
    """Base-10 log magnitude with an additive floor to keep silence finite."""
    return np.log10(np.abs(spec_frames) + LOG_FLOOR)


_MEL_BANK_CACHE: dict[tuple, np.ndarray] = {}


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = 40,
    n_fft: int = DEFAULT_N_FFT,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    fmin: float = 0.0,
    fmax: float = 8000.0,
) -> np.ndarray:
    """Triangular mel filters (n_mels x bins) on the rfft bin grid, HTK scale."""
    key = (n_mels, n_fft, sample_rate, fmin, fmax)
    bank = _MEL_BANK_CACHE.get(key)
    if bank is not None:
        return bank
    n_bins = n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * (sample_rate / n_fft)
    corners = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    bank = np.zeros((n_mels, n_bins))
    for j in range(n_mels):
        lo, mid, hi = corners[j], corners[j + 1], corners[j + 2]
        up = (bin_hz - lo) / (mid - lo)
        down = (hi - bin_hz) / (hi - mid)
        bank[j] = np.maximum(0.0, np.minimum(up, down))
    _MEL_BANK_CACHE[key] = bank
    return bank


def mfcc_frames(
    samples: np.ndarray,
    n_mfcc: int = 13,
    n_mels: int = 40,
    n_fft: int = DEFAULT_N_FFT,
    hop: int = DEFAULT_HOP,
    win: int = DEFAULT_WIN,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> np.ndarray:
    """Per-frame MFCCs: power spectrum -> mel energies -> log -> DCT-II (ortho).

    Deterministic and polarity-invariant (magnitude based); an all-zero input
    yields the same log-floor vector in every frame.
    """
    from scipy.fft import dct

    spec = stft(samples, n_fft=n_fft, hop=hop, win=win)
    power = np.abs(spec.frames) ** 2
    bank = mel_filterbank(n_mels=n_mels, n_fft=n_fft, sample_rate=sample_rate)
    mel = power @ bank.T
    logmel = np.log(mel + LOG_FLOOR)
    return dct(logmel, type=2, axis=1, norm="ortho")[:, :n_mfcc]


def measure_snr(reference: np.ndarray, test: np.ndarray) -> float:
    """Time-domain SNR in dB: 10*log10(sum x^2 / sum (x-y)^2); inf if identical."""
    x = np.asarray(reference, dtype=np.float64)
    y = np.asarray(test, dtype=np.float64)
    if x.shape != y.shape:
        raise AudioError("length mismatch")
    noise = np.sum((x - y) ** 2)
    if noise == 0.0:
        return math.inf
    return 10.0 * math.log10(np.sum(x**2) / noise)


# ---------------------------------------------------------------------------
# Transform (attack) suite
# ---------------------------------------------------------------------------

TRANSFORM_KINDS = ("noise", "resample", "bandpass", "clip", "reverb", "identity")


class TransformError(ValueError):
    """Raised for unknown transform kinds or out-of-range parameters."""


@dataclass
class TransformSpec:
    """One parameterised signal transform; `seed` drives stochastic kinds."""

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def serialize(self) -> str:
        parts = [f"{k}={_fmt_param(v)}" for k, v in sorted(self.params.items())]
        if self.kind in ("noise", "reverb"):
            parts.append(f"seed={self.seed}")
        if not parts:
            return self.kind
        return f"{self.kind}:{','.join(parts)}"

    @classmethod
    def parse(cls, text: str) -> "TransformSpec":
        """Parse the CLI record `kind:param=value,...` (e.g. noise:snr_db=20,seed=7)."""
        head, _, rest = text.strip().partition(":")
        kind = head.strip()
        if kind not in TRANSFORM_KINDS:
            raise TransformError(f"unknown transform kind: {kind!r}")
        params: dict = {}
        seed = 0
        if rest:
            for item in rest.split(","):
                key, eq, value = item.partition("=")
                if not eq:
                    raise TransformError(f"malformed transform parameter: {item!r}")
                key = key.strip()
                value = value.strip()
                if key == "seed":
                    seed = int(value)
                else:
                    params[key] = float(value)
        return cls(kind=kind, params=params, seed=seed)


def _fmt_param(v) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def _kaiser_sinc(n_taps: int, cutoff: float, beta: float = 8.6) -> np.ndarray:
    # cutoff normalized to Nyquist of the working rate
    m = np.arange(n_taps) - (n_taps - 1) / 2
    h = cutoff * np.sinc(cutoff * m)
    return h * np.kaiser(n_taps, beta)


def _resample_roundtrip(x: np.ndarray, up: int, down: int) -> np.ndarray:
    """Rate round trip via polyphase windowed sinc, 64 taps per phase."""

    def one(sig, u, d):
        # resample_poly scales an array window by `up` itself
        n_taps = 64 * max(u, d) + 1
        h = _kaiser_sinc(n_taps, cutoff=1.0 / max(u, d))
        return resample_poly(sig, u, d, window=h)

    mid = one(x, up, down)
    back = one(mid, down, up)
    if len(back) >= len(x):
        return back[: len(x)]
    return np.pad(back, (0, len(x) - len(back)))


_BANDPASS_SOS_CACHE: dict[tuple, np.ndarray] = {}


def apply_transform(audio: AudioBuffer, spec: TransformSpec) -> AudioBuffer:
    """Apply one transform; output has the input's exact length and rate."""
    x = audio.samples
    sr = audio.sample_rate
    kind = spec.kind
    p = spec.params

    if kind == "identity":
        y = x.copy()
    elif kind == "clip":
        t = float(p.get("threshold", 0.95))
        if t <= 0:
            raise TransformError("clip threshold must be positive")
        y = np.clip(x, -t, t)
    elif kind == "noise":
        snr_db = float(p["snr_db"])
        rng = np.random.default_rng(spec.seed)
        w = rng.standard_normal(len(x))
        px = np.mean(x**2)
        if px == 0.0:
            y = x.copy()
        else:
            target_pn = px * 10.0 ** (-snr_db / 10.0)
            w *= math.sqrt(target_pn / np.mean(w**2))
            y = x + w
    elif kind == "resample":
        rate = int(p["rate_hz"])
        if rate == sr:
            y = x.copy()
        elif sr % rate == 0:
            y = _resample_roundtrip(x, 1, sr // rate)
        else:
            g = math.gcd(sr, rate)
            y = _resample_roundtrip(x, rate // g, sr // g)
    elif kind == "bandpass":
        low = float(p.get("low_hz", 300.0))
        high = float(p.get("high_hz", 3400.0))
        if not 0 < low < high < sr / 2:
            raise TransformError("bandpass edges out of range")
        key = (low, high, sr)
        sos = _BANDPASS_SOS_CACHE.get(key)
        if sos is None:
            # order-2 design -> 4 poles total: two cascaded biquads
            sos = butter(2, [low, high], btype="bandpass", fs=sr, output="sos")
            _BANDPASS_SOS_CACHE[key] = sos
        y = sosfilt(sos, x)
    elif kind == "reverb":
        rt60 = float(p.get("rt60_s", 0.3))
        if rt60 <= 0:
            raise TransformError("rt60 must be positive")
        rng = np.random.default_rng(spec.seed)
        ir = np.zeros(len(x)) if len(x) > 0 else np.zeros(1)
        ir_len = min(len(ir), max(1, round(1.5 * rt60 * sr)))
        ir = ir[:ir_len].copy()
        ir[0] = 1.0
        if ir_len > 1:
            t = np.arange(1, ir_len) / sr
            ir[1:] = rng.standard_normal(ir_len - 1) * np.exp(-6.9077 * t / rt60)
        peak = np.max(np.abs(ir))
        if peak > 0:
            ir /= peak
        y = fftconvolve(x, ir)[: len(x)]
    else:
        raise TransformError(f"unknown transform kind: {kind!r}")

    return AudioBuffer(samples=y, sample_rate=sr)


# ---------------------------------------------------------------------------
# WAV I/O (mono, PCM-16 or float-32)
# ---------------------------------------------------------------------------


def read_wav(path) -> AudioBuffer:
    sr, data = wavfile.read(path)
    if data.ndim != 1:
        raise AudioError(f"{path}: only mono WAV is supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = data.astype(np.float64)
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    else:
        raise AudioError(f"{path}: unsupported WAV sample format {data.dtype}")
    return AudioBuffer(samples=samples, sample_rate=int(sr))


def write_wav(path, audio: AudioBuffer, fmt: str = "float32") -> None:
    """Write mono WAV; samples are clamped to [-1, 1] on save."""
    clipped = np.clip(audio.samples, -1.0, 1.0)
    if fmt == "float32":
        wavfile.write(path, audio.sample_rate, clipped.astype(np.float32))
    elif fmt == "pcm16":
        wavfile.write(path, audio.sample_rate, np.round(clipped * 32767.0).astype(np.int16))
    else:
        raise AudioError(f"unsupported WAV format {fmt!r}")
