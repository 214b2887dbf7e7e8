import numpy as np
import pytest

from merklespeech import dsp
from merklespeech.dsp import AudioBuffer, TransformSpec


def make_audio(seconds, sr=16000, seed=0, scale=0.1):
    rng = np.random.default_rng(seed)
    return AudioBuffer(scale * rng.standard_normal(int(seconds * sr)), sr)


class TestChunking:
    def test_exact_division(self):
        chunks = dsp.chunk_audio(make_audio(10.0), 2.0, 2.0)
        assert len(chunks) == 5
        assert all(len(c.samples) == 32000 for c in chunks)

    def test_chunk_is_32000_samples_at_16k(self):
        chunks = dsp.chunk_audio(make_audio(2.0), 2.0, 2.0)
        assert len(chunks) == 1
        assert len(chunks[0].samples) == 32000

    def test_trailing_partial_dropped(self):
        chunks = dsp.chunk_audio(make_audio(7.0), 2.0, 2.0)
        assert len(chunks) == 3

    def test_shorter_than_one_chunk_gives_empty_list(self):
        assert dsp.chunk_audio(make_audio(1.5), 2.0, 2.0) == []

    def test_concatenation_recovers_prefix(self):
        audio = make_audio(7.3, seed=3)
        chunks = dsp.chunk_audio(audio, 2.0, 2.0)
        joined = np.concatenate([c.samples for c in chunks])
        np.testing.assert_array_equal(joined, audio.samples[: len(joined)])

    def test_overlapping_stride_start_positions(self):
        chunks = dsp.chunk_audio(make_audio(6.0), 2.0, 1.0)
        assert [c.index for c in chunks] == [0, 1, 2, 3, 4]

    def test_bad_stride_rejected(self):
        with pytest.raises(dsp.AudioError):
            dsp.chunk_audio(make_audio(4.0), 2.0, 2.5)
        with pytest.raises(dsp.AudioError):
            dsp.chunk_audio(make_audio(4.0), 2.0, 0.0)


class TestStft:
    def test_frame_count_formula(self):
        # 1 + floor((32000 - 1024) / 256), checked by counting emitted frames
        spec = dsp.stft(make_audio(2.0).samples)
        assert spec.n_frames == 1 + (32000 - 1024) // 256 == 122
        assert spec.n_bins == 513

    def test_zero_input_round_trips_to_zero(self):
        spec = dsp.stft(np.zeros(32000))
        assert np.all(spec.frames == 0)
        assert np.all(dsp.istft(spec, length=32000) == 0)

    def test_roundtrip_rms_below_1e6_over_overlapped_region(self):
        rng = np.random.default_rng(99)
        x = 0.3 * rng.standard_normal(32000)
        y = dsp.istft(dsp.stft(x), length=32000)
        core = slice(1024, 32000 - 1024)
        assert np.sqrt(np.mean((x[core] - y[core]) ** 2)) < 1e-6

    def test_roundtrip_many_lengths(self):
        rng = np.random.default_rng(5)
        for n in (1024, 2000, 32000, 50001):
            x = 0.2 * rng.standard_normal(n)
            y = dsp.istft(dsp.stft(x), length=n)
            assert len(y) == n
            core = slice(1024, max(1024, n - 1024))
            if core.stop > core.start:
                assert np.sqrt(np.mean((x[core] - y[core]) ** 2)) < 1e-6

    def test_too_short_raises(self):
        with pytest.raises(dsp.AudioError, match="too short"):
            dsp.stft(np.zeros(1023))


class TestMfcc:
    def test_shape(self, speech_chunk):
        feats = dsp.mfcc_frames(speech_chunk)
        assert feats.shape == (122, 13)

    def test_deterministic(self, speech_chunk):
        a = dsp.mfcc_frames(speech_chunk)
        b = dsp.mfcc_frames(speech_chunk.copy())
        np.testing.assert_array_equal(a, b)

    def test_all_zero_chunk_gives_identical_frames(self):
        feats = dsp.mfcc_frames(np.zeros(32000))
        np.testing.assert_array_equal(feats, np.tile(feats[0], (122, 1)))

    def test_polarity_invariance(self, speech_chunk):
        np.testing.assert_array_equal(dsp.mfcc_frames(speech_chunk), dsp.mfcc_frames(-speech_chunk))

    def test_mel_filterbank_covers_band(self):
        bank = dsp.mel_filterbank()
        assert bank.shape == (40, 513)
        assert np.all(bank >= 0)
        # every filter has support
        assert np.all(bank.sum(axis=1) > 0)


class TestTransforms:
    def test_identity_bit_identical(self, speech_chunk):
        out = dsp.apply_transform(AudioBuffer(speech_chunk), TransformSpec("identity"))
        np.testing.assert_array_equal(out.samples, speech_chunk)

    def test_clip_hard_limits(self):
        audio = make_audio(2.0, seed=8, scale=0.5)
        assert np.max(np.abs(audio.samples)) > 0.95
        out = dsp.apply_transform(audio, TransformSpec("clip", {"threshold": 0.95}))
        assert np.max(np.abs(out.samples)) == pytest.approx(0.95)

    def test_clip_below_threshold_is_identity(self, speech_chunk):
        out = dsp.apply_transform(AudioBuffer(speech_chunk), TransformSpec("clip", {"threshold": 0.95}))
        np.testing.assert_array_equal(out.samples, speech_chunk)

    def test_noise_hits_target_snr(self, speech_chunk):
        for snr in (10.0, 20.0, 30.0):
            out = dsp.apply_transform(AudioBuffer(speech_chunk), TransformSpec("noise", {"snr_db": snr}, seed=3))
            measured = dsp.measure_snr(speech_chunk, out.samples)
            assert measured == pytest.approx(snr, abs=0.1)

    def test_noise_seeded_reproducible(self, speech_chunk):
        spec = TransformSpec("noise", {"snr_db": 20}, seed=11)
        a = dsp.apply_transform(AudioBuffer(speech_chunk), spec)
        b = dsp.apply_transform(AudioBuffer(speech_chunk), spec)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_resample_roundtrip_preserves_inband_tone(self):
        sr = 16000
        t = np.arange(32000) / sr
        x = 0.3 * np.sin(2 * np.pi * 1000 * t)
        for rate in (8000, 12000):
            out = dsp.apply_transform(AudioBuffer(x, sr), TransformSpec("resample", {"rate_hz": rate}))
            assert len(out.samples) == len(x)
            core = slice(400, -400)
            assert dsp.measure_snr(x[core], out.samples[core]) > 40

    def test_resample_removes_out_of_band_tone(self):
        sr = 16000
        t = np.arange(32000) / sr
        x = 0.3 * np.sin(2 * np.pi * 6000 * t)  # above 4 kHz Nyquist of the 8 kHz leg
        out = dsp.apply_transform(AudioBuffer(x, sr), TransformSpec("resample", {"rate_hz": 8000}))
        assert np.sqrt(np.mean(out.samples[400:-400] ** 2)) < 0.02

    def test_bandpass_attenuates_out_of_band(self):
        sr = 16000
        t = np.arange(32000) / sr
        lo = 0.3 * np.sin(2 * np.pi * 100 * t)
        mid = 0.3 * np.sin(2 * np.pi * 1000 * t)
        spec = TransformSpec("bandpass", {"low_hz": 300, "high_hz": 3400})
        out_lo = dsp.apply_transform(AudioBuffer(lo, sr), spec).samples
        out_mid = dsp.apply_transform(AudioBuffer(mid, sr), spec).samples
        assert np.sqrt(np.mean(out_lo[4000:] ** 2)) < 0.03
        assert np.sqrt(np.mean(out_mid[4000:] ** 2)) > 0.2

    def test_reverb_length_preserving_and_seeded(self, speech_chunk):
        spec = TransformSpec("reverb", {"rt60_s": 0.3}, seed=5)
        a = dsp.apply_transform(AudioBuffer(speech_chunk), spec)
        b = dsp.apply_transform(AudioBuffer(speech_chunk), spec)
        assert len(a.samples) == len(speech_chunk)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, speech_chunk)

    def test_every_kind_preserves_length_and_rate(self, speech_chunk):
        specs = [
            TransformSpec("identity"),
            TransformSpec("clip", {"threshold": 0.95}),
            TransformSpec("noise", {"snr_db": 20}, seed=1),
            TransformSpec("resample", {"rate_hz": 8000}),
            TransformSpec("resample", {"rate_hz": 12000}),
            TransformSpec("bandpass", {"low_hz": 300, "high_hz": 3400}),
            TransformSpec("reverb", {"rt60_s": 0.3}, seed=2),
        ]
        audio = AudioBuffer(speech_chunk)
        for spec in specs:
            out = dsp.apply_transform(audio, spec)
            assert len(out.samples) == len(speech_chunk), spec.kind
            assert out.sample_rate == audio.sample_rate

    def test_unknown_kind_rejected(self, speech_chunk):
        with pytest.raises(dsp.TransformError):
            dsp.apply_transform(AudioBuffer(speech_chunk), TransformSpec("mp3"))


class TestTransformSpecText:
    def test_parse_noise_record(self):
        spec = TransformSpec.parse("noise:snr_db=20,seed=7")
        assert spec.kind == "noise"
        assert spec.params == {"snr_db": 20.0}
        assert spec.seed == 7

    def test_serialize_round_trip(self):
        for text in ("noise:snr_db=20,seed=7", "clip:threshold=0.95", "identity", "resample:rate_hz=8000"):
            spec = TransformSpec.parse(text)
            again = TransformSpec.parse(spec.serialize())
            assert again.kind == spec.kind
            assert again.params == spec.params
            assert again.seed == spec.seed

    def test_parse_rejects_unknown_kind(self):
        with pytest.raises(dsp.TransformError):
            TransformSpec.parse("speedup:factor=2")

    def test_parse_rejects_malformed_parameter(self):
        with pytest.raises(dsp.TransformError):
            TransformSpec.parse("noise:snr_db")


class TestSnr:
    def test_identical_is_inf(self, speech_chunk):
        assert dsp.measure_snr(speech_chunk, speech_chunk.copy()) == np.inf

    def test_definition(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(10000)
        n = rng.standard_normal(10000)
        n *= np.sqrt(np.sum(x**2) / 100.0 / np.sum(n**2))
        assert dsp.measure_snr(x, x + n) == pytest.approx(20.0, abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(dsp.AudioError):
            dsp.measure_snr(np.zeros(10), np.zeros(11))


class TestWavIO:
    def test_float32_round_trip(self, tmp_path, speech_chunk):
        path = tmp_path / "x.wav"
        dsp.write_wav(path, AudioBuffer(speech_chunk))
        back = dsp.read_wav(path)
        assert back.sample_rate == 16000
        np.testing.assert_allclose(back.samples, speech_chunk, atol=1e-7)

    def test_pcm16_round_trip(self, tmp_path, speech_chunk):
        path = tmp_path / "x.wav"
        dsp.write_wav(path, AudioBuffer(speech_chunk), fmt="pcm16")
        back = dsp.read_wav(path)
        np.testing.assert_allclose(back.samples, speech_chunk, atol=1.0 / 16384)

    def test_save_clamps(self, tmp_path):
        path = tmp_path / "x.wav"
        dsp.write_wav(path, AudioBuffer(np.array([2.0, -3.0, 0.5])))
        back = dsp.read_wav(path)
        assert np.max(np.abs(back.samples)) <= 1.0
