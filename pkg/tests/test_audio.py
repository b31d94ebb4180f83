import numpy as np
import pytest

from scipy import stats

from wavediff import audio
from wavediff.errors import FormatError


class TestWavIO:
    def test_silence_roundtrip_exact(self, tmp_path):
        path = tmp_path / "z.wav"
        audio.write_wav(audio.Waveform(np.zeros(100), 8000), path)
        back = audio.read_wav(path)
        np.testing.assert_array_equal(back.samples, np.zeros(100))
        assert back.sample_rate == 8000

    def test_full_scale_clamps(self, tmp_path):
        path = tmp_path / "c.wav"
        audio.write_wav(audio.Waveform(np.array([1.0, 1.5, -1.0, -2.0]), 8000), path)
        ints = (audio.read_wav(path).samples * 32768).astype(int)
        np.testing.assert_array_equal(ints, [32767, 32767, -32768, -32768])

    def test_random_roundtrip_quantization_bound(self, tmp_path, rng):
        path = tmp_path / "r.wav"
        samples = rng.uniform(-1, 1, 4096)
        audio.write_wav(audio.Waveform(samples, 16000), path)
        err = np.abs(audio.read_wav(path).samples - samples)
        assert err.max() <= 1.0 / 32768

    def test_rejects_stereo_and_garbage(self, tmp_path):
        import wave

        stereo = tmp_path / "s.wav"
        with wave.open(str(stereo), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(8000)
            wf.writeframes(b"\x00" * 32)
        with pytest.raises(FormatError, match="mono"):
            audio.read_wav(stereo)

        garbage = tmp_path / "g.wav"
        garbage.write_bytes(b"not a riff file at all")
        with pytest.raises(FormatError):
            audio.read_wav(garbage)


class TestMelSpectrogram:
    def test_frame_count_is_ceil(self):
        assert audio.mel_spectrogram(np.zeros(16000), 16000).values.shape == (80, 63)
        assert audio.mel_spectrogram(np.zeros(1024), 4000).values.shape == (80, 4)

    def test_silence_hits_log_floor(self):
        values = audio.mel_spectrogram(np.zeros(4096), 16000).values
        np.testing.assert_allclose(values, np.log(1e-5))

    def test_tone_dominates_its_band(self):
        sr, L = 4000, 8192
        fb = audio.mel_filterbank(sr)
        bin_hz = np.arange(513) * sr / 1024
        band = 30
        center = bin_hz[np.argmax(fb[band])]
        t = np.arange(L) / sr
        mel = audio.mel_spectrogram(0.5 * np.sin(2 * np.pi * center * t), sr).values
        for frame in range(mel.shape[1]):
            column = mel[:, frame]
            others = np.concatenate([column[: band - 1], column[band + 2 :]])
            assert column[band] > others.max()

    def test_energy_ratio_stable(self, rng):
        """Total spectral energy tracks time-domain energy across random inputs."""
        ratios = []
        for _ in range(5):
            x = rng.standard_normal(16000) * 0.2
            mag = audio.stft_magnitude(x)
            ratios.append(np.sum(mag**2) / np.sum(x**2))
        ratios = np.array(ratios)
        assert ratios.std() / ratios.mean() < 0.01

    def test_too_short_input_rejected(self):
        with pytest.raises(ValueError):
            audio.mel_spectrogram(np.zeros(100), 8000)

    def test_filterbank_geometry(self):
        fb = audio.mel_filterbank(16000)
        assert fb.shape == (80, 513)
        assert fb.max() <= 1.0
        assert np.all(fb.sum(axis=1) > 0.0)


class TestRandomCrop:
    def test_identity_when_equal(self, rng):
        x = rng.standard_normal(64)
        np.testing.assert_array_equal(audio.random_crop(x, 64, rng), x)

    def test_zero_pad_when_short(self, rng):
        x = np.ones(10)
        out = audio.random_crop(x, 16, rng)
        np.testing.assert_array_equal(out[:10], x)
        np.testing.assert_array_equal(out[10:], np.zeros(6))

    def test_offsets_cover_range_uniformly(self):
        """Chi-square test on crop offsets at the 0.01 level."""
        x = np.arange(40, dtype=float)
        rng = np.random.default_rng(123)
        n_offsets = 40 - 8 + 1
        counts = np.zeros(n_offsets)
        for _ in range(6600):
            counts[int(audio.random_crop(x, 8, rng)[0])] += 1
        _, p = stats.chisquare(counts)
        assert p > 0.01

    def test_rejects_nonpositive_crop(self, rng):
        with pytest.raises(ValueError):
            audio.random_crop(np.ones(8), 0, rng)


class TestSyntheticCorpus:
    def spec(self, **overrides):
        base = dict(
            num_utterances=20,
            length=512,
            sample_rate=4000,
            frequencies=audio.default_tone_frequencies(512, 4000, 10),
            seed=3,
        )
        base.update(overrides)
        return audio.CorpusSpec(**base)

    def test_regeneration_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        audio.make_synthetic_corpus(self.spec(), a)
        audio.make_synthetic_corpus(self.spec(), b)
        for name in sorted(p.name for p in a.iterdir()):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_manifest_labels_balanced(self, tmp_path):
        audio.make_synthetic_corpus(self.spec(), tmp_path)
        corpus = audio.load_corpus(tmp_path)
        assert len(corpus.waves) == 20
        np.testing.assert_array_equal(np.bincount(corpus.labels), np.full(10, 2))
        assert all(len(w) == 512 for w in corpus.waves)
        assert all(np.abs(w).max() <= 1.0 for w in corpus.waves)

    def test_single_tone_zero_noise_identical_up_to_amplitude(self, tmp_path):
        spec = self.spec(frequencies=(250.0,), num_utterances=3, noise_floor=0.0)
        audio.make_synthetic_corpus(spec, tmp_path)
        corpus = audio.load_corpus(tmp_path)
        # same frequency, random amplitude/phase: spectra peak at the same bin
        bins = [np.abs(np.fft.rfft(w))[1:].argmax() + 1 for w in corpus.waves]
        assert len(set(bins)) == 1

    def test_tones_land_on_fft_bins(self):
        freqs = audio.default_tone_frequencies(1024, 4000, 10)
        assert len(freqs) == 10
        for f in freqs:
            assert f < 2000.0
            bin_pos = f * 1024 / 4000
            assert bin_pos == pytest.approx(round(bin_pos), abs=1e-9)

    def test_frequency_validation(self):
        with pytest.raises(ValueError):
            audio.CorpusSpec(num_utterances=1, length=64, sample_rate=100, frequencies=(60.0,))


class TestMelCache:
    def test_roundtrip(self, tmp_path, rng):
        mels = {
            "a.wav": rng.standard_normal((80, 4)),
            "b.wav": rng.standard_normal((80, 7)).astype(np.float32),
        }
        path = tmp_path / "cache.dfwt"
        audio.save_mel_cache(path, mels)
        back = audio.load_mel_cache(path)
        assert set(back) == set(mels)
        for key, arr in mels.items():
            np.testing.assert_array_equal(back[key], arr)
            assert back[key].dtype == arr.dtype


def test_load_corpus_requires_entries(tmp_path):
    with pytest.raises(FormatError):
        audio.load_corpus(tmp_path)
