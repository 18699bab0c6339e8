import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmaczs import dsp
from lmaczs.dsp import AudioClip, Mask, SpecDomain
from lmaczs.errors import InvalidInputError

FS = 16000


def tone(freq, seconds=2.0, fs=FS, amp=0.5):
    t = np.arange(int(seconds * fs)) / fs
    return AudioClip(samples=amp * np.sin(2 * np.pi * freq * t), sample_rate=fs)


def dft_band_power(x, fs, f_lo, f_hi):
    """Independent oracle: Hann-windowed full-signal DFT power inside [f_lo, f_hi]."""
    w = np.hanning(len(x))
    spec = np.abs(np.fft.rfft(x * w)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / fs)
    sel = (freqs >= f_lo) & (freqs <= f_hi)
    return float(spec[sel].sum())


class TestStft:
    def test_zero_signal_gives_zero_magnitude(self):
        clip = AudioClip(samples=np.zeros(FS), sample_rate=FS)
        spec = dsp.stft(clip, frame_len=1024)
        assert np.all(spec.values == 0.0)

    def test_sine_peak_bin_matches_dft_oracle(self):
        # 440 Hz at fs=16000 with frame_len=1024 lands on bin round(440*1024/16000) = 28
        clip = tone(440.0)
        spec = dsp.stft(clip, frame_len=1024)
        mid_frame = spec.values[spec.values.shape[0] // 2]
        assert int(np.argmax(mid_frame)) == 28

        # oracle: direct DFT of one windowed frame
        frame = clip.samples[10 * 256 : 10 * 256 + 1024] * dsp._periodic_hann(1024)
        oracle = np.abs(np.array([np.sum(frame * np.exp(-2j * np.pi * k * np.arange(1024) / 1024)) for k in range(513)]))
        assert int(np.argmax(oracle)) == 28
        np.testing.assert_allclose(spec.values[10], oracle, rtol=1e-8, atol=1e-8)

    def test_shapes(self):
        spec = dsp.stft(tone(440.0), frame_len=1024, hop=256)
        assert spec.values.shape[1] == 513
        assert spec.values.shape[0] == 1 + int(np.ceil((2 * FS - 1024) / 256))
        assert spec.phase is not None and spec.phase.shape == spec.values.shape

    def test_short_clip_rejected(self):
        with pytest.raises(InvalidInputError):
            dsp.stft(AudioClip(samples=np.zeros(100), sample_rate=FS), frame_len=1024)

    def test_bad_hop_rejected(self):
        with pytest.raises(InvalidInputError):
            dsp.stft(tone(440.0), frame_len=1024, hop=2048)


class TestIstft:
    def test_zero_spectrogram_gives_silence(self):
        spec = dsp.stft(tone(440.0), frame_len=1024)
        spec.values[:] = 0.0
        out = dsp.istft(spec)
        assert np.allclose(out.samples, 0.0)

    def test_round_trip_interior(self):
        clip = tone(313.0)
        rec = dsp.istft(dsp.stft(clip, frame_len=1024))
        assert len(rec.samples) == len(clip.samples)
        a, b = clip.samples[1024:-1024], rec.samples[1024:-1024]
        assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-6

    def test_halved_magnitude_halves_rms(self):
        clip = tone(440.0)
        spec = dsp.stft(clip, frame_len=1024)
        spec.values *= 0.5
        out = dsp.istft(spec)
        assert out.rms() == pytest.approx(0.5 * clip.rms(), rel=1e-4)

    def test_missing_phase_rejected(self):
        spec = dsp.to_mel_log_power(dsp.stft(tone(440.0)), dsp.make_mel_filterbank(64, 1024, FS))
        with pytest.raises(InvalidInputError):
            dsp.istft(spec)


class TestMelLogPower:
    def test_zero_spectrogram_hits_log_floor(self):
        clip = AudioClip(samples=np.zeros(FS), sample_rate=FS)
        fb = dsp.make_mel_filterbank(64, 1024, FS)
        mel = dsp.to_mel_log_power(dsp.stft(clip, frame_len=1024), fb)
        assert np.allclose(mel.values, np.log(1e-10))

    def test_monotone_in_magnitude(self):
        fb = dsp.make_mel_filterbank(64, 1024, FS)
        small = dsp.stft(tone(440.0, amp=0.2), frame_len=1024)
        big = dsp.stft(tone(440.0, amp=0.7), frame_len=1024)
        assert np.all(
            dsp.to_mel_log_power(big, fb).values >= dsp.to_mel_log_power(small, fb).values
        )

    def test_tone_energy_lands_in_overlapping_bands(self):
        fb = dsp.make_mel_filterbank(64, 1024, FS)
        spec = dsp.stft(tone(440.0), frame_len=1024)
        mel = dsp.to_mel_log_power(spec, fb)

        # oracle: direct filterbank multiply on the squared magnitudes
        oracle = np.log(spec.values**2 @ fb.weights.T + 1e-10)
        np.testing.assert_allclose(mel.values, oracle, rtol=0, atol=1e-12)

        bands_for_bin28 = np.where(fb.weights[:, 28] > 0)[0]
        hot = int(np.argmax(mel.values[mel.values.shape[0] // 2]))
        assert hot in bands_for_bin28

    def test_shape_mismatch_rejected(self):
        fb = dsp.make_mel_filterbank(64, 512, FS)
        with pytest.raises(InvalidInputError):
            dsp.to_mel_log_power(dsp.stft(tone(440.0), frame_len=1024), fb)

    def test_permutation_equivariant_over_time(self):
        fb = dsp.make_mel_filterbank(64, 1024, FS)
        rng = np.random.default_rng(0)
        clip = AudioClip(samples=rng.standard_normal(FS) * 0.1, sample_rate=FS)
        spec = dsp.stft(clip, frame_len=1024)
        mel = dsp.to_mel_log_power(spec, fb)
        perm = rng.permutation(spec.values.shape[0])
        spec_p = dsp.Spectrogram(
            values=spec.values[perm], domain=spec.domain, phase=spec.phase[perm],
            frame_len=spec.frame_len, hop=spec.hop, sample_rate=spec.sample_rate,
            n_samples=spec.n_samples,
        )
        np.testing.assert_array_equal(dsp.to_mel_log_power(spec_p, fb).values, mel.values[perm])


class TestMelFilterbank:
    def test_rows_cover_spectrum(self):
        fb = dsp.make_mel_filterbank(64, 1024, FS)
        assert fb.weights.shape == (64, 513)
        assert np.all(np.any(fb.weights > 0, axis=1))

    def test_empty_row_rejected(self):
        with pytest.raises(InvalidInputError):
            dsp.MelFilterbank(weights=np.zeros((4, 16)), f_min=0, f_max=8000)


class TestApplyMask:
    def _spec(self):
        return dsp.stft(tone(440.0), frame_len=1024)

    def test_ones_mask_is_identity(self):
        spec = self._spec()
        out = dsp.apply_mask(spec, Mask(np.ones(spec.shape), spec.domain))
        np.testing.assert_array_equal(out.values, spec.values)
        np.testing.assert_array_equal(out.phase, spec.phase)

    def test_zeros_mask_silences(self):
        spec = self._spec()
        out = dsp.apply_mask(spec, Mask(np.zeros(spec.shape), spec.domain))
        assert np.all(out.values == 0.0)

    def test_half_mask_halves(self):
        spec = self._spec()
        out = dsp.apply_mask(spec, Mask(np.full(spec.shape, 0.5), spec.domain))
        np.testing.assert_allclose(out.values, 0.5 * spec.values)

    def test_shape_mismatch_rejected(self):
        spec = self._spec()
        with pytest.raises(InvalidInputError):
            dsp.apply_mask(spec, Mask(np.ones((3, 3)), spec.domain))

    def test_out_of_range_mask_rejected(self):
        with pytest.raises(InvalidInputError):
            Mask(np.full((3, 3), 1.5), SpecDomain.LINEAR_MAG_STFT)

    def test_linear_and_monotone(self):
        spec = self._spec()
        rng = np.random.default_rng(1)
        m1 = rng.uniform(0, 0.5, spec.shape)
        m2 = m1 + rng.uniform(0, 0.5, spec.shape)
        out1 = dsp.apply_mask(spec, Mask(m1, spec.domain)).values
        out2 = dsp.apply_mask(spec, Mask(m2, spec.domain)).values
        assert np.all(out2 >= out1)  # monotone in the mask for nonneg values
        doubled = dsp.Spectrogram(
            values=2 * spec.values, domain=spec.domain, phase=spec.phase,
            frame_len=spec.frame_len, hop=spec.hop, sample_rate=spec.sample_rate,
            n_samples=spec.n_samples,
        )
        np.testing.assert_allclose(
            dsp.apply_mask(doubled, Mask(m1, spec.domain)).values, 2 * out1
        )


class TestListenable:
    def test_ones_mask_round_trips(self):
        clip = tone(440.0)
        spec = dsp.stft(clip, frame_len=1024)
        out = dsp.listenable(spec, Mask(np.ones(spec.shape), spec.domain))
        a, b = clip.samples[1024:-1024], out.samples[1024:-1024]
        assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-6

    def test_zeros_mask_gives_silence(self):
        spec = dsp.stft(tone(440.0), frame_len=1024)
        out = dsp.listenable(spec, Mask(np.zeros(spec.shape), spec.domain))
        assert np.allclose(out.samples, 0.0)

    def test_band_stop_attenuates_band_by_40db(self):
        fs = FS
        t = np.arange(2 * fs) / fs
        x = 0.4 * np.sin(2 * np.pi * 500 * t) + 0.4 * np.sin(2 * np.pi * 3000 * t)
        clip = AudioClip(samples=x, sample_rate=fs)
        spec = dsp.stft(clip, frame_len=1024)

        freqs = np.fft.rfftfreq(1024, 1.0 / fs)
        mask = np.ones(spec.shape)
        mask[:, (freqs >= 2500) & (freqs <= 3500)] = 0.0
        out = dsp.listenable(spec, Mask(mask, spec.domain))

        p_in = dft_band_power(clip.samples, fs, 2900, 3100)
        p_out = dft_band_power(out.samples, fs, 2900, 3100)
        assert 10 * np.log10(p_in / max(p_out, 1e-30)) > 40.0


class TestMixAtSnr:
    def test_equal_power_zero_snr_gain_one(self):
        rng = np.random.default_rng(2)
        a = AudioClip(samples=rng.standard_normal(FS) * 0.1, sample_rate=FS)
        b = AudioClip(samples=rng.standard_normal(FS) * 0.1, sample_rate=FS)
        scale = np.sqrt(np.mean(a.samples**2) / np.mean(b.samples**2))
        b = AudioClip(samples=b.samples * scale, sample_rate=FS)
        out = dsp.mix_at_snr(a, b, 0.0)
        np.testing.assert_allclose(out.samples, a.samples + b.samples, atol=1e-12)

    def test_snr3_power_ratio(self):
        rng = np.random.default_rng(3)
        clean = AudioClip(samples=rng.standard_normal(FS) * 0.3, sample_rate=FS)
        noise = AudioClip(samples=rng.standard_normal(FS) * 0.05, sample_rate=FS)
        out = dsp.mix_at_snr(clean, noise, 3.0)
        scaled_noise = out.samples - clean.samples
        ratio = np.mean(clean.samples**2) / np.mean(scaled_noise**2)
        assert ratio == pytest.approx(10**0.3, rel=1e-6)  # 1.9953 power ratio at 3 dB

    def test_zero_power_rejected(self):
        silent = AudioClip(samples=np.zeros(FS), sample_rate=FS)
        noisy = AudioClip(samples=np.ones(FS) * 0.1, sample_rate=FS)
        with pytest.raises(InvalidInputError):
            dsp.mix_at_snr(silent, noisy, 3.0)
        with pytest.raises(InvalidInputError):
            dsp.mix_at_snr(noisy, silent, 3.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-10, 30))
    def test_measured_snr_within_hundredth_db(self, seed, snr_db):
        rng = np.random.default_rng(seed)
        clean = AudioClip(samples=rng.standard_normal(4000) * 0.2 + 0.01, sample_rate=FS)
        noise = AudioClip(samples=rng.standard_normal(4000) * 0.1 + 0.01, sample_rate=FS)
        out = dsp.mix_at_snr(clean, noise, snr_db)
        scaled_noise = out.samples - clean.samples
        measured = 10 * np.log10(np.mean(clean.samples**2) / np.mean(scaled_noise**2))
        assert abs(measured - snr_db) < 0.01


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2048, 40000))
def test_round_trip_property(seed, n):
    rng = np.random.default_rng(seed)
    clip = AudioClip(samples=rng.uniform(-1, 1, n), sample_rate=FS)
    rec = dsp.istft(dsp.stft(clip, frame_len=1024))
    a, b = clip.samples[1024:-1024], rec.samples[1024:-1024]
    if np.linalg.norm(a) > 0:
        assert np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-6


class TestWavIO:
    def test_round_trip(self, tmp_path):
        clip = tone(440.0, seconds=0.5)
        path = tmp_path / "t.wav"
        dsp.write_wav(path, clip)
        back = dsp.read_wav(path)
        assert back.sample_rate == FS
        assert np.max(np.abs(back.samples - clip.samples)) < 1e-4  # 16-bit quantization

    def test_rate_mismatch_resamples_with_warning(self, tmp_path, caplog):
        clip = tone(440.0, seconds=0.5, fs=44100)
        path = tmp_path / "t44.wav"
        dsp.write_wav(path, clip)
        with caplog.at_level("WARNING"):
            back = dsp.read_wav(path, expected_rate=16000)
        assert back.sample_rate == 16000
        assert len(back.samples) == int(0.5 * 16000)
        assert any("resampling" in r.message for r in caplog.records)

    def test_stereo_rejected(self, tmp_path):
        from scipy.io import wavfile

        path = tmp_path / "stereo.wav"
        wavfile.write(str(path), FS, np.zeros((100, 2), dtype=np.int16))
        with pytest.raises(InvalidInputError):
            dsp.read_wav(path)


class TestFixLength:
    def test_pad_and_crop(self):
        short = AudioClip(samples=np.ones(10), sample_rate=FS)
        assert len(dsp.fix_length(short, 20).samples) == 20
        assert np.all(dsp.fix_length(short, 20).samples[10:] == 0)
        lng = AudioClip(samples=np.arange(30, dtype=float), sample_rate=FS)
        out = dsp.fix_length(lng, 10)
        np.testing.assert_array_equal(out.samples, np.arange(10, 20, dtype=float))
