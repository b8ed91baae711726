import numpy as np
import pytest

from emgleam.emanator import ChannelModel, IqRecording, capture, edge_reference, emanate
from emgleam.errors import NoSyncError, ValidationError
from emgleam.receiver import (
    Emage,
    ReconParams,
    am_demod,
    estimate_frame_rate,
    measure_snr,
    reconstruct,
)
from emgleam.raster import ScreenRaster

from helpers import LAB_BW, LAB_FS, LAB_LEAK, LAB_TIMING, LAB_H, LAB_W, ncc, random_grid_raster


def lab_capture(raster, frames=1, snr_db=None, seed=0, fs=LAB_FS):
    leak = emanate(raster, LAB_TIMING, LAB_LEAK, frames=frames)
    return capture(leak, ChannelModel(target_snr_db=snr_db, rng_seed=seed),
                   sample_rate_hz=fs, bandwidth_hz=LAB_BW if fs == LAB_FS else 12.5e6)


def lab_params(**kw):
    return ReconParams(LAB_TIMING.x_t, LAB_TIMING.y_t, LAB_TIMING.f_r, **kw)


def fake_recording(samples, fs=LAB_FS):
    return IqRecording(fs, 0.0, np.asarray(samples, dtype=np.complex64), 1, LAB_TIMING, 0)


class TestAmDemod:
    def test_pythagorean(self):
        rec = fake_recording(np.full(64, 3.0 + 4.0j))
        assert np.allclose(am_demod(rec), 5.0, atol=1e-6)

    def test_pure_tone_envelope_flat(self):
        n = np.arange(4096)
        tone = 0.7 * np.exp(2j * np.pi * 0.123 * n)
        mag = am_demod(fake_recording(tone))
        assert np.max(np.abs(mag - 0.7)) < 1e-6

    def test_zero_in_zero_out(self):
        mag = am_demod(fake_recording(np.zeros(16)))
        assert not mag.any()

    def test_empty_rejected(self):
        with pytest.raises(ValidationError, match="empty"):
            am_demod(fake_recording(np.zeros(0)))

    def test_lowpass_smooths(self):
        rng = np.random.default_rng(0)
        noisy = rng.standard_normal(8192) + 1j * rng.standard_normal(8192)
        raw = am_demod(fake_recording(noisy))
        smooth = am_demod(fake_recording(noisy), lowpass_cutoff=0.05)
        assert smooth.std() < 0.5 * raw.std()


class TestEstimateFrameRate:
    def test_noiseless_precision(self):
        rec = lab_capture(random_grid_raster(0), frames=3)
        est = estimate_frame_rate(am_demod(rec), LAB_FS, 60.0, 1000.0)
        assert abs(est - 60.0) / 60.0 < 1e-6

    def test_30db_within_6mHz(self):
        rec = lab_capture(random_grid_raster(1), frames=3, snr_db=30.0, seed=5)
        est = estimate_frame_rate(am_demod(rec), LAB_FS, 60.0, 1000.0)
        assert abs(est - 60.0) <= 0.006

    def test_20db_trials(self):
        hits = 0
        for seed in range(10):
            rec = lab_capture(random_grid_raster(2), frames=3, snr_db=20.0, seed=seed)
            est = estimate_frame_rate(am_demod(rec), LAB_FS, 60.0, 1000.0)
            hits += abs(est - 60.0) / 60.0 <= 1e-4
        assert hits == 10

    def test_white_noise_has_no_sync(self):
        rng = np.random.default_rng(7)
        mag = np.abs(rng.standard_normal(200_000) + 1j * rng.standard_normal(200_000))
        with pytest.raises(NoSyncError):
            estimate_frame_rate(mag, LAB_FS, 60.0, 1000.0)

    def test_short_span_rejected(self):
        with pytest.raises(ValidationError, match="2 frames"):
            estimate_frame_rate(np.ones(1000), LAB_FS, 60.0, 1000.0)


class TestReconstruct:
    def test_single_column_edges_at_expected_positions(self):
        pix = np.zeros((LAB_H, LAB_W), dtype=np.float32)
        pix[:, 40:45] = 1.0
        rec = lab_capture(ScreenRaster(LAB_W, LAB_H, pix, []))
        emage = reconstruct(rec, lab_params())
        cols = emage.pixels[: LAB_H - 2].mean(axis=0)
        top2 = sorted(np.argsort(cols)[-2:])
        assert abs(top2[0] - 40) <= 1 and abs(top2[1] - 45) <= 1

    def test_round_trip_ncc(self):
        raster = random_grid_raster(3)
        rec = lab_capture(raster, fs=25e6)
        emage = reconstruct(rec, lab_params())
        ref = edge_reference(raster, LAB_TIMING, LAB_LEAK, LAB_TIMING.x_t, LAB_TIMING.y_t)
        assert ncc(emage.pixels, ref) >= 0.99

    def test_normalization_range(self):
        rec = lab_capture(random_grid_raster(4), snr_db=20.0, seed=1)
        emage = reconstruct(rec, lab_params())
        assert float(emage.pixels.min()) == 0.0
        assert float(emage.pixels.max()) == 1.0

    def test_constant_recording_maps_to_half(self):
        rec = fake_recording(np.full(int(LAB_FS / 60) + 1, 2.0 + 0j))
        emage = reconstruct(rec, lab_params())
        assert np.all(emage.pixels == 0.5)

    def test_frame_rate_error_shears_predictably(self):
        pix = np.zeros((LAB_H, LAB_W), dtype=np.float32)
        pix[:, 50:54] = 1.0
        rec = lab_capture(ScreenRaster(LAB_W, LAB_H, pix, []))
        eps = 1e-3
        emage = reconstruct(rec, ReconParams(LAB_TIMING.x_t, LAB_TIMING.y_t,
                                             LAB_TIMING.f_r * (1 + eps)))
        # content drifts by width_px * eps columns per reconstructed row;
        # track the shift of each row profile against an early row
        ref_row = emage.pixels[4]
        rows = np.arange(4, LAB_H - 4, 4)
        shifts = []
        for r in rows:
            c = np.correlate(emage.pixels[r], ref_row, "full")
            shifts.append(int(np.argmax(c)) - (len(ref_row) - 1))
        drift = np.polyfit(rows, shifts, 1)[0]
        expected = LAB_TIMING.x_t * eps / (1 + eps)
        assert drift == pytest.approx(expected, abs=0.02)

    def test_too_short_rejected(self):
        rec = fake_recording(np.ones(1000))
        with pytest.raises(ValidationError, match="less than one"):
            reconstruct(rec, lab_params())

    def test_frame_rate_must_match_sidecar(self):
        rec = lab_capture(random_grid_raster(5))
        with pytest.raises(ValidationError, match="deviates"):
            reconstruct(rec, ReconParams(LAB_TIMING.x_t, LAB_TIMING.y_t, 70.0))

    def test_averaging_counts_frames(self):
        rec = lab_capture(random_grid_raster(6), frames=4)
        emage = reconstruct(rec, lab_params())
        assert emage.frames_averaged == 4

    def test_emage_io_round_trip(self, tmp_path):
        rec = lab_capture(random_grid_raster(7), snr_db=25.0, seed=2)
        emage = reconstruct(rec, lab_params())
        p = tmp_path / "e.pgm"
        emage.save(p)
        again = Emage.load(p)
        assert again.frames_averaged == emage.frames_averaged
        assert again.source_meta["params"] == emage.source_meta["params"]
        assert np.array_equal(
            np.rint(emage.pixels * 255), np.rint(again.pixels * 255)
        )


class TestAveragingLaw:
    def test_background_std_scales_with_sqrt_frames(self):
        # 25 dB: strong enough that the min-max normalization scale is set
        # by the signal, not by noise extremes, for every N
        raster = random_grid_raster(8)
        leak = emanate(raster, LAB_TIMING, LAB_LEAK, frames=8)
        rec8 = capture(leak, ChannelModel(target_snr_db=25.0, rng_seed=3),
                       LAB_FS, bandwidth_hz=LAB_BW)
        frame_len = LAB_FS / LAB_TIMING.f_r

        def bg_std(n):
            rec = IqRecording(LAB_FS, rec8.center_freq_hz,
                              rec8.samples[: int(round(n * frame_len))],
                              n, rec8.timing, rec8.seed)
            emage = reconstruct(rec, lab_params())
            e = emage.pixels.mean(axis=1)
            sums = np.convolve(e, np.ones(4), mode="valid")
            j = int(np.argmin(sums))  # darkest band = blanking rows
            return float(emage.pixels[j : j + 4].std())

        base = bg_std(1)
        for n in (2, 4, 8):
            ratio = bg_std(n) / base
            assert ratio == pytest.approx(n ** -0.5, rel=0.2)


class TestMeasureSnr:
    def test_injected_tone_20db_above_floor(self):
        rng = np.random.default_rng(11)
        n = 500_000
        fs = LAB_FS
        sigma = 0.1
        nperseg = round(fs / 25e3)
        # hann-window peak bin of a bin-centered tone vs white-noise density:
        # peak = A^2 (sum w)^2 / (fs sum w^2); floor = sigma^2 / fs
        w = np.hanning(nperseg)
        target = 10 ** (20 / 10)
        amp = np.sqrt(target * sigma**2 * (w @ w) / (w.sum() ** 2))
        k = 40  # bin-centered frequency
        tone = amp * np.exp(2j * np.pi * (k / nperseg) * np.arange(n))
        noise = sigma / np.sqrt(2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        rec = fake_recording(tone + noise, fs)
        assert measure_snr(rec) == pytest.approx(20.0, abs=0.5)

    def test_noise_only_near_zero(self):
        rng = np.random.default_rng(12)
        n = 500_000
        noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2)
        rec = fake_recording(noise)
        assert 0.0 <= measure_snr(rec) <= 3.0

    def test_capture_target_round_trip(self):
        rec = lab_capture(random_grid_raster(9), snr_db=25.0, seed=4)
        assert measure_snr(rec) == pytest.approx(25.0, abs=0.5)

    def test_resolution_must_be_below_band(self):
        rec = lab_capture(random_grid_raster(9))
        with pytest.raises(ValidationError, match="resolution"):
            measure_snr(rec, band_hz=10e3, resolution_hz=25e3)

    def test_explicit_band_clipped_with_warning(self):
        rec = lab_capture(random_grid_raster(9), snr_db=25.0, seed=5)
        with pytest.warns(UserWarning, match="clipped"):
            measure_snr(rec, band_hz=10 * LAB_FS)

    def test_recon_params_validation(self):
        with pytest.raises(ValidationError):
            ReconParams(0, 10, 60.0)
        with pytest.raises(ValidationError):
            ReconParams(10, 10, 60.0, gain=0.0)
