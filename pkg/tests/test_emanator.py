import numpy as np
import pytest

from emgleam.emanator import (
    ChannelModel,
    DisplayTiming,
    Interferer,
    IqRecording,
    LeakageModel,
    capture,
    emanate,
    video_waveform,
)
from emgleam.errors import TuningError, ValidationError
from emgleam.profiles import get_profile
from emgleam.raster import ScreenRaster, blank_screen

from helpers import LAB_BW, LAB_FS, LAB_LEAK, LAB_TIMING, LAB_H, LAB_W, random_grid_raster


def column_raster(x0=30, width=4, lum=1.0):
    pix = np.zeros((LAB_H, LAB_W), dtype=np.float32)
    pix[:, x0 : x0 + width] = lum
    return ScreenRaster(LAB_W, LAB_H, pix, [])


class TestVideoWaveform:
    def test_frame_length_and_pixel_clock(self):
        timing = DisplayTiming(100, 50, 60.0, 90, 45)
        wave = video_waveform(blank_screen(90, 45), timing)
        assert len(wave) == 5000
        assert timing.pixel_clock_hz == 100 * 50 * 60 == 300e3

    def test_all_black_raster_is_all_zero(self):
        wave = video_waveform(blank_screen(LAB_W, LAB_H, 0.0), LAB_TIMING)
        assert not wave.any()

    def test_iphone_line_blanking_positions(self):
        profile = get_profile("iphone6s")
        timing = profile.timing()
        wave = video_waveform(blank_screen(750, 1334), timing)
        frame = wave.reshape(timing.y_t, timing.x_t)
        assert np.all(frame[:, 750:] == 0.0)  # horizontal blanking of every line
        assert np.all(frame[1334:, :] == 0.0)  # vertical blanking lines
        assert np.all(frame[:1334, :750] == 1.0)

    def test_frames_concatenate_identically(self):
        raster = random_grid_raster(1)
        one = video_waveform(raster, LAB_TIMING, frames=1)
        three = video_waveform(raster, LAB_TIMING, frames=3)
        assert np.array_equal(three, np.tile(one, 3))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="does not match visible"):
            video_waveform(blank_screen(10, 10), LAB_TIMING)

    def test_timing_invariants(self):
        with pytest.raises(ValidationError):
            DisplayTiming(80, 136, 60.0, 96, 128)  # x_t < visible_w
        with pytest.raises(ValidationError):
            DisplayTiming(106, 136, -1.0, 96, 128)


class TestEmanate:
    def test_constant_raster_edges_only_at_blanking(self):
        leak = emanate(blank_screen(LAB_W, LAB_H), LAB_TIMING, LeakageModel())
        frame = leak.samples.reshape(LAB_TIMING.y_t, LAB_TIMING.x_t)
        # within a visible line, everything between the start/end edges is flat
        assert np.all(frame[:LAB_H, 1:LAB_W] == 0.0)
        assert np.all(frame[:LAB_H, 0] == 1.0)
        assert np.all(frame[:LAB_H, LAB_W] == -1.0)

    def test_single_column_two_taps_per_line(self):
        leak = emanate(column_raster(30, 4), LAB_TIMING, LeakageModel())
        frame = leak.samples.reshape(LAB_TIMING.y_t, LAB_TIMING.x_t)
        assert int(np.count_nonzero(frame)) == 2 * LAB_H
        nz_cols = np.nonzero(frame[0])[0]
        assert list(nz_cols) == [30, 34]

    def test_coupling_gain_is_linear(self):
        raster = random_grid_raster(2)
        one = emanate(raster, LAB_TIMING, LeakageModel(coupling_gain=1.0))
        two = emanate(raster, LAB_TIMING, LeakageModel(coupling_gain=2.0))
        assert np.array_equal(two.samples, 2.0 * one.samples)

    def test_carrier_tag(self):
        leak = emanate(random_grid_raster(0), LAB_TIMING, LeakageModel(harmonic=5))
        assert leak.carrier_hz == 5 * LAB_TIMING.pixel_clock_hz

    def test_highpass_pole_periodic_steady_state(self):
        raster = random_grid_raster(3)
        leak = emanate(raster, LAB_TIMING, LeakageModel(highpass_alpha=0.5), frames=2)
        n = LAB_TIMING.samples_per_frame
        # exactly periodic: second frame equals the first
        assert np.array_equal(leak.samples[:n], leak.samples[n:])
        # recursion holds mid-stream: y[n] = x[n] - x[n-1] + 0.5 y[n-1]
        x = video_waveform(raster, LAB_TIMING)
        y = leak.samples[:n]
        idx = np.arange(1, n)
        assert np.allclose(y[idx], x[idx] - x[idx - 1] + 0.5 * y[idx - 1], atol=1e-9)


class TestCapture:
    def test_length_contract(self):
        leak = emanate(random_grid_raster(0), LAB_TIMING, LAB_LEAK, frames=2)
        rec = capture(leak, ChannelModel(), sample_rate_hz=LAB_FS, bandwidth_hz=LAB_BW)
        assert len(rec.samples) == round(2 * LAB_FS / LAB_TIMING.f_r)
        assert rec.frames_contained == 2
        assert rec.samples.dtype == np.complex64

    def test_distance_attenuation_exact(self):
        leak = emanate(random_grid_raster(4), LAB_TIMING, LAB_LEAK)
        near = capture(leak, ChannelModel(distance_r=1.0), LAB_FS, bandwidth_hz=LAB_BW)
        far = capture(leak, ChannelModel(distance_r=2.0), LAB_FS, bandwidth_hz=LAB_BW)
        scale = 2.0 ** -2.5
        mask = np.abs(near.samples) > 1e-6
        ratio = far.samples[mask] / near.samples[mask]
        assert np.max(np.abs(ratio - scale)) < 1e-6

    def test_linearity_in_leak(self):
        raster = random_grid_raster(5)
        one = capture(emanate(raster, LAB_TIMING, LeakageModel(coupling_gain=1.0)),
                      ChannelModel(), LAB_FS, bandwidth_hz=LAB_BW)
        two = capture(emanate(raster, LAB_TIMING, LeakageModel(coupling_gain=2.0)),
                      ChannelModel(), LAB_FS, bandwidth_hz=LAB_BW)
        assert np.allclose(two.samples, 2.0 * one.samples, atol=1e-6)

    def test_interferer_superposition(self):
        main = random_grid_raster(6)
        other = random_grid_raster(7)
        leak_main = emanate(main, LAB_TIMING, LAB_LEAK)
        leak_other = emanate(other, LAB_TIMING, LAB_LEAK)
        combined = capture(
            leak_main,
            ChannelModel(interferers=(Interferer(other, LAB_TIMING, gain=1.0),)),
            LAB_FS, bandwidth_hz=LAB_BW,
        )
        alone_main = capture(leak_main, ChannelModel(), LAB_FS, bandwidth_hz=LAB_BW)
        alone_other = capture(leak_other, ChannelModel(), LAB_FS, bandwidth_hz=LAB_BW)
        assert np.allclose(
            combined.samples, alone_main.samples + alone_other.samples, atol=2e-6
        )

    def test_out_of_band_interferer_contributes_nothing(self):
        other_timing = DisplayTiming.for_visible(480, 640)  # ~21 MHz pixel clock
        other = blank_screen(480, 640)
        leak = emanate(random_grid_raster(8), LAB_TIMING, LAB_LEAK)
        with_interf = capture(
            leak, ChannelModel(interferers=(Interferer(other, other_timing),)),
            LAB_FS, bandwidth_hz=LAB_BW,
        )
        alone = capture(leak, ChannelModel(), LAB_FS, bandwidth_hz=LAB_BW)
        assert np.array_equal(with_interf.samples, alone.samples)

    def test_tuning_error(self):
        leak = emanate(random_grid_raster(0), LAB_TIMING, LAB_LEAK)
        with pytest.raises(TuningError, match="outside"):
            capture(leak, ChannelModel(), LAB_FS,
                    center_freq_hz=leak.carrier_hz + LAB_FS, bandwidth_hz=LAB_BW)

    def test_determinism_bytes(self, tmp_path):
        leak = emanate(random_grid_raster(9), LAB_TIMING, LAB_LEAK)
        a = capture(leak, ChannelModel(target_snr_db=20.0, rng_seed=42), LAB_FS, bandwidth_hz=LAB_BW)
        b = capture(leak, ChannelModel(target_snr_db=20.0, rng_seed=42), LAB_FS, bandwidth_hz=LAB_BW)
        assert np.array_equal(a.samples, b.samples)
        pa, pb = tmp_path / "a.iq", tmp_path / "b.iq"
        a.save(pa)
        b.save(pb)
        assert pa.read_bytes() == pb.read_bytes()
        assert (tmp_path / "a.iq.json").read_text() == (tmp_path / "b.iq.json").read_text()

    def test_different_seeds_differ(self):
        leak = emanate(random_grid_raster(9), LAB_TIMING, LAB_LEAK)
        a = capture(leak, ChannelModel(target_snr_db=20.0, rng_seed=1), LAB_FS, bandwidth_hz=LAB_BW)
        b = capture(leak, ChannelModel(target_snr_db=20.0, rng_seed=2), LAB_FS, bandwidth_hz=LAB_BW)
        assert not np.array_equal(a.samples, b.samples)

    def test_frame_periodicity_of_noiseless_capture(self):
        leak = emanate(random_grid_raster(10), LAB_TIMING, LAB_LEAK, frames=3)
        rec = capture(leak, ChannelModel(), LAB_FS, bandwidth_hz=LAB_BW)
        mag = np.abs(rec.samples.astype(np.complex128))
        x = mag - mag.mean()
        period = LAB_FS / LAB_TIMING.f_r
        lags = np.arange(int(0.5 * period), int(1.5 * period) + 1)
        corr = np.array([
            float(x[: len(x) - lag] @ x[lag:])
            / (np.linalg.norm(x[: len(x) - lag]) * np.linalg.norm(x[lag:]))
            for lag in lags
        ])
        best = lags[int(np.argmax(corr))]
        assert abs(best - round(period)) <= 1

    def test_iq_file_round_trip(self, tmp_path):
        leak = emanate(random_grid_raster(11), LAB_TIMING, LAB_LEAK)
        rec = capture(leak, ChannelModel(target_snr_db=30.0, rng_seed=3), LAB_FS, bandwidth_hz=LAB_BW)
        path = tmp_path / "cap.iq"
        rec.save(path)
        again = IqRecording.load(path)
        assert np.array_equal(again.samples, rec.samples)
        assert again.timing == rec.timing
        assert again.sample_rate_hz == rec.sample_rate_hz
        assert again.seed == rec.seed
        # raw file is interleaved little-endian float32 I/Q
        raw = np.fromfile(path, dtype="<f4")
        assert np.array_equal(raw[0::2], rec.samples.real.astype("<f4"))
        assert np.array_equal(raw[1::2], rec.samples.imag.astype("<f4"))


class TestSnrCalibrationRange:
    def test_targets_across_the_working_range(self):
        from emgleam.receiver import measure_snr

        leak = emanate(random_grid_raster(1), LAB_TIMING, LAB_LEAK, frames=2)
        for target in (0.0, 5.0, 15.0, 30.0, 40.0):
            rec = capture(leak, ChannelModel(target_snr_db=target, rng_seed=int(target)),
                          LAB_FS, bandwidth_hz=LAB_BW)
            assert measure_snr(rec) == pytest.approx(target, abs=0.5), target


class TestChannelModel:
    def test_amplitude_scale_law(self):
        assert ChannelModel(distance_r=2.0).amplitude_scale == pytest.approx(2 ** -2.5, abs=1e-12)
        with pytest.raises(ValidationError):
            ChannelModel(distance_r=0.0)

    def test_leakage_model_validation(self):
        with pytest.raises(ValidationError):
            LeakageModel(harmonic=0)
        with pytest.raises(ValidationError):
            LeakageModel(highpass_alpha=1.0)
