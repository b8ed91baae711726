"""Display-cable emission simulation.

A raster plus display timing defines a pixel-clock video waveform (visible
luminance plus zero-luminance blanking).  The cable radiates at signal
transitions, modeled as a one-pole high-pass of the pixel stream, amplitude
modulated onto a carrier at an harmonic of the pixel clock.  ``capture``
then produces what a software-defined radio tuned near that carrier would
record: the modulation spectrum band-limited to the capture bandwidth,
resampled to the ADC rate, attenuated with near-field distance as
amplitude ~ r^-2.5 (power density ~ r^-5), summed with interferers and
calibrated complex white noise.

The video frame repeats exactly, so all resampling is done in the frequency
domain of one frame period: FFT bins sit at multiples of the refresh rate,
the capture band selects bins, and an oversampled inverse FFT plus 8-point
Lagrange interpolation evaluates the band-limited waveform at the ADC
sample instants.  This is exact band-limited interpolation up to the
interpolator's ~1e-6 relative error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal

from ._spectrum import calibrate_noise_sigma
from .errors import TuningError, ValidationError
from .raster import ScreenRaster
from .util import dump_json, load_json

_INTERP_OFFSETS = np.arange(-3, 5)  # 8-point Lagrange stencil
_DENSE_OVERSAMPLE = 8  # dense grid rate over kept-content Nyquist rate
_MAX_DENSE = 1 << 22


@dataclass(frozen=True)
class DisplayTiming:
    """Total scan format: pixels per line and lines per frame include blanking."""

    x_t: int
    y_t: int
    f_r: float
    visible_w: int
    visible_h: int

    def __post_init__(self):
        if self.x_t < self.visible_w or self.y_t < self.visible_h:
            raise ValidationError(
                f"total {self.x_t}x{self.y_t} smaller than visible {self.visible_w}x{self.visible_h}"
            )
        if self.visible_w <= 0 or self.visible_h <= 0:
            raise ValidationError("visible dimensions must be positive")
        if not (self.f_r > 0 and math.isfinite(self.f_r)):
            raise ValidationError(f"refresh rate {self.f_r} must be positive and finite")
        if not math.isfinite(self.pixel_clock_hz):
            raise ValidationError("pixel clock overflows")

    @property
    def pixel_clock_hz(self) -> float:
        return self.x_t * self.y_t * self.f_r

    @property
    def samples_per_frame(self) -> int:
        return self.x_t * self.y_t

    @classmethod
    def for_visible(cls, visible_w: int, visible_h: int, f_r: float = 60.0) -> "DisplayTiming":
        """Default blanking overhead: 10% per line, 6% extra lines."""
        return cls(
            x_t=math.ceil(1.1 * visible_w),
            y_t=math.ceil(1.06 * visible_h),
            f_r=f_r,
            visible_w=visible_w,
            visible_h=visible_h,
        )

    def as_dict(self) -> dict:
        return {
            "x_t": self.x_t,
            "y_t": self.y_t,
            "f_r": self.f_r,
            "visible_w": self.visible_w,
            "visible_h": self.visible_h,
        }


@dataclass(frozen=True)
class LeakageModel:
    """Which pixel-clock harmonic carries the leak and how strongly it couples."""

    harmonic: int = 5
    coupling_gain: float = 1.0
    highpass_alpha: float = 0.0

    def __post_init__(self):
        if self.harmonic < 1:
            raise ValidationError("harmonic must be a positive integer")
        if not self.coupling_gain >= 0.0:
            raise ValidationError("coupling_gain must be non-negative")
        if not 0.0 <= self.highpass_alpha < 1.0:
            raise ValidationError("highpass_alpha must lie in [0, 1)")

    def carrier_hz(self, timing: DisplayTiming) -> float:
        return self.harmonic * timing.pixel_clock_hz


@dataclass
class Interferer:
    """A second display radiating into the same capture.

    ``phase`` is a start-time offset as a fraction of the interferer's own
    frame; the string "random" draws it from the channel's seeded stream.
    """

    raster: ScreenRaster
    timing: DisplayTiming
    gain: float = 1.0
    leak: LeakageModel | None = None
    phase: float | str = 0.0


@dataclass
class ChannelModel:
    """Probe distance, target in-band SNR and environment."""

    distance_r: float = 1.0
    target_snr_db: float | None = None
    interferers: tuple = ()
    rng_seed: int = 0

    def __post_init__(self):
        if not self.distance_r > 0:
            raise ValidationError("distance_r must be positive")

    @property
    def amplitude_scale(self) -> float:
        # received power density ~ r^-5  =>  amplitude ~ r^-2.5
        return float(self.distance_r ** -2.5)


@dataclass
class LeakSignal:
    """High-passed pixel stream tagged with its carrier placement."""

    samples: np.ndarray  # float64, frames * x_t * y_t at the pixel clock
    timing: DisplayTiming
    carrier_hz: float
    frames: int
    highpass_alpha: float

    @property
    def pixel_rate_hz(self) -> float:
        return self.timing.pixel_clock_hz


@dataclass
class IqRecording:
    """Complex baseband capture with its acquisition metadata."""

    sample_rate_hz: float
    center_freq_hz: float
    samples: np.ndarray  # complex64
    frames_contained: int
    timing: DisplayTiming
    seed: int = 0

    def sidecar(self) -> dict:
        return {
            "sample_rate_hz": self.sample_rate_hz,
            "center_freq_hz": self.center_freq_hz,
            "frames_contained": self.frames_contained,
            "timing": self.timing.as_dict(),
            "seed": self.seed,
        }

    def save(self, path) -> None:
        """Raw interleaved little-endian float32 I/Q plus JSON sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        inter = np.empty((len(self.samples), 2), dtype="<f4")
        inter[:, 0] = self.samples.real
        inter[:, 1] = self.samples.imag
        with open(path, "wb") as fh:
            fh.write(inter.tobytes())
        dump_json(str(path) + ".json", self.sidecar())

    @classmethod
    def load(cls, path) -> "IqRecording":
        meta = load_json(str(path) + ".json")
        raw = np.fromfile(path, dtype="<f4")
        if raw.size % 2:
            raise ValidationError(f"{path}: odd float count, not interleaved I/Q")
        samples = raw[0::2] + 1j * raw[1::2]
        return cls(
            sample_rate_hz=float(meta["sample_rate_hz"]),
            center_freq_hz=float(meta["center_freq_hz"]),
            samples=samples.astype(np.complex64),
            frames_contained=int(meta["frames_contained"]),
            timing=DisplayTiming(**meta["timing"]),
            seed=int(meta.get("seed", 0)),
        )


def video_waveform(raster: ScreenRaster, timing: DisplayTiming, frames: int = 1) -> np.ndarray:
    """Pixel-clock sample stream: luminance in the visible region, 0 in blanking.

    One frame is y_t lines of x_t samples; repeated frames are concatenations
    of the identical frame.
    """
    if frames < 1:
        raise ValidationError("frames must be >= 1")
    if (raster.width_px, raster.height_px) != (timing.visible_w, timing.visible_h):
        raise ValidationError(
            f"raster {raster.width_px}x{raster.height_px} does not match visible "
            f"{timing.visible_w}x{timing.visible_h}"
        )
    frame = np.zeros((timing.y_t, timing.x_t), dtype=np.float64)
    frame[: timing.visible_h, : timing.visible_w] = raster.luminance
    flat = frame.reshape(-1)
    if frames == 1:
        return flat
    return np.tile(flat, frames)


def _periodic_highpass(frame: np.ndarray, alpha: float) -> np.ndarray:
    """y[n] = x[n] - x[n-1] + alpha*y[n-1] in periodic steady state."""
    if alpha == 0.0:
        return frame - np.roll(frame, 1)
    # warm the recursion over one extra period; the transient term decays
    # as alpha^N which underflows for any realistic frame length
    doubled = sp_signal.lfilter([1.0, -1.0], [1.0, -alpha], np.concatenate([frame, frame]))
    return doubled[len(frame) :]


def emanate(
    raster: ScreenRaster,
    timing: DisplayTiming,
    leak: LeakageModel,
    frames: int = 1,
) -> LeakSignal:
    """Edge-emphasised emission of the video waveform at the pixel clock."""
    wave = video_waveform(raster, timing, frames=1)
    hp = _periodic_highpass(wave, leak.highpass_alpha) * leak.coupling_gain
    samples = np.tile(hp, frames) if frames > 1 else hp
    return LeakSignal(
        samples=samples,
        timing=timing,
        carrier_hz=leak.carrier_hz(timing),
        frames=frames,
        highpass_alpha=leak.highpass_alpha,
    )


def _lagrange_weights(frac: np.ndarray) -> list[np.ndarray]:
    weights = []
    for j in _INTERP_OFFSETS:
        w = np.ones_like(frac)
        denom = 1.0
        for k in _INTERP_OFFSETS:
            if k != j:
                w = w * (frac - k)
                denom *= j - k
        weights.append(w / denom)
    return weights


def _component_baseband(
    frame: np.ndarray,
    f_r: float,
    f_offset_hz: float,
    sample_rate_hz: float,
    half_band_hz: float,
    n_out: int,
    phase_frames: float = 0.0,
) -> np.ndarray:
    """Band-limited complex baseband of one periodic frame at the ADC rate.

    The frame's spectrum lives on multiples of f_r.  Components whose
    post-shift frequency falls inside the capture band are placed on an
    oversampled dense grid, inverse transformed, interpolated at the output
    instants and finally rotated by the carrier-to-center offset.
    """
    n_p = len(frame)
    spec = np.fft.rfft(frame)
    q = np.arange(len(spec))
    freq = q * f_r  # positive-frequency bins

    keep_pos = np.abs(freq + f_offset_hz) <= half_band_hz
    keep_neg = np.abs(-freq + f_offset_hz) <= half_band_hz
    keep_neg[0] = False  # DC handled once
    if n_p % 2 == 0:
        keep_pos[-1] = False  # drop the shared Nyquist bin
        keep_neg[-1] = False
    if not (keep_pos.any() or keep_neg.any()):
        return np.zeros(n_out, dtype=np.complex128)

    f_max = 0.0
    if keep_pos.any():
        f_max = max(f_max, float(freq[keep_pos].max()))
    if keep_neg.any():
        f_max = max(f_max, float(freq[keep_neg].max()))
    m = 1 << max(10, int(np.ceil(np.log2(max(2.0, 2 * _DENSE_OVERSAMPLE * f_max / f_r)))))
    m = min(m, _MAX_DENSE)

    dense_spec = np.zeros(m, dtype=np.complex128)
    scale = m / n_p
    idx_pos = q[keep_pos]
    dense_spec[idx_pos % m] += spec[keep_pos] * scale
    idx_neg = q[keep_neg]
    dense_spec[(-idx_neg) % m] += np.conj(spec[keep_neg]) * scale
    if phase_frames:
        bins = np.fft.fftfreq(m, d=1.0 / m)  # signed harmonic index
        dense_spec *= np.exp(-2j * np.pi * bins * phase_frames)
    dense = np.fft.ifft(dense_spec)

    pos = np.arange(n_out, dtype=np.float64) * (m * f_r / sample_rate_hz)
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    out = np.zeros(n_out, dtype=np.complex128)
    for j, w in zip(_INTERP_OFFSETS, _lagrange_weights(frac)):
        out += dense[(base + j) % m] * w

    if f_offset_hz:
        t = np.arange(n_out, dtype=np.float64) / sample_rate_hz
        out *= np.exp(2j * np.pi * f_offset_hz * t)
    return out


def capture(
    leak: LeakSignal,
    channel: ChannelModel,
    sample_rate_hz: float = 25e6,
    center_freq_hz: float | None = None,
    bandwidth_hz: float = 12.5e6,
) -> IqRecording:
    """Simulated SDR acquisition of a leak signal.

    Deterministic given channel.rng_seed: the seeded stream supplies any
    "random" interferer phases (in listed order) and then the noise samples.
    """
    if center_freq_hz is None:
        center_freq_hz = leak.carrier_hz
    f_off = leak.carrier_hz - center_freq_hz
    if abs(f_off) >= sample_rate_hz / 2:
        raise TuningError(
            f"carrier {leak.carrier_hz:.6g} Hz is outside the capture span around "
            f"{center_freq_hz:.6g} Hz at {sample_rate_hz:.6g} S/s"
        )
    half_band = min(bandwidth_hz, sample_rate_hz) / 2.0
    f_r = leak.timing.f_r
    n_out = int(round(leak.frames * sample_rate_hz / f_r))
    rng = np.random.default_rng(channel.rng_seed)

    frame = leak.samples[: leak.timing.samples_per_frame]
    composite = _component_baseband(frame, f_r, f_off, sample_rate_hz, half_band, n_out)

    for interf in channel.interferers:
        ileak = interf.leak or LeakageModel()
        isig = emanate(interf.raster, interf.timing, ileak, frames=1)
        phase = interf.phase
        if phase == "random":
            phase = float(rng.uniform())
        composite += interf.gain * _component_baseband(
            isig.samples,
            interf.timing.f_r,
            isig.carrier_hz - center_freq_hz,
            sample_rate_hz,
            half_band,
            n_out,
            phase_frames=float(phase),
        )

    composite *= channel.amplitude_scale

    if channel.target_snr_db is not None:
        sigma = calibrate_noise_sigma(composite, sample_rate_hz, channel.target_snr_db)
        gauss = rng.standard_normal((n_out, 2))
        composite = composite + (gauss[:, 0] + 1j * gauss[:, 1]) * (sigma / np.sqrt(2.0))

    return IqRecording(
        sample_rate_hz=sample_rate_hz,
        center_freq_hz=center_freq_hz,
        samples=composite.astype(np.complex64),
        frames_contained=leak.frames,
        timing=leak.timing,
        seed=channel.rng_seed,
    )


def edge_reference(
    raster: ScreenRaster,
    timing: DisplayTiming,
    leak: LeakageModel,
    grid_w: int,
    grid_h: int,
) -> np.ndarray:
    """Ideal reconstruction target: |high-passed waveform| on the emage grid.

    Used as the independent reference for round-trip fidelity checks; it
    never touches the capture/reconstruction path.
    """
    wave = video_waveform(raster, timing, frames=1)
    mag = np.abs(_periodic_highpass(wave, leak.highpass_alpha) * leak.coupling_gain)
    n_p = len(mag)
    pos = np.arange(grid_w * grid_h, dtype=np.float64) * (n_p / (grid_w * grid_h))
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    nxt = (base + 1) % n_p
    ref = mag[base] * (1.0 - frac) + mag[nxt] * frac
    ref = ref.reshape(grid_h, grid_w)
    lo, hi = float(ref.min()), float(ref.max())
    if hi > lo:
        ref = (ref - lo) / (hi - lo)
    else:
        ref = np.full_like(ref, 0.5)
    return ref.astype(np.float32)
