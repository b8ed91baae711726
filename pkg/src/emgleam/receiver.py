"""Emage reconstruction from IQ recordings.

The receiver mirrors the usual SDR screen-reader loop: AM envelope
detection, refresh-rate estimation by normalized autocorrelation around a
hint, fractional resampling of each frame onto a width x height pixel
grid, frame averaging, and min-max normalization.  Interactive alignment
sliders are replaced by a deterministic rule: the frame start is the row
rotation that puts the vertical-blanking dark band just above row 0
(maximum step in per-row energy).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ._spectrum import band_slice, peak_over_median_db, welch_psd
from .emanator import IqRecording
from .errors import NoSyncError, ValidationError
from .pgmio import read_pgm, write_pgm
from .util import dump_json, load_json

# Fraction of a normalized autocorrelation peak required to call sync.
_SYNC_THRESHOLD = 0.1


@dataclass(frozen=True)
class ReconParams:
    """Reconstruction grid and tuning knobs.

    height_px should equal the source timing's total line count for an
    unsheared image (each reconstructed row then spans exactly one line).
    """

    width_px: int
    height_px: int
    f_r_hz: float
    gain: float = 1.0
    lowpass_cutoff: float = 1.0  # fraction of Nyquist; >= 1 disables

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValidationError("reconstruction grid must be positive")
        if not self.f_r_hz > 0:
            raise ValidationError("frame rate must be positive")
        if not self.gain > 0:
            raise ValidationError("gain must be positive")
        if not self.lowpass_cutoff > 0:
            raise ValidationError("lowpass_cutoff must be positive")

    def as_dict(self) -> dict:
        return {
            "width_px": self.width_px,
            "height_px": self.height_px,
            "f_r_hz": self.f_r_hz,
            "gain": self.gain,
            "lowpass_cutoff": self.lowpass_cutoff,
        }


@dataclass
class Emage:
    """Reconstructed grayscale frame; pixels are row-major floats in [0, 1]."""

    width_px: int
    height_px: int
    pixels: np.ndarray
    frames_averaged: int
    source_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.shape != (self.height_px, self.width_px):
            raise ValidationError(f"pixel grid {px.shape} != ({self.height_px}, {self.width_px})")
        if px.size and (float(px.min()) < 0.0 or float(px.max()) > 1.0):
            raise ValidationError("emage values must lie in [0, 1]")
        if self.frames_averaged < 1:
            raise ValidationError("frames_averaged must be >= 1")
        self.pixels = px

    def crop(self, x: int, y: int, w: int, h: int) -> "Emage":
        if x < 0 or y < 0 or x + w > self.width_px or y + h > self.height_px:
            raise ValidationError(f"crop ({x},{y},{w},{h}) escapes {self.width_px}x{self.height_px}")
        return Emage(w, h, self.pixels[y : y + h, x : x + w], self.frames_averaged, self.source_meta)

    def save(self, path) -> None:
        write_pgm(path, self.pixels)
        dump_json(str(path) + ".json", {"frames_averaged": self.frames_averaged, **self.source_meta})

    @classmethod
    def load(cls, path) -> "Emage":
        px = read_pgm(path)
        meta = {}
        try:
            meta = load_json(str(path) + ".json")
        except FileNotFoundError:
            pass
        frames = int(meta.pop("frames_averaged", 1))
        h, w = px.shape
        return cls(w, h, px, frames, meta)


def am_demod(recording: IqRecording, lowpass_cutoff: float = 1.0) -> np.ndarray:
    """Envelope of the complex baseband: sqrt(I^2 + Q^2), optional one-pole LP."""
    if len(recording.samples) == 0:
        raise ValidationError("empty recording")
    iq = np.asarray(recording.samples, dtype=np.complex128)
    mag = np.abs(iq)
    if lowpass_cutoff < 1.0:
        alpha = float(np.exp(-np.pi * lowpass_cutoff))
        from scipy.signal import lfilter

        mag = lfilter([1.0 - alpha], [1.0, -alpha], mag)
    return mag


def estimate_frame_rate(
    magnitude: np.ndarray,
    sample_rate_hz: float,
    f_r_hint: float,
    search_ppm: float = 1000.0,
) -> float:
    """Refresh rate from the autocorrelation peak near the hinted frame lag.

    Searches integer lags within +/- search_ppm of sample_rate / hint and
    refines the winner by parabolic interpolation of the normalized
    autocorrelation.  Raises NoSyncError when no lag correlates above the
    noise floor.
    """
    mag = np.asarray(magnitude, dtype=np.float64)
    lag0 = sample_rate_hz / f_r_hint
    if len(mag) < 2 * lag0:
        raise ValidationError(
            f"need >= 2 frames at {f_r_hint} Hz ({int(2 * lag0)} samples), got {len(mag)}"
        )
    span = max(1, int(np.ceil(lag0 * search_ppm * 1e-6)))
    lo = max(1, int(np.floor(lag0)) - span)
    hi = min(len(mag) - 2, int(np.ceil(lag0)) + span)
    if hi - lo < 2:
        raise ValidationError("search window too narrow for peak refinement")

    x = mag - mag.mean()
    lags = np.arange(lo, hi + 1)
    corr = np.empty(len(lags))
    for i, lag in enumerate(lags):
        a = x[: len(x) - lag]
        b = x[lag:]
        denom = np.sqrt(float(a @ a) * float(b @ b))
        corr[i] = float(a @ b) / denom if denom > 0 else 0.0

    best = int(np.argmax(corr))
    if corr[best] < _SYNC_THRESHOLD:
        raise NoSyncError(
            f"no frame periodicity near {f_r_hint} Hz (peak correlation {corr[best]:.3f})"
        )
    # parabolic refinement on the three points around the peak
    lag_best = float(lags[best])
    if 0 < best < len(lags) - 1:
        c_m, c_0, c_p = corr[best - 1], corr[best], corr[best + 1]
        denom = c_m - 2 * c_0 + c_p
        if denom < 0:
            lag_best += 0.5 * (c_m - c_p) / denom
    return sample_rate_hz / lag_best


def _frame_start_row(avg: np.ndarray) -> int:
    """Row rotation placing content right after the dark blanking band.

    The vertical blanking lines carry no emission, so the darkest window of
    rows sits inside the blanking.  Starting at that window's end, the
    first row whose energy crosses a quarter of the way from the blanking
    level to the weak-content level (guarded by six sigma of in-window
    scatter) is the frame start.  Band-limiting bleeds a little energy from
    the frame-start edge into the last blanking row, which this threshold
    must stay above.  Needs a timing with a vertical blanking interval,
    which the defaults have.

    The per-row energy is the mean of the line-start columns plus the full
    row mean: every visible line of a lit screen opens with a strong
    blanking-to-content edge, which separates weak content rows from the
    blanking far more reliably than the row mean alone, while the row mean
    keeps dark content without such edges detectable.
    """
    h = avg.shape[0]
    e = avg[:, : min(3, avg.shape[1])].mean(axis=1) + avg.mean(axis=1)
    if not float(e.max()) > float(e.min()):
        return 0
    b = max(1, h // 20)  # window sized to fit inside typical blanking
    total = np.concatenate([[0.0], np.concatenate([e, e]).cumsum()])
    starts = np.arange(h)
    prev_sum = total[starts + h] - total[starts + h - b]
    s_dark = int(np.argmin(prev_sum))  # window covers rows [s_dark-b, s_dark)
    blank_rows = e[(np.arange(s_dark - b, s_dark)) % h]
    level = float(blank_rows.mean())
    # quantile 0.25 sits on the weakest content rows: blanking occupies well
    # under a quarter of the frame in any realistic timing
    content = float(np.quantile(e, 0.25))
    threshold = max(
        level + 0.25 * (content - level),
        level + 6.0 * float(blank_rows.std()),
    )
    for step in range(h):
        r = (s_dark + step) % h
        if e[r] > threshold:
            return r
    return 0


def reconstruct(recording: IqRecording, params: ReconParams) -> Emage:
    """Resample each frame's envelope onto the pixel grid and average.

    Sample position of grid cell g in frame i is i*L + g*spp with
    L = fs / f_r and spp = fs / (W*H*f_r); linear interpolation between
    envelope samples, frames averaged in index order, min-max normalized
    (an all-equal result maps to 0.5).
    """
    if recording.timing is not None:
        sidecar_fr = recording.timing.f_r
        if abs(params.f_r_hz - sidecar_fr) > 0.05 * sidecar_fr:
            raise ValidationError(
                f"params f_r {params.f_r_hz} deviates more than 5% from recorded {sidecar_fr}"
            )
    mag = am_demod(recording, params.lowpass_cutoff) * params.gain
    fs = recording.sample_rate_hz
    frame_len = fs / params.f_r_hz
    # grid positions stay strictly inside each frame, so a frame missing its
    # last sample to round(frames * fs / f_r) truncation still counts
    n_frames = int((len(mag) + 1) // frame_len)
    if n_frames < 1:
        raise ValidationError(
            f"recording holds {len(mag)} samples, less than one {frame_len:.0f}-sample frame"
        )

    w, h = params.width_px, params.height_px
    spp = fs / (w * h * params.f_r_hz)
    grid_pos = np.arange(w * h, dtype=np.float64) * spp
    acc = np.zeros(w * h, dtype=np.float64)
    for i in range(n_frames):
        pos = grid_pos + i * frame_len
        base = np.minimum(np.floor(pos).astype(np.int64), len(mag) - 2)
        frac = pos - base
        acc += mag[base] * (1.0 - frac) + mag[base + 1] * frac
    avg = (acc / n_frames).reshape(h, w)

    start_row = _frame_start_row(avg)
    if start_row:
        avg = np.roll(avg, -start_row, axis=0)

    lo, hi = float(avg.min()), float(avg.max())
    if hi > lo:
        norm = (avg - lo) / (hi - lo)
    else:
        norm = np.full_like(avg, 0.5)

    return Emage(
        width_px=w,
        height_px=h,
        pixels=norm.astype(np.float32),
        frames_averaged=n_frames,
        source_meta={"params": params.as_dict(), "source": recording.sidecar()},
    )


def measure_snr(
    recording: IqRecording,
    signal_center_hz: float | None = None,
    band_hz: float | None = None,
    resolution_hz: float = 25e3,
) -> float:
    """Peak-over-median periodogram SNR in dB.

    The analysis band defaults to 50 MHz capped at the sample rate,
    centered on the signal (assumed at the capture center when not given).
    An explicitly requested band reaching past Nyquist is clipped with a
    warning.
    """
    explicit_band = band_hz is not None
    if band_hz is None:
        band_hz = min(50e6, recording.sample_rate_hz)
    if not resolution_hz < band_hz:
        raise ValidationError(f"resolution {resolution_hz} must be below band {band_hz}")
    if len(recording.samples) == 0:
        raise ValidationError("empty recording")

    offset = 0.0
    if signal_center_hz is not None:
        offset = signal_center_hz - recording.center_freq_hz

    freqs, psd, _ = welch_psd(
        np.asarray(recording.samples, dtype=np.complex128),
        recording.sample_rate_hz,
        resolution_hz,
    )
    mask, clipped = band_slice(freqs, offset, band_hz)
    if clipped and explicit_band:
        warnings.warn(
            f"analysis band {band_hz:.3g} Hz around {offset:.3g} Hz exceeds Nyquist; clipped",
            stacklevel=2,
        )
    if not mask.any():
        raise ValidationError("analysis band lies outside the captured spectrum")
    return peak_over_median_db(psd[mask])
