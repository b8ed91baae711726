"""Shared Welch-periodogram helpers for SNR measurement and noise calibration.

Both the receiver's SNR meter and the channel's noise calibration must use
the same estimator, otherwise "requested" and "measured" SNR drift apart.
SNR here is always: peak periodogram bin over the median bin in the
analysis band, in dB.
"""

from __future__ import annotations

import numpy as np
from scipy import signal as sp_signal
from scipy.stats import chi2


def welch_psd(x: np.ndarray, fs: float, resolution_hz: float):
    """Two-sided averaged periodogram at the given spectral resolution.

    Returns (freqs, psd, n_segments) with frequencies sorted ascending
    (fftshifted), covering [-fs/2, fs/2).
    """
    x = np.asarray(x)
    nperseg = max(8, int(round(fs / resolution_hz)))
    nperseg = min(nperseg, len(x))
    noverlap = nperseg // 2
    freqs, psd = sp_signal.welch(
        x,
        fs=fs,
        window="hann",
        nperseg=nperseg,
        noverlap=noverlap,
        detrend=False,
        return_onesided=False,
        scaling="density",
    )
    order = np.argsort(freqs)
    n_segments = 1 + max(0, (len(x) - nperseg) // (nperseg - noverlap))
    return freqs[order], psd[order], n_segments


def median_bias(n_segments: int) -> float:
    """Median / mean of a K-segment averaged periodogram noise bin.

    Each averaged bin of complex white noise is distributed like
    chi-square with 2K degrees of freedom scaled to unit mean; the median
    of that distribution sits slightly below 1.
    """
    k = max(1, int(n_segments))
    return float(chi2.ppf(0.5, 2 * k) / (2 * k))


def band_slice(freqs: np.ndarray, center_hz: float, band_hz: float):
    """Indices of bins within band_hz around center_hz, clipped to Nyquist.

    Returns (mask, clipped) where clipped says the requested interval ran
    past the available frequency range.
    """
    lo = center_hz - band_hz / 2.0
    hi = center_hz + band_hz / 2.0
    clipped = bool(lo < freqs[0] or hi > freqs[-1])
    mask = (freqs >= max(lo, freqs[0])) & (freqs <= min(hi, freqs[-1]))
    return mask, clipped


def peak_over_median_db(psd_band: np.ndarray) -> float:
    peak = float(np.max(psd_band))
    floor = float(np.median(psd_band))
    if floor <= 0.0:
        return 0.0 if peak <= 0.0 else float("inf")
    return 10.0 * np.log10(peak / floor)


def calibrate_noise_sigma(
    clean: np.ndarray,
    fs: float,
    target_snr_db: float,
    resolution_hz: float = 25e3,
) -> float:
    """Total complex-noise standard deviation achieving the target SNR.

    Solves peak(S + n) / median(S + n) = target on the Welch periodogram of
    the clean signal, treating the noise as a flat floor at its expected
    median.  A zero signal has no defined SNR; sigma falls back to 1.
    """
    _, psd, k = welch_psd(np.asarray(clean, dtype=np.complex128), fs, resolution_hz)
    p_pk = float(np.max(psd)) if psd.size else 0.0
    if p_pk <= 0.0:
        return 1.0

    med_factor = median_bias(k)

    def predicted_db(sigma: float) -> float:
        n_mean = sigma * sigma / fs
        return 10.0 * np.log10((p_pk + n_mean) / np.median(psd + n_mean * med_factor))

    ref = np.sqrt(p_pk * fs)
    lo, hi = ref * 1e-9, ref * 1e9
    if target_snr_db >= predicted_db(lo):
        return lo
    if target_snr_db <= predicted_db(hi):
        return hi
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if predicted_db(mid) > target_snr_db:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))
