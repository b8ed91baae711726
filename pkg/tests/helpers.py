"""Shared test utilities: a small fast display panel and metric helpers."""

from __future__ import annotations

import numpy as np

from emgleam.emanator import DisplayTiming, LeakageModel

# Small panel whose pixel clock (~865 kHz) fits entirely inside the default
# capture band, so captures are effectively lossless and fast.
LAB_W, LAB_H = 96, 128
LAB_TIMING = DisplayTiming.for_visible(LAB_W, LAB_H)  # x_t=106, y_t=136
LAB_LEAK = LeakageModel()
LAB_FS = 2.5e6
LAB_BW = 1.25e6


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of two pixel grids."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a @ a) * (b @ b))
    return float(a @ b / denom) if denom > 0 else 0.0


def random_grid_raster(seed: int, rows: int = 3, cols: int = 4):
    from emgleam.raster import render_digit_grid

    rng = np.random.default_rng(seed)
    digits = [str(d) for d in rng.integers(0, 10, rows * cols)]
    return render_digit_grid(rows, cols, digits, LAB_W, LAB_H)
