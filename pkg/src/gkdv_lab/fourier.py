"""Periodic-grid helpers: wavenumbers, spectral derivatives, exact shifts."""

from __future__ import annotations

import numpy as np


def wavenumbers(n: int, length: float) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(n, d=length / n)


def _odd_symbol(k: np.ndarray, n: int) -> np.ndarray:
    # the Nyquist mode has no well-defined odd derivative on a real grid
    k = k.copy()
    if n % 2 == 0:
        k[n // 2] = 0.0
    return k


def derivative(u: np.ndarray, length: float, order: int = 1) -> np.ndarray:
    n = u.shape[-1]
    k = wavenumbers(n, length)
    if order % 2:
        k = _odd_symbol(k, n)
    return np.fft.ifft((1j * k) ** order * np.fft.fft(u)).real


def shift(u: np.ndarray, length: float, offset) -> np.ndarray:
    """Samples of u(x - offset) by trigonometric interpolation."""
    n = u.shape[-1]
    k = _odd_symbol(wavenumbers(n, length), n)
    return np.fft.ifft(np.exp(-1j * k * offset) * np.fft.fft(u)).real


def shift_many(u: np.ndarray, length: float, offsets) -> np.ndarray:
    """Rows of u(x - offset_j) for every offset."""
    n = u.shape[-1]
    k = _odd_symbol(wavenumbers(n, length), n)
    phases = np.exp(-1j * np.outer(np.atleast_1d(offsets), k))
    return np.fft.ifft(phases * np.fft.fft(u), axis=-1).real


def derivative_matrix(n: int, length: float, order: int) -> np.ndarray:
    """Dense spectral differentiation matrix on n equispaced periodic points."""
    k = wavenumbers(n, length)
    if order % 2:
        k = _odd_symbol(k, n)
    symbol = (1j * k) ** order
    eye = np.eye(n)
    mat = np.fft.ifft(symbol[:, None] * np.fft.fft(eye, axis=0), axis=0).real
    # remove round-off asymmetry: odd orders are skew, even orders symmetric
    if order % 2:
        return 0.5 * (mat - mat.T)
    return 0.5 * (mat + mat.T)


def cumulative_integral(w: np.ndarray, length: float, x: np.ndarray) -> np.ndarray:
    """W(x) = integral of w from the left end of the periodic window to x.

    Exact for trigonometric interpolants; w is assumed negligible at the ends.
    """
    n = w.shape[-1]
    h = length / n
    total = h * w.sum()
    k = wavenumbers(n, length)
    w_hat = np.fft.fft(w - total / length)
    w_hat[0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        anti_hat = np.where(k != 0, w_hat / (1j * k), 0.0)
    if n % 2 == 0:
        anti_hat[n // 2] = 0.0
    periodic = np.fft.ifft(anti_hat).real
    return periodic - periodic[0] + total * (x - x[0]) / length
