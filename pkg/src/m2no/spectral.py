"""Radial energy-spectrum analysis of 2D fields.

The FFT is an iterative radix-2 decimation-in-time Cooley-Tukey transform
for power-of-two sizes, matching the plain DFT definition with no
normalization.  The radial spectrum bins squared magnitudes by the integer
floor of the centered frequency radius and reports the per-bin mean, so
the sum of (count x mean) over bins recovers the total spectral energy
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_float_array, check_power_of_two


def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=int)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_last_axis(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    out = x[..., _bit_reversal(n)].astype(complex)
    m = 1
    while m < n:
        twiddle = np.exp(-1j * np.pi * np.arange(m) / m)
        out = out.reshape(out.shape[:-1] + (n // (2 * m), 2, m))
        even = out[..., 0, :]
        odd = out[..., 1, :] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=-1)
        out = out.reshape(out.shape[:-2] + (n,))
        m *= 2
    return out


def fft2(field) -> np.ndarray:
    """Unnormalized 2D DFT of a power-of-two-sized real or complex grid."""
    arr = np.asarray(getattr(field, "data", field))
    if arr.ndim != 2:
        raise ValueError(f"fft2 expects a 2D field, got shape {arr.shape}")
    for n in arr.shape:
        check_power_of_two(n)
    out = _fft_last_axis(arr.astype(complex))
    out = _fft_last_axis(out.swapaxes(0, 1)).swapaxes(0, 1)
    return out


def _centered_radius(shape: tuple[int, int]) -> np.ndarray:
    fy = (np.arange(shape[0]) + shape[0] // 2) % shape[0] - shape[0] // 2
    fx = (np.arange(shape[1]) + shape[1] // 2) % shape[1] - shape[1] // 2
    return np.floor(np.hypot(fy[:, None], fx[None, :])).astype(int)


@dataclass(frozen=True)
class Spectrum:
    """Mean squared Fourier magnitude per integer radial frequency bin."""

    radii: np.ndarray
    mean_energy: np.ndarray
    counts: np.ndarray

    def total_energy(self) -> float:
        return float(np.sum(self.counts * self.mean_energy))


def _bin_power(power: np.ndarray) -> Spectrum:
    radius = _centered_radius(power.shape)
    counts = np.bincount(radius.ravel())
    sums = np.bincount(radius.ravel(), weights=power.ravel())
    radii = np.arange(len(counts))
    return Spectrum(radii=radii, mean_energy=sums / counts, counts=counts)


def radial_spectrum(error_field) -> Spectrum:
    """Bin |fft2(field)|^2 by integer radius with DC in bin 0."""
    arr = as_float_array(error_field, "error field")
    if arr.ndim != 2:
        raise ValueError(f"radial spectrum expects a 2D field, got shape {arr.shape}")
    power = np.abs(fft2(arr)) ** 2
    return _bin_power(power)


def average_spectrum(error_fields) -> Spectrum:
    """Spectrum of the mean power over a collection of same-shape fields."""
    fields = list(error_fields)
    if not fields:
        raise ValueError("need at least one field")
    power = None
    for f in fields:
        p = np.abs(fft2(as_float_array(f, "error field"))) ** 2
        power = p if power is None else power + p
    return _bin_power(power / len(fields))
