"""Tests for the FFT and radial energy spectrum."""

import numpy as np
import pytest

from m2no.spectral import average_spectrum, fft2, radial_spectrum


def naive_dft2(x):
    """O(n^4) oracle straight from the DFT definition."""
    ny, nx = x.shape
    out = np.zeros((ny, nx), dtype=complex)
    for ky in range(ny):
        for kx in range(nx):
            total = 0.0 + 0.0j
            for j in range(ny):
                for i in range(nx):
                    total += x[j, i] * np.exp(-2j * np.pi * (ky * j / ny + kx * i / nx))
            out[ky, kx] = total
    return out


def test_delta_field_has_flat_transform():
    x = np.zeros((8, 8))
    x[0, 0] = 1.0
    out = fft2(x)
    assert np.max(np.abs(np.abs(out) - 1.0)) < 1e-12


def test_single_mode_has_two_peaks():
    n = 16
    j = np.arange(n)
    x = np.outer(np.sin(2 * np.pi * 3 * j / n), np.ones(n))
    out = np.abs(fft2(x))
    mask = np.zeros_like(out, dtype=bool)
    mask[3, 0] = mask[n - 3, 0] = True
    assert np.all(out[~mask] < 1e-9)
    assert np.all(out[mask] > 1.0)


def test_fft_matches_naive_dft():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 16))
    mine = fft2(x)
    oracle = naive_dft2(x)
    assert np.max(np.abs(mine - oracle)) < 1e-11 * np.max(np.abs(oracle))


def test_parseval():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(32, 32))
    out = fft2(x)
    total = np.sum(np.abs(out) ** 2)
    assert abs(total - x.size * np.sum(x**2)) < 1e-10 * total


def test_non_power_of_two_rejected():
    with pytest.raises(ValueError):
        fft2(np.zeros((12, 12)))
    with pytest.raises(ValueError):
        fft2(np.zeros(16))


def test_zero_field_spectrum():
    spec = radial_spectrum(np.zeros((16, 16)))
    assert np.all(spec.mean_energy == 0.0)


def test_single_mode_lands_in_its_radius_bin():
    n = 32
    j = np.arange(n)
    for r in (3, 5, 9):
        x = np.cos(2 * np.pi * r * np.outer(j, np.ones(n)) / n)
        spec = radial_spectrum(x)
        energies = spec.mean_energy * spec.counts
        assert energies[r] > 0
        others = np.delete(energies, r)
        assert np.max(others) < 1e-16 * energies[r]


def test_binning_preserves_total_energy():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(64, 64))
    spec = radial_spectrum(x)
    total = np.sum(np.abs(fft2(x)) ** 2)
    assert abs(spec.total_energy() - total) < 1e-10 * total


def test_white_noise_spectrum_is_flat():
    # statistical oracle: average power over 100 seeded realizations
    n = 64
    fields = [np.random.default_rng(seed).normal(size=(n, n)) for seed in range(100)]
    spec = average_spectrum(fields)
    global_mean = spec.total_energy() / np.sum(spec.counts)
    rich = spec.counts >= 32
    ratios = spec.mean_energy[rich] / global_mean
    assert np.all(ratios > 0.9) and np.all(ratios < 1.1)


def test_rotation_invariance():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(32, 32))
    s1 = radial_spectrum(x)
    s2 = radial_spectrum(np.rot90(x))
    assert np.max(np.abs(s1.mean_energy - s2.mean_energy)) < 1e-10 * np.max(s1.mean_energy)


def test_dc_sits_in_bin_zero():
    x = np.full((16, 16), 2.5)
    spec = radial_spectrum(x)
    assert spec.counts[0] == 1
    assert spec.mean_energy[0] > 0
    assert np.all(spec.mean_energy[1:] < 1e-18 * spec.mean_energy[0])


def test_average_spectrum_of_identical_fields():
    x = np.random.default_rng(4).normal(size=(16, 16))
    single = radial_spectrum(x)
    averaged = average_spectrum([x, x, x])
    assert np.max(np.abs(single.mean_energy - averaged.mean_energy)) < 1e-12 * np.max(single.mean_energy)
