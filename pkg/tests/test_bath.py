import numpy as np
import pytest

from finitebath.bath import (
    BathSpec,
    CouplingSpec,
    EnergyWindow,
    bath_dimension,
    build_spectrum,
    microcanonical_average,
    sample_coupling,
    split_interaction,
    window_slices,
)
from finitebath.errors import ConfigurationError

from conftest import two_band_realization


def test_regular_grid_matches_arithmetic_formula():
    spec = BathSpec([EnergyWindow(1.0, 0.5, 4)], "regular")
    (win,) = build_spectrum(spec)
    assert np.allclose(win.microlevels, [0.75, 0.875, 1.0, 1.125])


def test_regular_single_level_sits_at_lower_edge():
    spec = BathSpec([EnergyWindow(2.0, 0.5, 1)], "regular")
    (win,) = build_spectrum(spec)
    assert np.allclose(win.microlevels, [1.75])


def test_random_uniform_mean_and_containment():
    delta, volume = 0.5, 1000
    spec = BathSpec([EnergyWindow(1.0, delta, volume)], "random-uniform", seed=5)
    (win,) = build_spectrum(spec)
    # empirical mean of V i.i.d. uniforms; tolerance 3 delta / (2 sqrt(12 V))
    assert abs(np.mean(win.microlevels) - 1.0) <= 3 * delta / (2 * np.sqrt(12 * volume))
    assert np.all(win.microlevels >= win.lo) and np.all(win.microlevels < win.hi)
    assert np.all(np.diff(win.microlevels) >= 0)


def test_random_uniform_deterministic_given_seed():
    spec = BathSpec([EnergyWindow(0.0, 0.5, 50)], "random-uniform", seed=3)
    a = build_spectrum(spec)[0].microlevels
    b = build_spectrum(spec)[0].microlevels
    assert np.array_equal(a, b)


def test_random_uniform_requires_seed():
    spec = BathSpec([EnergyWindow(0.0, 0.5, 5)], "random-uniform")
    with pytest.raises(ConfigurationError):
        build_spectrum(spec)


def test_window_invariants_over_seeds():
    for seed in range(6):
        spec = BathSpec(
            [EnergyWindow(0.0, 0.5, 40), EnergyWindow(1.0, 0.5, 60), EnergyWindow(2.0, 0.5, 10)],
            "random-uniform",
            seed=seed,
        )
        wins = build_spectrum(spec)
        for w in wins:
            assert len(w.microlevels) == w.volume
            assert np.all((w.microlevels >= w.lo) & (w.microlevels < w.hi))
        for w1, w2 in zip(wins, wins[1:]):
            assert w1.hi <= w2.lo + 1e-15


def test_overlapping_windows_rejected():
    with pytest.raises(ConfigurationError):
        BathSpec([EnergyWindow(0.0, 1.0, 4), EnergyWindow(0.5, 1.0, 4)])


def test_volume_below_one_rejected():
    spec = BathSpec([EnergyWindow(0.0, 0.5, 0)])
    with pytest.raises(ConfigurationError):
        build_spectrum(spec)


def test_zero_variance_coupling_is_the_block_mean():
    spec = BathSpec([EnergyWindow(0.0, 0.5, 3), EnergyWindow(1.0, 0.5, 4)])
    wins = build_spectrum(spec)
    b0 = 0.7 - 0.2j
    real = sample_coupling(CouplingSpec(lam=1.0, block_mean=b0, variance=0.0), wins)
    mat = real.matrices[0]
    sl0, sl1 = window_slices(wins)
    assert np.all(mat[sl0, sl1] == b0)
    assert np.all(mat[sl1, sl0] == np.conj(b0))


def test_sampled_entry_second_moment():
    real = two_band_realization(seed=21)
    sl0, sl1 = real.window_slice(0), real.window_slice(1)
    block = real.matrices[0][sl0, sl1]
    n = block.size
    # |c|^2 has unit mean and unit variance for a^2 = 1
    assert abs(np.mean(np.abs(block) ** 2) - 1.0) <= 3.0 / np.sqrt(n)


def test_coupling_hermitian_with_zero_diagonal_blocks():
    real = two_band_realization(v0=40, v1=60, seed=4)
    mat = real.matrices[0]
    assert np.array_equal(mat, mat.conj().T)
    for j, sl in enumerate(window_slices(real.windows)):
        assert np.all(mat[sl, sl] == 0)
        assert microcanonical_average(mat, real.windows, j) == 0


def test_coupling_deterministic_given_seed():
    a = two_band_realization(v0=30, v1=40, seed=9).matrices[0]
    b = two_band_realization(v0=30, v1=40, seed=9).matrices[0]
    assert np.array_equal(a, b)


def test_microcanonical_average_identity_and_hb():
    spec = BathSpec([EnergyWindow(1.0, 0.5, 4)])
    wins = build_spectrum(spec)
    eye = np.eye(4, dtype=complex)
    assert microcanonical_average(eye, wins, 0) == pytest.approx(1.0)
    h_b = np.diag(wins[0].microlevels).astype(complex)
    # mean of {0.75, 0.875, 1.0, 1.125}
    assert microcanonical_average(h_b, wins, 0) == pytest.approx(0.9375)
    with pytest.raises(ConfigurationError):
        microcanonical_average(eye, wins, 3)


def test_split_interaction_on_block_offdiagonal_coupling():
    real = two_band_realization(v0=20, v1=30, seed=2)
    s = np.array([[0.0, 1.0], [1.0, 0.0]])
    shifts, rest = split_interaction(real.matrices[0], s, real.lam, real.windows)
    for dh in shifts:
        assert np.max(np.abs(dh)) == 0
    assert np.array_equal(rest, real.matrices[0])


def test_split_interaction_on_window_projector():
    spec = BathSpec([EnergyWindow(0.0, 0.5, 3), EnergyWindow(1.0, 0.5, 2)])
    wins = build_spectrum(spec)
    dim = bath_dimension(wins)
    proj = np.zeros((dim, dim), dtype=complex)
    sl0 = window_slices(wins)[0]
    proj[sl0, sl0] = np.eye(3)
    s = np.diag([1.0, -1.0])
    lam = 0.3
    shifts, rest = split_interaction(proj, s, lam, wins)
    assert np.allclose(shifts[0], lam * s)
    assert np.max(np.abs(shifts[1])) == 0
    assert np.max(np.abs(rest)) == 0


def test_split_interaction_reconstructs_and_centers():
    rng = np.random.default_rng(8)
    spec = BathSpec([EnergyWindow(0.0, 0.5, 4), EnergyWindow(1.0, 0.5, 5)])
    wins = build_spectrum(spec)
    dim = bath_dimension(wins)
    raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    b_int = 0.5 * (raw + raw.conj().T)
    s = np.array([[0.2, 0.5], [0.5, -0.1]], dtype=complex)
    lam = 0.7
    shifts, rest = split_interaction(b_int, s, lam, wins)
    for j in range(len(wins)):
        assert abs(microcanonical_average(rest, wins, j)) < 1e-14
    # reconstruction: lam S (x) B_int = sum_E dH(E) (x) Pi_E + lam S (x) B
    lhs = lam * np.kron(s, b_int)
    rhs = lam * np.kron(s, rest)
    for dh, sl in zip(shifts, window_slices(wins)):
        pi = np.zeros((dim, dim))
        pi[sl, sl] = np.eye(sl.stop - sl.start)
        rhs = rhs + np.kron(dh, pi)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12
