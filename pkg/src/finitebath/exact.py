"""Exact benchmark on the full system (x) bath Hilbert space.

Honest brute force at desk scale: the total Hamiltonian is assembled
densely, diagonalized once per protocol segment, and mixed states are
propagated as pure-state ensembles (one member per occupied microlevel, or a
few random vectors from the occupied subspace).  Coarse-graining the result
gives the same trajectory contract as the master-equation solvers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .bath import BathRealization, EnergyWindow, bath_dimension, window_slices
from .emme import SystemSpec
from .errors import ConfigurationError, DimensionCapExceeded, NumericalFailure
from .trajectory import Trajectory

DEFAULT_DIM_CAP = 5000
NORM_TOL = 1e-8


@dataclass
class FullModel:
    """Dense total Hamiltonian H_S (x) 1 + lam sum_a S^a (x) B^a + 1 (x) H_B."""

    h_total: np.ndarray
    levels: np.ndarray
    windows: list[EnergyWindow]
    d_s: int
    d_b: int


@dataclass
class FullEnsemble:
    """Weighted pure-state ensemble representing a mixed initial state.

    ``subspace_entropy`` is the von Neumann entropy of the intended initial
    mixed state (log of the number of occupied microlevels); it is invariant
    under the exact unitary evolution and reused for the mutual-information
    series.
    """

    members: np.ndarray  # (d, m) unit columns
    weights: np.ndarray
    kind: str
    subspace_entropy: float

    def __post_init__(self):
        norms = np.linalg.norm(self.members, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-10):
            raise ConfigurationError("ensemble members must be normalized")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("ensemble weights must be a distribution")


def assemble(
    levels: np.ndarray,
    s_ops: list[np.ndarray],
    realization: BathRealization,
    dim_cap: int = DEFAULT_DIM_CAP,
) -> FullModel:
    """Exact matrix assembly; re-invoked for every protocol segment."""
    levels = np.asarray(levels, dtype=float)
    d_s = len(levels)
    d_b = bath_dimension(realization.windows)
    if d_s * d_b > dim_cap:
        raise DimensionCapExceeded(
            f"total dimension {d_s * d_b} exceeds the cap {dim_cap}"
        )
    lam = realization.lam
    h = np.kron(np.diag(levels), np.eye(d_b)).astype(complex)
    h += np.kron(np.eye(d_s), np.diag(realization.microlevels()))
    for s_op, b_op in zip(s_ops, realization.matrices):
        h += lam * np.kron(s_op, b_op)
    return FullModel(h, levels, realization.windows, d_s, d_b)


def prepare_initial(
    kind: str,
    windows: list[EnergyWindow],
    window_index: int,
    system_state,
    d_s: int,
    members: int = 20,
    seed: int | None = None,
    fill: str = "full",
) -> FullEnsemble:
    """Build the initial ensemble in one bath window.

    kind "basis-ensemble" takes one member per occupied microlevel with
    equal weights (exact representation of the projector state); kind
    "typicality" draws ``members`` Haar-random unit vectors from the span of
    the occupied product states.  fill "half" occupies only the lower half
    of the window's levels.
    """
    if kind not in ("basis-ensemble", "typicality"):
        raise ConfigurationError(f"unknown ensemble kind {kind!r}")
    if fill not in ("full", "half"):
        raise ConfigurationError(f"unknown fill {fill!r}")
    if not 0 <= window_index < len(windows):
        raise ConfigurationError(f"unknown window index {window_index}")
    d_b = bath_dimension(windows)
    sl = window_slices(windows)[window_index]
    occupied = np.arange(sl.start, sl.stop)
    if fill == "half":
        occupied = occupied[: len(occupied) // 2]
    n_occ = len(occupied)

    sys_vec = np.zeros(d_s, dtype=complex)
    if np.isscalar(system_state):
        sys_vec[int(system_state)] = 1.0
    else:
        sys_vec[:] = np.asarray(system_state, dtype=complex)
        sys_vec /= np.linalg.norm(sys_vec)

    dim = d_s * d_b
    if kind == "basis-ensemble":
        cols = np.zeros((dim, n_occ), dtype=complex)
        for m, i in enumerate(occupied):
            vec = np.zeros((d_s, d_b), dtype=complex)
            vec[:, i] = sys_vec
            cols[:, m] = vec.ravel()
        weights = np.full(n_occ, 1.0 / n_occ)
        return FullEnsemble(cols, weights, kind, float(np.log(n_occ)))

    if members < 1:
        raise ConfigurationError("typicality requires at least one member")
    rng = np.random.default_rng(seed)
    cols = np.zeros((dim, members), dtype=complex)
    for m in range(members):
        coeff = rng.standard_normal(n_occ) + 1j * rng.standard_normal(n_occ)
        coeff /= np.linalg.norm(coeff)
        vec = np.zeros((d_s, d_b), dtype=complex)
        vec[:, occupied] = np.outer(sys_vec, coeff)
        cols[:, m] = vec.ravel()
    weights = np.full(members, 1.0 / members)
    return FullEnsemble(cols, weights, kind, float(np.log(n_occ)))


class _SegmentPropagator:
    """Eigendecomposition-based propagator for one static Hamiltonian."""

    def __init__(self, model: FullModel):
        self.evals, self.evecs = np.linalg.eigh(model.h_total)

    def prepare(self, psi: np.ndarray) -> np.ndarray:
        return self.evecs.conj().T @ psi

    def at(self, phi0: np.ndarray, dt: float) -> np.ndarray:
        return self.evecs @ (np.exp(-1j * self.evals * dt)[:, None] * phi0)


def propagate(
    ensemble: FullEnsemble,
    model: FullModel,
    t_grid: np.ndarray,
):
    """Yield (t, member matrix) along a grid for a single static segment.

    The scheme is exact diagonalization, so norms are preserved to roundoff;
    a drift beyond 1e-8 aborts.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ConfigurationError("time grid must be strictly increasing")
    prop = _SegmentPropagator(model)
    phi0 = prop.prepare(ensemble.members)
    for t in t_grid:
        psi = prop.at(phi0, t - t_grid[0])
        _check_norms(psi, t)
        yield t, psi


def _check_norms(psi: np.ndarray, t: float):
    norms = np.linalg.norm(psi, axis=0)
    drift = np.max(np.abs(norms - 1.0))
    if drift > NORM_TOL:
        raise NumericalFailure(f"member norm drifted by {drift:.2e} at t={t:g}")


def coarse_grain(
    psi: np.ndarray,
    weights: np.ndarray,
    d_s: int,
    windows: list[EnergyWindow],
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Ensemble-averaged populations p(eps_k, E) and blocks rho_S(E).

    rho_S(E) = tr_B[rho (1 (x) Pi_E)]; its trace is the window probability,
    so the populations sum to one.
    """
    d_b = bath_dimension(windows)
    m = psi.shape[1]
    tensor = psi.reshape(d_s, d_b, m)
    blocks = []
    pops = np.zeros((d_s, len(windows)))
    for j, sl in enumerate(window_slices(windows)):
        part = tensor[:, sl, :]
        block = np.einsum("aim,bim,m->ab", part, part.conj(), weights)
        blocks.append(block)
        pops[:, j] = np.real(np.diag(block))
    return pops, blocks


def quantum_mutual_information(
    psi: np.ndarray,
    weights: np.ndarray,
    d_s: int,
    d_b: int,
    initial_spectrum_entropy: float,
) -> float:
    """I = S(rho_S) + S(rho_B) - S(rho) for the ensemble-averaged state.

    S(rho) is constant under the exact unitary evolution and is taken from
    the initial spectrum rather than diagonalized.
    """
    tensor = psi.reshape(d_s, d_b, -1)
    rho_s = np.einsum("aim,bim,m->ab", tensor, tensor.conj(), weights)
    rho_b = np.einsum("aim,ajm,m->ij", tensor, tensor.conj(), weights)
    return float(
        _entropy(rho_s) + _entropy(rho_b) - initial_spectrum_entropy
    )


def _entropy(rho: np.ndarray) -> float:
    w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    w = np.clip(w.real, 0.0, None)
    w = w[w > 0]
    return float(-np.sum(w * np.log(w)))


def run_exact(
    system: SystemSpec,
    realization: BathRealization,
    ensemble: FullEnsemble,
    t_grid: np.ndarray,
    *,
    mi_stride: int = 0,
    dim_cap: int = DEFAULT_DIM_CAP,
    solver_name: str = "exact",
) -> Trajectory:
    """Full benchmark run: propagate, coarse-grain, optionally track mutual information.

    ``mi_stride`` > 0 samples the quantum mutual information every that many
    grid points (the reduced bath matrix must be diagonalized, which is the
    only expensive observable).
    """
    if system.n_baths != 1:
        raise ConfigurationError("the exact benchmark supports a single bath")
    t_grid = np.asarray(t_grid, dtype=float)
    if ensemble.kind == "typicality" and ensemble.members.shape[1] < 20:
        warnings.warn(
            "fewer than 20 typicality members; sampling error "
            f"~{1.0 / np.sqrt(ensemble.members.shape[1] * np.exp(ensemble.subspace_entropy)):.1e} "
            "per population",
            stacklevel=2,
        )

    segs = system.segments(t_grid[0])
    boundaries = [seg.t_start for seg in segs[1:]] + [np.inf]
    props: dict[tuple, _SegmentPropagator] = {}

    def propagator_for(levels: np.ndarray) -> _SegmentPropagator:
        key = tuple(np.round(levels, 12))
        if key not in props:
            model = assemble(levels, system.couplings[0], realization, dim_cap)
            props[key] = _SegmentPropagator(model)
        return props[key]

    d_s = system.dim
    d_b = bath_dimension(realization.windows)
    n_win = len(realization.windows)

    pops_out = np.zeros((t_grid.size, d_s * n_win))
    levels_out = np.zeros((t_grid.size, d_s))
    blocks_out = {(j,): np.zeros((t_grid.size, d_s, d_s), dtype=complex) for j in range(n_win)}
    mi_times, mi_vals = [], []

    seg_idx = 0
    seg_t0 = t_grid[0]
    prop = propagator_for(segs[0].levels)
    phi0 = prop.prepare(ensemble.members)

    for n, t in enumerate(t_grid):
        while t >= boundaries[seg_idx] - 1e-12 and np.isfinite(boundaries[seg_idx]):
            # carry the state across the quench, then switch the Hamiltonian
            psi_b = prop.at(phi0, boundaries[seg_idx] - seg_t0)
            seg_t0 = boundaries[seg_idx]
            seg_idx += 1
            prop = propagator_for(segs[seg_idx].levels)
            phi0 = prop.prepare(psi_b)
        psi = prop.at(phi0, t - seg_t0)
        _check_norms(psi, t)
        pops, blocks = coarse_grain(psi, ensemble.weights, d_s, realization.windows)
        # trajectory columns: all levels of window 0, then window 1, ...
        pops_out[n] = pops.T.ravel()
        levels_out[n] = segs[seg_idx].levels
        for j in range(n_win):
            blocks_out[(j,)][n] = blocks[j]
        if mi_stride and n % mi_stride == 0:
            mi_times.append(t)
            mi_vals.append(
                quantum_mutual_information(
                    psi, ensemble.weights, d_s, d_b, ensemble.subspace_entropy
                )
            )

    joint_index = [(k, (j,)) for j in range(n_win) for k in range(d_s)]
    return Trajectory(
        solver=solver_name,
        times=t_grid,
        joint_index=joint_index,
        populations=pops_out,
        level_energies=levels_out,
        bath_centers=[realization.centers],
        bath_volumes=[realization.volumes.astype(float)],
        blocks=blocks_out,
        mi=np.array(mi_vals) if mi_vals else None,
        mi_times=np.array(mi_times) if mi_times else None,
        meta={
            "ensemble": ensemble.kind,
            "members": int(ensemble.members.shape[1]),
            "dimension": d_s * d_b,
        },
    )
