"""Standard weak-coupling comparison equation with a fixed Gibbs reference bath.

The reduced system alone evolves under a secular dissipator whose up/down
rates obey the Gibbs ratio at a fixed reference temperature; the stationary
state is the canonical one at that temperature regardless of how the actual
finite bath evolves.  Used as the baseline the conditioned-state solvers are
benchmarked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .emme import SystemSpec, s_omega_decomposition
from .errors import ConfigurationError, NumericalFailure
from .rates import RateTable
from .thermo import effective_temperature
from .trajectory import Trajectory


@dataclass
class BmsRates:
    """Reference temperature and per-frequency downward rates.

    The upward rate at frequency omega > 0 is down * exp(-omega / T_can), so
    detailed balance with respect to Gibbs(T_can) holds by construction.
    T_can = 0.0 is the zero-temperature marker (no upward jumps) and
    math.inf the infinite-temperature one (symmetric jumps).
    """

    t_can: float
    down: dict[float, float] = field(default_factory=dict)

    def up(self, omega: float) -> float:
        d = self.down.get(omega, 0.0)
        if self.t_can == 0.0:
            return 0.0
        if math.isinf(self.t_can):
            return d
        return d * math.exp(-omega / self.t_can)


def choose_reference_temperature(
    bath_populations: np.ndarray,
    centers: np.ndarray,
    volumes: np.ndarray,
) -> float:
    """Default T_can: effective temperature of the initial bath marginal.

    The comparison equation needs a reference temperature the underlying
    theory does not fix; matching the initial bath energy is the declared
    default and can be overridden in the scenario configuration.
    """
    centers = np.asarray(centers, dtype=float)
    if centers.size < 2:
        raise ConfigurationError(
            "a single bath band has no energy scale; set the reference "
            "temperature explicitly"
        )
    u_b = float(np.sum(centers * np.asarray(bath_populations)))
    return effective_temperature(centers, volumes, u_b).temperature


def bms_rates_from_table(
    table: RateTable,
    initial_window: int,
    levels: np.ndarray,
    t_can: float,
) -> BmsRates:
    """Set the downward rate scale from the rate table at the initial shell.

    For each positive system gap omega the downward rate is
    gamma(E0, E0+omega) / V_{E0+omega}; the magnitude only affects
    transients, never the (Gibbs) fixed point.
    """
    levels = np.asarray(levels, dtype=float)
    down = {}
    gaps = sorted({round(float(a - b), 12) for a in levels for b in levels if a > b})
    for omega in gaps:
        j_up = table.target_window(initial_window, omega)
        if j_up is None:
            continue
        g = table.gamma_entry(j_up, initial_window)[0, 0].real
        down[omega] = g / table.volumes[j_up]
    return BmsRates(t_can, down)


def bms_generator(
    rho: np.ndarray,
    rates: BmsRates,
    s_omega: dict[float, np.ndarray],
    h_system: np.ndarray,
) -> np.ndarray:
    """Secular dissipator on the reduced state with Gibbs-ratio rates."""
    d_rho = -1j * (h_system @ rho - rho @ h_system)
    for omega, s_op in s_omega.items():
        if omega > 0:
            for rate, op in ((rates.down.get(omega, 0.0), s_op),
                             (rates.up(omega), s_op.conj().T)):
                if rate == 0.0:
                    continue
                opd = op.conj().T
                d_rho += rate * (op @ rho @ opd - 0.5 * (opd @ op @ rho + rho @ opd @ op))
        elif omega == 0.0:
            rate = rates.down.get(0.0, 0.0)
            if rate:
                d_rho += rate * (
                    s_op @ rho @ s_op.conj().T
                    - 0.5 * (s_op.conj().T @ s_op @ rho + rho @ s_op.conj().T @ s_op)
                )
    return d_rho


def evolve_bms(
    rho0: np.ndarray,
    system: SystemSpec,
    rates: BmsRates,
    t_grid: np.ndarray,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> Trajectory:
    """Reduced-state trajectory under the comparison equation.

    Emits the shared trajectory contract with no bath bookkeeping (empty
    window keys); only reduced populations are meaningful downstream.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    d = system.dim
    s_op = system.couplings[0][0]

    times, pops, levels_out = [], [], []
    y = np.asarray(rho0, dtype=complex).ravel()
    segs = system.segments(t_grid[0])
    for n, seg in enumerate(segs):
        t0 = max(seg.t_start, t_grid[0])
        t1 = segs[n + 1].t_start if n + 1 < len(segs) else t_grid[-1]
        if t0 >= t_grid[-1] and n > 0:
            break
        h_seg = np.diag(seg.levels).astype(complex)
        s_om = s_omega_decomposition(s_op, seg.levels)

        def rhs(t, yy, h=h_seg, so=s_om):
            return bms_generator(yy.reshape(d, d), rates, so, h).ravel()

        if n + 1 < len(segs):
            mask = (t_grid >= t0 - 1e-12) & (t_grid < t1 - 1e-12)
        else:
            mask = t_grid >= t0 - 1e-12
        grid = t_grid[mask]
        if grid.size and abs(grid[0] - t0) < 1e-12:
            times.append(t0)
            pops.append(np.real(np.diag(y.reshape(d, d))))
            levels_out.append(seg.levels)
            grid = grid[1:]
        if t1 > t0:
            eval_pts = np.unique(np.concatenate([grid, [t1]]))
            sol = solve_ivp(rhs, (t0, t1), y, method="DOP853",
                            t_eval=eval_pts, rtol=rtol, atol=atol)
            if not sol.success:
                raise NumericalFailure(f"integrator failed: {sol.message}")
            for m, t_rec in enumerate(sol.t):
                if grid.size and np.min(np.abs(grid - t_rec)) < 1e-12:
                    times.append(float(t_rec))
                    pops.append(np.real(np.diag(sol.y[:, m].reshape(d, d))))
                    levels_out.append(seg.levels)
            y = sol.y[:, -1]

    return Trajectory(
        solver="bms",
        times=np.array(times),
        joint_index=[(k, ()) for k in range(d)],
        populations=np.stack(pops),
        level_energies=np.stack(levels_out),
        bath_centers=[],
        bath_volumes=[],
        meta={"t_can": rates.t_can, "down_rates": dict(rates.down)},
    )
