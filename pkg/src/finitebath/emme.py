"""Master equation for a system conditioned on coarse-grained bath energies.

The state is a map from a vector of bath window indices to an unnormalized
positive system block; its evolution couples neighboring blocks through
jump operators resolved by the resonance rule.  Both the Markov form and the
finite-time variant (all dissipation rates multiplied by the envelope
zeta(t)) are provided, together with the autonomous population rate
equation, equilibrium states, and a closed-form oracle for the two-level
case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigurationError, NumericalFailure
from .rates import RateTable, lamb_shift, transition_rates, xi_integral, zeta
from .trajectory import Trajectory

POSITIVITY_TOL = 1e-10
TRACE_TOL = 1e-8


@dataclass
class ProtocolSegment:
    t_start: float
    levels: np.ndarray


@dataclass
class SystemSpec:
    """System levels, per-bath coupling operators, and the driving protocol.

    ``couplings[nu]`` is the list of coupling operators S^alpha (matrices in
    the level basis) attached to bath nu.  The protocol is a piecewise
    constant schedule of level energies; segment boundaries must be strictly
    increasing and each segment's gaps must be resolvable by the resonance
    rule of the rate tables in use.
    """

    levels: np.ndarray
    couplings: list[list[np.ndarray]]
    protocol: list[ProtocolSegment] | None = None

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float)
        if self.protocol is not None:
            starts = [seg.t_start for seg in self.protocol]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ConfigurationError("protocol segment boundaries must be strictly increasing")
            for seg in self.protocol:
                seg.levels = np.asarray(seg.levels, dtype=float)

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def n_baths(self) -> int:
        return len(self.couplings)

    def segments(self, t0: float = 0.0) -> list[ProtocolSegment]:
        if self.protocol is None:
            return [ProtocolSegment(t0, self.levels)]
        return self.protocol

    def levels_at(self, t: float) -> np.ndarray:
        segs = self.segments()
        current = segs[0].levels
        for seg in segs:
            if seg.t_start <= t + 1e-12:
                current = seg.levels
        return current


@dataclass
class ConditionedState:
    """Map from a bath-energy key to an unnormalized positive system block.

    Keys are tuples of per-bath window indices; the trace over all blocks is
    the total probability and is conserved by the generator, not enforced.
    """

    blocks: dict[tuple[int, ...], np.ndarray]
    time: float = 0.0

    def copy(self) -> "ConditionedState":
        return ConditionedState({k: v.copy() for k, v in self.blocks.items()}, self.time)

    def trace(self) -> float:
        return float(sum(np.trace(b).real for b in self.blocks.values()))

    def populations(self) -> dict[tuple[int, tuple[int, ...]], float]:
        out = {}
        for key, block in self.blocks.items():
            for k in range(block.shape[0]):
                out[(k, key)] = block[k, k].real
        return out

    def check(self, pos_tol: float = POSITIVITY_TOL, trace_tol: float = TRACE_TOL):
        for key, block in self.blocks.items():
            if np.max(np.abs(block - block.conj().T)) > 1e-10:
                raise NumericalFailure(f"block {key} not Hermitian")
            w = np.linalg.eigvalsh(0.5 * (block + block.conj().T))
            if w.min() < -pos_tol:
                raise NumericalFailure(
                    f"block {key} has negative eigenvalue {w.min():.3e}"
                )
        if abs(self.trace() - 1.0) > trace_tol:
            raise NumericalFailure(f"state trace {self.trace():.12f} deviates from 1")


@dataclass
class ShellDistribution:
    """Probability of each conserved total-energy shell."""

    values: dict[float, float]

    def __post_init__(self):
        if any(p < -1e-12 for p in self.values.values()):
            raise ConfigurationError("shell probabilities must be nonnegative")


def s_omega_decomposition(s_op: np.ndarray, levels: np.ndarray) -> dict[float, np.ndarray]:
    """Split a coupling operator by system transition frequency.

    S_omega collects the matrix elements <k|S|q> with eps_q - eps_k = omega,
    i.e. the part of S through which the system hands energy omega to the
    bath.  The pieces sum back to S and satisfy S_{-omega} = S_omega^dag for
    Hermitian S.
    """
    levels = np.asarray(levels, dtype=float)
    d = len(levels)
    pieces: dict[float, np.ndarray] = {}
    for k in range(d):
        for q in range(d):
            if s_op[k, q] == 0:
                continue
            omega = round(float(levels[q] - levels[k]), 12)
            if omega not in pieces:
                pieces[omega] = np.zeros((d, d), dtype=complex)
            pieces[omega][k, q] = s_op[k, q]
    return pieces


def _merge_omegas(per_op: list[dict[float, np.ndarray]], d: int) -> dict[float, list[np.ndarray]]:
    omegas = sorted({w for p in per_op for w in p})
    return {
        w: [p.get(w, np.zeros((d, d), dtype=complex)) for p in per_op]
        for w in omegas
    }


def reachable_keys(
    initial: set[tuple[int, ...]],
    tables: list[RateTable],
    omega_sets: list[set[float]],
) -> list[tuple[int, ...]]:
    """Closure of the initial keys under resonant window moves of every bath."""
    seen = set(initial)
    frontier = list(initial)
    while frontier:
        key = frontier.pop()
        for nu, table in enumerate(tables):
            for omega in omega_sets[nu]:
                for sign in (+1.0, -1.0):
                    j = table.target_window(key[nu], sign * omega)
                    if j is None:
                        continue
                    nxt = key[:nu] + (j,) + key[nu + 1 :]
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
    return sorted(seen)


def _gamma_strict(table: RateTable, i: int, j: int) -> np.ndarray:
    """Rate entry for a reachable transition; zero only on the block diagonal."""
    g = table.gamma.get((i, j))
    if g is None:
        if i == j:
            return np.zeros((table.n_ops, table.n_ops), dtype=complex)
        raise ConfigurationError(
            f"rate table has no entry for the reachable window pair "
            f"(E={table.centers[i]:g}, E'={table.centers[j]:g})"
        )
    return g


class EmmeGenerator:
    """Wiring of the conditioned-state generator for one protocol segment.

    ``gain_convention`` selects which neighboring block feeds the gain term
    when the system emits a quantum omega: "conserving" (default) takes it
    from the block whose bath energy is lower by omega, which conserves the
    coarse-grained total energy; "inverted" takes the block higher by omega
    while keeping the same rate coefficient.  The inverted variant exists
    only to demonstrate that the opposite index choice breaks total-energy
    conservation (see the test suite); do not use it for production runs.
    """

    def __init__(
        self,
        levels: np.ndarray,
        couplings: list[list[np.ndarray]],
        tables: list[RateTable],
        keys: list[tuple[int, ...]],
        gain_convention: str = "conserving",
        include_shift: bool = True,
        delta_h: list[list[np.ndarray]] | None = None,
    ):
        if gain_convention not in ("conserving", "inverted"):
            raise ConfigurationError(f"unknown gain convention {gain_convention!r}")
        if len(tables) != len(couplings):
            raise ConfigurationError("one rate table per bath is required")
        self.levels = np.asarray(levels, dtype=float)
        self.tables = tables
        self.keys = list(keys)
        self.key_index = {k: n for n, k in enumerate(self.keys)}
        d = len(levels)
        self.dim = d
        self.s_omega = [
            _merge_omegas([s_omega_decomposition(s, levels) for s in ops], d)
            for ops in couplings
        ]

        shifts: list[list[np.ndarray]] = []
        for nu, table in enumerate(tables):
            dh = delta_h[nu] if delta_h is not None else None
            if include_shift:
                h_ls, _ = lamb_shift(table, self.s_omega[nu], np.zeros((d, d)), None)
            else:
                h_ls = [np.zeros((d, d), dtype=complex) for _ in table.centers]
            if dh is not None:
                h_ls = [h + np.diag(np.diag(dhw)) for h, dhw in zip(h_ls, dh)]
            shifts.append(h_ls)

        h_base = np.diag(self.levels).astype(complex)
        self.h_prime: list[np.ndarray] = []
        self.loss: list[np.ndarray] = []
        self.gains: list[list[tuple[int, int, complex, np.ndarray, np.ndarray]]] = []
        # per target block: (source block index, bath, coefficient, S_a, S_a' dagger)
        for key in self.keys:
            h = h_base.copy()
            g_loss = np.zeros((d, d), dtype=complex)
            gain_list = []
            for nu, table in enumerate(tables):
                j_here = key[nu]
                h += shifts[nu][j_here]
                for omega, ops in self.s_omega[nu].items():
                    # loss: bath window at E + omega absorbs the emitted quantum
                    j_up = table.target_window(j_here, omega)
                    if j_up is not None:
                        g = _gamma_strict(table, j_up, j_here) / table.volumes[j_here]
                        for a in range(table.n_ops):
                            for ap in range(table.n_ops):
                                if g[a, ap] != 0:
                                    g_loss += g[a, ap] * (ops[ap].conj().T @ ops[a])
                    # gain: rate gamma(E, E - omega)/V_{E-omega}
                    j_dn = table.target_window(j_here, -omega)
                    if j_dn is None:
                        continue
                    if gain_convention == "conserving":
                        src = key[:nu] + (j_dn,) + key[nu + 1 :]
                    else:
                        if j_up is None:
                            continue
                        src = key[:nu] + (j_up,) + key[nu + 1 :]
                    src_idx = self.key_index.get(src)
                    if src_idx is None:
                        continue
                    g = _gamma_strict(table, j_here, j_dn) / table.volumes[j_dn]
                    for a in range(table.n_ops):
                        for ap in range(table.n_ops):
                            if g[a, ap] != 0:
                                gain_list.append(
                                    (src_idx, nu, g[a, ap], ops[a], ops[ap].conj().T)
                                )
            self.h_prime.append(h)
            self.loss.append(g_loss)
            self.gains.append(gain_list)

    def derivative_blocks(
        self, blocks: list[np.ndarray], zeta_factors: list[float] | None = None
    ) -> list[np.ndarray]:
        """d/dt of every block; zeta_factors scale each bath's dissipator."""
        out = []
        for n, rho in enumerate(blocks):
            h = self.h_prime[n]
            d_rho = -1j * (h @ rho - rho @ h)
            loss = self.loss[n]
            if zeta_factors is None:
                d_rho -= 0.5 * (loss @ rho + rho @ loss)
                for src_idx, _nu, coef, s_a, s_ap_dag in self.gains[n]:
                    d_rho += coef * (s_a @ blocks[src_idx] @ s_ap_dag)
            else:
                # per-bath envelope: split the loss by bath
                for nu, zf in enumerate(zeta_factors):
                    loss_nu = self._loss_by_bath(n, nu)
                    d_rho -= 0.5 * zf * (loss_nu @ rho + rho @ loss_nu)
                for src_idx, nu, coef, s_a, s_ap_dag in self.gains[n]:
                    d_rho += zeta_factors[nu] * coef * (s_a @ blocks[src_idx] @ s_ap_dag)
            out.append(d_rho)
        return out

    def _loss_by_bath(self, n: int, nu: int) -> np.ndarray:
        cache = getattr(self, "_loss_cache", None)
        if cache is None:
            cache = {}
            self._loss_cache = cache
        if (n, nu) not in cache:
            key = self.keys[n]
            d = self.dim
            table = self.tables[nu]
            g_loss = np.zeros((d, d), dtype=complex)
            j_here = key[nu]
            for omega, ops in self.s_omega[nu].items():
                j_up = table.target_window(j_here, omega)
                if j_up is None:
                    continue
                g = _gamma_strict(table, j_up, j_here) / table.volumes[j_here]
                for a in range(table.n_ops):
                    for ap in range(table.n_ops):
                        if g[a, ap] != 0:
                            g_loss += g[a, ap] * (ops[ap].conj().T @ ops[a])
            cache[(n, nu)] = g_loss
        return cache[(n, nu)]

    def apply(self, state: ConditionedState, zeta_factors=None) -> dict[tuple[int, ...], np.ndarray]:
        blocks = [
            state.blocks.get(key, np.zeros((self.dim, self.dim), dtype=complex))
            for key in self.keys
        ]
        derivs = self.derivative_blocks(blocks, zeta_factors)
        return dict(zip(self.keys, derivs))


def emme_generator(
    state: ConditionedState,
    system: SystemSpec,
    tables: list[RateTable],
    *,
    levels: np.ndarray | None = None,
    gain_convention: str = "conserving",
    include_shift: bool = True,
    delta_h=None,
) -> dict[tuple[int, ...], np.ndarray]:
    """One application of the Markov-secular generator to a state.

    Returns d/dt of each block, including blocks reachable from the state
    but currently absent (treated as zero).  Raises if a reachable
    transition has no rate entry.
    """
    lv = system.levels if levels is None else np.asarray(levels, dtype=float)
    omega_sets = [
        set(_merge_omegas([s_omega_decomposition(s, lv) for s in ops], len(lv)))
        for ops in system.couplings
    ]
    keys = reachable_keys(set(state.blocks), tables, omega_sets)
    gen = EmmeGenerator(
        lv, system.couplings, tables, keys,
        gain_convention=gain_convention, include_shift=include_shift, delta_h=delta_h,
    )
    return gen.apply(state)


def redfield_envelope_generator(
    state: ConditionedState,
    system: SystemSpec,
    tables: list[RateTable],
    t: float,
    **kwargs,
) -> dict[tuple[int, ...], np.ndarray]:
    """Finite-time variant: every dissipation rate is multiplied by zeta(t).

    Coincides with the Markov generator as t -> infinity; at t = 0 the
    dissipator vanishes entirely.
    """
    lv = kwargs.pop("levels", None)
    lv = system.levels if lv is None else np.asarray(lv, dtype=float)
    omega_sets = [
        set(_merge_omegas([s_omega_decomposition(s, lv) for s in ops], len(lv)))
        for ops in system.couplings
    ]
    keys = reachable_keys(set(state.blocks), tables, omega_sets)
    gen = EmmeGenerator(lv, system.couplings, tables, keys, **kwargs)
    factors = [zeta(t, table.delta) for table in tables]
    return gen.apply(state, zeta_factors=factors)


# ---------------------------------------------------------------------------
# time evolution


def _grid_segments(system: SystemSpec, t_grid: np.ndarray):
    """Split the grid by protocol segment; boundaries must sit on the grid."""
    segs = system.segments(t_grid[0])
    bounds = [seg.t_start for seg in segs]
    for b in bounds[1:]:
        if t_grid[0] < b < t_grid[-1] and np.min(np.abs(t_grid - b)) > 1e-9:
            raise ConfigurationError(
                f"protocol quench at t={b} does not align with the time grid"
            )
    pieces = []
    for n, seg in enumerate(segs):
        t0 = max(seg.t_start, t_grid[0])
        t1 = segs[n + 1].t_start if n + 1 < len(segs) else t_grid[-1]
        if t0 > t_grid[-1] or t1 < t_grid[0]:
            continue
        mask = (t_grid >= t0 - 1e-12) & (t_grid <= min(t1, t_grid[-1]) + 1e-12)
        # a grid point on a boundary is recorded with the segment that starts there
        if n + 1 < len(segs):
            mask &= t_grid < segs[n + 1].t_start - 1e-12
        pieces.append((seg, t0, min(t1, t_grid[-1]), t_grid[mask]))
    return pieces


def evolve(
    state0: ConditionedState,
    system: SystemSpec,
    tables: list[RateTable],
    t_grid: np.ndarray,
    variant: str = "markov",
    *,
    gain_convention: str = "conserving",
    include_shift: bool = True,
    delta_h=None,
    rtol: float = 1e-11,
    atol: float = 1e-13,
    check_positivity: bool = True,
    solver_name: str | None = None,
) -> Trajectory:
    """Integrate the conditioned-state master equation over a time grid.

    The trace is conserved by the generator and is deliberately not
    renormalized; drift beyond tolerance indicates a bug, not noise.  At
    protocol quenches the state is carried across continuously while the
    level energies and jump operators are rebuilt.  Raises on positivity
    violations beyond tolerance with a step-size diagnostic.
    """
    if variant not in ("markov", "redfield"):
        raise ConfigurationError(f"unknown variant {variant!r}")
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ConfigurationError("time grid must be strictly increasing")

    omega_union: list[set[float]] = [set() for _ in tables]
    for seg in system.segments(t_grid[0]):
        for nu, ops in enumerate(system.couplings):
            dec = _merge_omegas(
                [s_omega_decomposition(s, seg.levels) for s in ops], system.dim
            )
            omega_union[nu] |= set(dec)
    keys = reachable_keys(set(state0.blocks), tables, omega_union)

    d = system.dim
    n_blocks = len(keys)
    t_origin = t_grid[0]

    def pack(blocks: dict) -> np.ndarray:
        y = np.zeros(n_blocks * d * d, dtype=complex)
        for n, key in enumerate(keys):
            if key in blocks:
                y[n * d * d : (n + 1) * d * d] = blocks[key].ravel()
        return y

    def unpack(y: np.ndarray) -> list[np.ndarray]:
        return [y[n * d * d : (n + 1) * d * d].reshape(d, d) for n in range(n_blocks)]

    times_out: list[float] = []
    pops_out: list[np.ndarray] = []
    levels_out: list[np.ndarray] = []
    blocks_out: dict[tuple[int, ...], list[np.ndarray]] = {k: [] for k in keys}

    y = pack(state0.blocks)

    def record(t_rec: float, yy: np.ndarray, levels: np.ndarray):
        blocks = unpack(yy)
        times_out.append(float(t_rec))
        levels_out.append(levels)
        pops_out.append(np.concatenate([np.real(np.diag(b)) for b in blocks]))
        for kk, b in zip(keys, blocks):
            blocks_out[kk].append(b.copy())

    for seg, t0, t1, grid in _grid_segments(system, t_grid):
        gen = EmmeGenerator(
            seg.levels, system.couplings, tables, keys,
            gain_convention=gain_convention,
            include_shift=include_shift,
            delta_h=delta_h,
        )

        def rhs(t, yy, gen=gen):
            blocks = unpack(yy)
            if variant == "redfield":
                factors = [zeta(t - t_origin, tb.delta) for tb in tables]
            else:
                factors = None
            derivs = gen.derivative_blocks(blocks, factors)
            return np.concatenate([b.ravel() for b in derivs])

        record_grid = grid
        if record_grid.size and abs(record_grid[0] - t0) < 1e-12:
            # states carry across quenches continuously; the boundary point
            # is recorded with the segment that starts there
            record(record_grid[0], y, seg.levels)
            record_grid = record_grid[1:]

        if t1 > t0:
            eval_pts = np.unique(np.concatenate([record_grid, [t1]]))
            sol = solve_ivp(
                rhs, (t0, t1), y, method="DOP853",
                t_eval=eval_pts, rtol=rtol, atol=atol,
            )
            if not sol.success:
                raise NumericalFailure(f"integrator failed: {sol.message}")
            for m, t_rec in enumerate(sol.t):
                if record_grid.size and np.min(np.abs(record_grid - t_rec)) < 1e-12:
                    record(t_rec, sol.y[:, m], seg.levels)
            y = sol.y[:, -1]

    times = np.array(times_out)
    populations = np.stack(pops_out)
    joint_index = [(k, key) for key in keys for k in range(d)]
    # pack() ordered populations as all levels of block 0, then block 1, ...
    if check_positivity:
        for key, series in blocks_out.items():
            for m, b in enumerate(series):
                w = np.linalg.eigvalsh(0.5 * (b + b.conj().T))
                if w.min() < -POSITIVITY_TOL:
                    raise NumericalFailure(
                        f"block {key} lost positivity at t={times[m]:g} "
                        f"(min eigenvalue {w.min():.3e}); tighten rtol/atol "
                        f"(currently {rtol:g}/{atol:g})"
                    )

    rate_model = PopulationRateModel(
        system, tables, keys, variant=variant, t_origin=t_origin
    )

    traj = Trajectory(
        solver=solver_name or f"emme-{variant}",
        times=times,
        joint_index=joint_index,
        populations=populations,
        level_energies=np.stack(levels_out),
        bath_centers=[tb.centers for tb in tables],
        bath_volumes=[tb.volumes for tb in tables],
        blocks={k: np.stack(v) for k, v in blocks_out.items()},
        pop_rate=rate_model.dpdt,
        meta={
            "variant": variant,
            "gain_convention": gain_convention,
            "rtol": rtol,
            "atol": atol,
        },
    )
    return traj


# ---------------------------------------------------------------------------
# population rate equation


class PopulationRateModel:
    """Autonomous classical master equation on the joint (level, windows) index.

    Mirrors the diagonal of the block generator exactly: jumps
    (eps_q, E_j) -> (eps_k, E_i) occur at rate W_kq(E_i, E_j) / V_j, with
    window moves in one bath component at a time.
    """

    def __init__(
        self,
        system: SystemSpec,
        tables: list[RateTable],
        keys: list[tuple[int, ...]],
        variant: str = "markov",
        t_origin: float = 0.0,
    ):
        self.system = system
        self.tables = tables
        self.keys = list(keys)
        self.variant = variant
        self.t_origin = t_origin
        self.joint_index = [(k, key) for key in keys for k in range(system.dim)]
        self.state_pos = {s: n for n, s in enumerate(self.joint_index)}
        self._matrices: list[tuple[float, np.ndarray]] = []
        for seg in system.segments(t_origin):
            self._matrices.append((seg.t_start, self._build_matrix(seg.levels)))

    def _build_matrix(self, levels: np.ndarray) -> np.ndarray:
        n = len(self.joint_index)
        mat = np.zeros((n, n))
        for nu, table in enumerate(self.tables):
            w_table = transition_rates(
                table, self.system.couplings[nu], levels
            )
            for (k, q, i, j), w in w_table.items():
                if w == 0.0:
                    continue
                for key in self.keys:
                    if key[nu] != j:
                        continue
                    tgt_key = key[:nu] + (i,) + key[nu + 1 :]
                    if tgt_key not in self.state_pos_keyset():
                        continue
                    row = self.state_pos[(k, tgt_key)]
                    col = self.state_pos[(q, key)]
                    rate = w / table.volumes[j]
                    mat[row, col] += rate
                    mat[col, col] -= rate
        return mat

    def state_pos_keyset(self):
        if not hasattr(self, "_keyset"):
            self._keyset = set(self.keys)
        return self._keyset

    def matrix(self, t: float) -> np.ndarray:
        mat = self._matrices[0][1]
        for t_start, m in self._matrices:
            if t_start <= t + 1e-12:
                mat = m
        if self.variant == "redfield":
            # single common envelope per bath would require splitting the
            # matrix; with one bath the scalar factor is exact, with several
            # the factors are applied per bath at build time below
            factors = [zeta(t - self.t_origin, tb.delta) for tb in self.tables]
            if len(set(factors)) == 1:
                return factors[0] * mat
            return self._matrix_with_factors(t, factors)
        return mat

    def _matrix_with_factors(self, t: float, factors: list[float]) -> np.ndarray:
        levels = self.system.levels_at(t)
        n = len(self.joint_index)
        mat = np.zeros((n, n))
        for nu, table in enumerate(self.tables):
            w_table = transition_rates(table, self.system.couplings[nu], levels)
            for (k, q, i, j), w in w_table.items():
                if w == 0.0:
                    continue
                for key in self.keys:
                    if key[nu] != j:
                        continue
                    tgt_key = key[:nu] + (i,) + key[nu + 1 :]
                    if tgt_key not in self.state_pos_keyset():
                        continue
                    row = self.state_pos[(k, tgt_key)]
                    col = self.state_pos[(q, key)]
                    rate = factors[nu] * w / table.volumes[j]
                    mat[row, col] += rate
                    mat[col, col] -= rate
        return mat

    def dpdt(self, t: float, p: np.ndarray) -> np.ndarray:
        return self.matrix(t) @ p


def population_rate_equation(
    populations: dict[tuple[int, tuple[int, ...]], float],
    system: SystemSpec,
    tables: list[RateTable],
    levels: np.ndarray | None = None,
) -> dict[tuple[int, tuple[int, ...]], float]:
    """dp/dt of the joint populations under the classical rate equation."""
    keys = sorted({key for (_, key) in populations})
    lv = system.levels if levels is None else np.asarray(levels, dtype=float)
    omega_sets = [
        set(_merge_omegas([s_omega_decomposition(s, lv) for s in ops], system.dim))
        for ops in system.couplings
    ]
    keys = reachable_keys(set(keys), tables, omega_sets)
    sys_at = SystemSpec(lv, system.couplings, None)
    model = PopulationRateModel(sys_at, tables, keys)
    p = np.array([populations.get(s, 0.0) for s in model.joint_index])
    dp = model.matrix(0.0) @ p
    return dict(zip(model.joint_index, dp))


# ---------------------------------------------------------------------------
# shells, equilibrium, temperature


def shell_probability(
    populations: dict[tuple[int, tuple[int, ...]], float],
    levels: np.ndarray,
    bath_centers: list[np.ndarray],
) -> ShellDistribution:
    """P(E_tot) = sum over joint states with eps_k + sum_nu E_nu = E_tot."""
    shells: dict[float, float] = {}
    for (k, key), p in populations.items():
        if p == 0.0:
            continue
        e_tot = float(levels[k]) + sum(
            float(bath_centers[nu][j]) for nu, j in enumerate(key)
        )
        e_tot = round(e_tot, 9)
        shells[e_tot] = shells.get(e_tot, 0.0) + p
    return ShellDistribution(shells)


def equilibrium_state(
    shell: ShellDistribution,
    centers: np.ndarray,
    volumes: np.ndarray,
    levels: np.ndarray,
    tol: float | None = None,
) -> dict[tuple[int, tuple[int, ...]], float]:
    """Stationary populations for a single bath, volume-weighted per shell.

    p_eq(eps_k, E_tot - eps_k) = P(E_tot) V_{E_tot-eps_k} / sum_q
    V_{E_tot-eps_q}; windows missing from the layout count as V = 0.
    """
    centers = np.asarray(centers, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    if tol is None:
        tol = 1e-9
    out: dict[tuple[int, tuple[int, ...]], float] = {}
    for e_tot, prob in shell.values.items():
        members = []
        for k, eps in enumerate(levels):
            target = e_tot - eps
            hits = np.nonzero(np.abs(centers - target) <= tol)[0]
            if hits.size:
                members.append((k, int(hits[0]), volumes[hits[0]]))
        total = sum(v for (_, _, v) in members)
        if total == 0:
            if prob > 0:
                raise ConfigurationError(
                    f"shell E_tot={e_tot} has probability {prob} but no volume"
                )
            continue
        for k, j, v in members:
            out[(k, (j,))] = out.get((k, (j,)), 0.0) + prob * v / total
    return out


def stationary_populations(
    populations: dict[tuple[int, tuple[int, ...]], float],
    system: SystemSpec,
    tables: list[RateTable],
    levels: np.ndarray | None = None,
) -> dict[tuple[int, tuple[int, ...]], float]:
    """Long-time populations: joint-volume weighting on each connected component.

    Works for any number of baths; the weight of a joint state is the product
    of its window volumes, and each ergodic component keeps its initial
    probability.  Reduces to the single-bath shell formula when the shell is
    fully connected.
    """
    lv = system.levels if levels is None else np.asarray(levels, dtype=float)
    omega_sets = [
        set(_merge_omegas([s_omega_decomposition(s, lv) for s in ops], system.dim))
        for ops in system.couplings
    ]
    keys = reachable_keys({key for (_, key) in populations}, tables, omega_sets)
    sys_at = SystemSpec(lv, system.couplings, None)
    model = PopulationRateModel(sys_at, tables, keys)
    mat = model.matrix(0.0)
    n = len(model.joint_index)
    adj = [set() for _ in range(n)]
    for r in range(n):
        for c in range(n):
            if r != c and mat[r, c] > 0:
                adj[r].add(c)
                adj[c].add(r)
    p0 = np.array([populations.get(s, 0.0) for s in model.joint_index])
    weights = np.array(
        [
            np.prod([tables[nu].volumes[j] for nu, j in enumerate(key)])
            for (_, key) in model.joint_index
        ],
        dtype=float,
    )
    out = np.zeros(n)
    unvisited = set(range(n))
    while unvisited:
        start = unvisited.pop()
        comp = {start}
        frontier = [start]
        while frontier:
            node = frontier.pop()
            for other in adj[node]:
                if other in unvisited:
                    unvisited.discard(other)
                    comp.add(other)
                    frontier.append(other)
        idx = sorted(comp)
        prob = p0[idx].sum()
        w = weights[idx]
        out[idx] = prob * w / w.sum()
    return dict(zip(model.joint_index, out))


def analytic_spin_solution(
    v_low: float,
    v_high: float,
    gamma: float,
    p0: tuple[float, float],
    t,
    xi_values=None,
) -> np.ndarray:
    """Closed-form populations of one two-level shell.

    The pair is (p(eps_1, E), p(eps_0, E + gap)) with window volumes
    (v_low, v_high).  p(t) = p_eq + (p(0) - p_eq) exp(-2 gammabar Xi(t)),
    with 2 gammabar = gamma (1/V_E + 1/V_{E+gap}); Xi(t) = t recovers the
    Markov form, a running integral of the envelope gives the finite-time
    variant.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    xi = t if xi_values is None else np.atleast_1d(np.asarray(xi_values, dtype=float))
    total = p0[0] + p0[1]
    p_eq = np.array([total * v_low / (v_low + v_high), total * v_high / (v_low + v_high)])
    two_gbar = gamma * (1.0 / v_low + 1.0 / v_high)
    decay = np.exp(-two_gbar * xi)
    out = p_eq[None, :] + (np.array(p0)[None, :] - p_eq[None, :]) * decay[:, None]
    return out


def spin_oracle_trajectory(
    state0: ConditionedState,
    system: SystemSpec,
    table: RateTable,
    t_grid: np.ndarray,
    variant: str = "markov",
) -> Trajectory:
    """Exact trajectory of the two-level model, shell by shell.

    Requires a two-level system, a single bath, a single coupling operator,
    and a static protocol; each conserved shell couples one excited block to
    one ground block and follows the closed form above.
    """
    if system.dim != 2 or system.n_baths != 1 or len(system.couplings[0]) != 1:
        raise ConfigurationError("the closed form covers one spin and one coupling operator")
    if system.protocol is not None and len(system.protocol) > 1:
        raise ConfigurationError("the closed form covers static protocols only")
    t_grid = np.asarray(t_grid, dtype=float)
    levels = system.levels
    gap = levels[1] - levels[0]
    pops0 = state0.populations()
    omega_sets = [{round(float(gap), 12), round(float(-gap), 12)}]
    keys = reachable_keys({key for (_, key) in pops0}, [table], omega_sets)
    joint_index = [(k, key) for key in keys for k in range(2)]
    xi = (
        t_grid - t_grid[0]
        if variant == "markov"
        else xi_integral(t_grid - t_grid[0], table.delta)
    )
    pops = np.zeros((t_grid.size, len(joint_index)))
    done = set()
    for key in keys:
        j = key[0]
        jp = table.target_window(j, gap)
        idx_exc = joint_index.index((1, key))
        if jp is not None and (j, jp) not in done:
            done.add((j, jp))
            idx_gnd = joint_index.index((0, (jp,)))
            p0_pair = (pops0.get((1, key), 0.0), pops0.get((0, (jp,)), 0.0))
            gamma = float(np.real(table.gamma_entry(j, jp)[0, 0]))
            sol = analytic_spin_solution(
                table.volumes[j], table.volumes[jp], gamma, p0_pair, t_grid, xi
            )
            pops[:, idx_exc] = sol[:, 0]
            pops[:, idx_gnd] = sol[:, 1]
        elif jp is None:
            pops[:, idx_exc] = pops0.get((1, key), 0.0)
        j_dn = table.target_window(j, -gap)
        if j_dn is None:
            idx = joint_index.index((0, key))
            pops[:, idx] = pops0.get((0, key), 0.0)
    return Trajectory(
        solver="analytic",
        times=t_grid,
        joint_index=joint_index,
        populations=pops,
        level_energies=np.tile(levels, (t_grid.size, 1)),
        bath_centers=[table.centers],
        bath_volumes=[table.volumes],
        meta={"variant": variant},
    )


def microcanonical_temperature(
    centers: np.ndarray, volumes: np.ndarray, energy: float
) -> float:
    """Boltzmann temperature dE / d(log V) at a window center.

    Centered finite difference of S_mic(E) = log V_E on the window grid;
    one-sided at the edges.  Returns +inf when the entropy difference is
    zero and a negative value when volumes decrease with energy.
    """
    centers = np.asarray(centers, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    if len(centers) < 2:
        raise ConfigurationError("at least two windows are needed for a temperature")
    i = int(np.argmin(np.abs(centers - energy)))
    lo = max(i - 1, 0)
    hi = min(i + 1, len(centers) - 1)
    d_s = math.log(volumes[hi]) - math.log(volumes[lo])
    d_e = centers[hi] - centers[lo]
    if d_s == 0.0:
        return math.inf
    return d_e / d_s
