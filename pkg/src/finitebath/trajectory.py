"""Shared trajectory contract emitted by every solver.

A trajectory is a time-ordered table of joint populations p(eps_k, E) plus,
when the solver tracks them, the conditional system blocks.  The joint index
pairs a system level index with a tuple of per-bath window indices; solvers
without bath bookkeeping (the fixed-reference-bath comparison equation) use
the empty tuple.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

JointState = tuple[int, tuple[int, ...]]


@dataclass
class Trajectory:
    solver: str
    times: np.ndarray
    joint_index: list[JointState]
    populations: np.ndarray  # (T, N) aligned with joint_index
    level_energies: np.ndarray  # (T, d_S), protocol applied
    bath_centers: list[np.ndarray]
    bath_volumes: list[np.ndarray]
    blocks: dict[tuple[int, ...], np.ndarray] | None = None  # key -> (T, d, d)
    pop_rate: Callable[[float, np.ndarray], np.ndarray] | None = None
    mi: np.ndarray | None = None
    mi_times: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return self.level_energies.shape[1]

    def column(self, k: int, key: tuple[int, ...]) -> np.ndarray:
        """Population series of one joint state."""
        return self.populations[:, self.joint_index.index((k, key))]

    def column_names(self) -> list[str]:
        names = []
        for k, key in self.joint_index:
            if key:
                label = "x".join(f"{self.bath_centers[n][j]:g}" for n, j in enumerate(key))
                names.append(f"p_k{k}_E{label}")
            else:
                names.append(f"p_k{k}")
        return names

    def system_populations(self) -> np.ndarray:
        """Marginal p(eps_k) as a (T, d_S) array."""
        out = np.zeros((len(self.times), self.n_levels))
        for n, (k, _) in enumerate(self.joint_index):
            out[:, k] += self.populations[:, n]
        return out
