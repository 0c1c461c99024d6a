"""Time series container shared by every dynamics engine."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import StiefelPoint, overlap_gram


@dataclass
class Trajectory:
    """Recorded correlations ``m_ij(t)`` and Gram eigenvalues ``theta_i(t)``.

    ``events`` holds dictionaries such as threshold crossings or a blow-up
    notice; ``meta`` carries run diagnostics (step counts, violations, ...).
    """

    times: list = field(default_factory=list)
    corr: list = field(default_factory=list)
    gram_eigs: list = field(default_factory=list)
    events: list = field(default_factory=list)
    final_X: StiefelPoint | None = None
    meta: dict = field(default_factory=dict)

    def record(self, t: float, M: np.ndarray):
        if self.times and not t > self.times[-1]:
            raise ValueError(f"times must increase strictly ({t} after {self.times[-1]})")
        M = np.array(M, dtype=float)
        self.times.append(float(t))
        self.corr.append(M)
        self.gram_eigs.append(overlap_gram(M).eigenvalues)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final_corr(self) -> np.ndarray:
        return self.corr[-1]

    def corr_array(self) -> np.ndarray:
        return np.array(self.corr)

    def times_array(self) -> np.ndarray:
        return np.array(self.times)

    def eigs_array(self) -> np.ndarray:
        return np.array(self.gram_eigs)

    def hitting_times(self, level: float) -> np.ndarray:
        """First recorded time each ``|m_ij|`` reaches ``level`` (NaN if never)."""
        C = np.abs(self.corr_array())
        hit = C >= level
        first = np.argmax(hit, axis=0)
        out = np.array(self.times)[first].astype(float)
        out[~hit.any(axis=0)] = np.nan
        return out

    def to_json_dict(self) -> dict:
        return {
            "meta": self.meta,
            "times": list(self.times),
            "corr": [M.tolist() for M in self.corr],
            "gram_eigs": [np.asarray(e).tolist() for e in self.gram_eigs],
            "events": self.events,
        }
