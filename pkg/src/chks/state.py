from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class State:
    """Snapshot (phi, mu, sigma) at time t; arrays have the grid shape."""

    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    t: float = 0.0

    def replace(self, **kw) -> "State":
        return replace(self, **kw)

    def copy(self) -> "State":
        return State(self.phi.copy(), self.mu.copy(), self.sigma.copy(), self.t)
