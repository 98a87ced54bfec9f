"""Adam with sparse per-row moment updates.

Moment tables are allocated lazily per parameter table; each row keeps its
own step counter, so bias correction sees how often that row was actually
touched. Rows that never receive a gradient are never moved.
"""

from __future__ import annotations

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


class AdamState:
    def __init__(self):
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._steps: dict[str, np.ndarray] = {}

    def _ensure(self, name: str, table: np.ndarray):
        if name not in self._m:
            self._m[name] = np.zeros_like(table)
            self._v[name] = np.zeros_like(table)
            self._steps[name] = np.zeros(table.shape[0], dtype=np.int64)
        return self._m[name], self._v[name], self._steps[name]

    def step(self, model, grads, learning_rate: float) -> None:
        """Apply one Adam update to the rows named in ``grads``."""
        tables = model.tables()
        for name, rows, g in grads.items():
            if rows is None or rows.shape[0] == 0:
                continue
            table = tables[name]
            m, v, steps = self._ensure(name, table)
            steps[rows] += 1
            t = steps[rows].astype(np.float64)[:, None]
            mr = BETA1 * m[rows] + (1.0 - BETA1) * g
            vr = BETA2 * v[rows] + (1.0 - BETA2) * np.square(g)
            m[rows] = mr
            v[rows] = vr
            m_hat = mr / (1.0 - BETA1 ** t)
            v_hat = vr / (1.0 - BETA2 ** t)
            table[rows] = table[rows] - learning_rate * m_hat / (np.sqrt(v_hat) + EPSILON)

    def zero_moments(self, name: str, mask: np.ndarray) -> None:
        """Zero the moments at masked-out (False) positions of one table."""
        if name in self._m:
            self._m[name] *= mask
            self._v[name] *= mask
