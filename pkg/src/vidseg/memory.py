"""Fixed-capacity FIFO ring of unit-norm key embeddings used as negatives."""

from __future__ import annotations

import numpy as np

_UNIT_TOL = 1e-8


class MemoryBank:
    """Ring buffer of the most recent `capacity` embeddings.

    Rows live outside any gradient tape: negatives_view() hands back plain
    arrays that the losses treat as constants.
    """

    def __init__(self, capacity, width):
        if capacity < 1 or width < 1:
            raise ValueError("capacity and width must be positive")
        self.capacity = int(capacity)
        self.width = int(width)
        self.storage = np.zeros((self.capacity, self.width))
        self.cursor = 0
        self.fill = 0

    def enqueue(self, rows):
        """Write rows at the cursor, overwriting the oldest entries first."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[0] == 0:
            return self
        if rows.shape[1] != self.width:
            raise ValueError(f"expected width {self.width}, got {rows.shape[1]}")
        norms = np.linalg.norm(rows, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > _UNIT_TOL)
        if bad.size:
            raise ValueError(f"row {bad[0]} is not unit-norm (norm {norms[bad[0]]:.6g})")
        for row in rows:
            self.storage[self.cursor] = row
            self.cursor = (self.cursor + 1) % self.capacity
        self.fill = min(self.capacity, self.fill + rows.shape[0])
        return self

    def negatives_view(self):
        """Copy of the filled rows (storage order; the losses never care)."""
        return self.storage[:self.fill].copy()

    def state(self):
        return self.storage.copy(), self.cursor, self.fill

    @classmethod
    def from_state(cls, storage, cursor, fill):
        bank = cls(storage.shape[0], storage.shape[1])
        bank.storage = np.array(storage, dtype=np.float64)
        bank.cursor = int(cursor)
        bank.fill = int(fill)
        return bank
