"""Fixed-capacity FIFO memory bank with exact cosine k-NN retrieval."""
from __future__ import annotations

import numpy as np

UNIT_TOL = 1e-6


class BankNotWarmError(LookupError):
    """Fewer than K eligible records for some query."""


class MemoryBank:
    """Ring buffer of (key, value, source_id) records.

    Keys are L2-normalized on push, so similarity is cosine.  Values must
    already be unit vectors.  ``seq`` holds each record's global insertion
    number, used to break similarity ties in favour of older records.
    """

    def __init__(self, capacity: int, key_dim: int, value_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.keys = np.zeros((capacity, key_dim))
        self.values = np.zeros((capacity, value_dim))
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.seq = np.full(capacity, -1, dtype=np.int64)
        self.count = 0
        self.cursor = 0
        self.pushed = 0

    def __len__(self) -> int:
        return self.count

    @property
    def fill(self) -> float:
        return self.count / self.capacity

    def push(self, keys, values, source_ids) -> "MemoryBank":
        keys = np.asarray(keys, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        source_ids = np.asarray(source_ids, dtype=np.int64).reshape(-1)
        n = len(source_ids)
        if len(keys) != n or len(values) != n:
            raise ValueError(f"batch lengths differ: {len(keys)}, {len(values)}, {n}")
        if n == 0:
            return self
        norms = np.linalg.norm(values, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ValueError("bank values must be unit-norm")
        key_norms = np.linalg.norm(keys, axis=1, keepdims=True)
        keys = keys / np.maximum(key_norms, 1e-12)
        if n > self.capacity:
            keys, values, source_ids = keys[-self.capacity:], values[-self.capacity:], source_ids[-self.capacity:]
            self.pushed += n - self.capacity
            n = self.capacity
        slots = (self.cursor + np.arange(n)) % self.capacity
        self.keys[slots] = keys
        self.values[slots] = values
        self.ids[slots] = source_ids
        self.seq[slots] = self.pushed + np.arange(n)
        self.pushed += n
        self.cursor = (self.cursor + n) % self.capacity
        self.count = min(self.count + n, self.capacity)
        return self

    def records(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stored (keys, values, ids), oldest first."""
        order = self._chronological()
        return self.keys[order], self.values[order], self.ids[order]

    def _chronological(self) -> np.ndarray:
        if self.count < self.capacity:
            return np.arange(self.count)
        return (self.cursor + np.arange(self.capacity)) % self.capacity

    def knn_indices(self, query_keys, query_ids, k: int) -> np.ndarray:
        """Chronological record indices of the K most similar eligible records."""
        if k <= 0:
            raise ValueError("K must be positive")
        q = np.asarray(query_keys, dtype=np.float64)
        q = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
        query_ids = np.asarray(query_ids, dtype=np.int64).reshape(-1)
        order = self._chronological()
        keys, ids = self.keys[order], self.ids[order]
        sims = q @ keys.T
        blocked = ids[None, :] == query_ids[:, None]
        eligible = (~blocked).sum(axis=1)
        if len(order) < k or np.any(eligible < k):
            raise BankNotWarmError(f"need {k} eligible records per query; bank holds {self.count}")
        sims[blocked] = -np.inf
        m = len(order)
        if k == m:
            cand = np.broadcast_to(np.arange(m), sims.shape)
        else:
            cand = np.argpartition(-sims, k - 1, axis=1)[:, :k]
        kth = np.take_along_axis(sims, cand, axis=1).min(axis=1)
        out = np.sort(cand, axis=1)
        # rows with ties at the K-th similarity: keep the oldest tied records
        for row in np.flatnonzero((sims >= kth[:, None]).sum(axis=1) > k):
            above = np.flatnonzero(sims[row] > kth[row])
            tied = np.flatnonzero(sims[row] == kth[row])
            out[row] = np.sort(np.concatenate([above, tied[: k - len(above)]]))
        # stable sort by similarity keeps older records first among equals
        rank = np.argsort(-np.take_along_axis(sims, out, axis=1), axis=1, kind="stable")
        return np.take_along_axis(out, rank, axis=1)

    def knn(self, query_keys, query_ids, k: int) -> np.ndarray:
        """Values of the K nearest eligible records per query, shape (n, K, value_dim)."""
        idx = self.knn_indices(query_keys, query_ids, k)
        values = self.values[self._chronological()]
        return values[idx]

    def state(self) -> dict[str, np.ndarray]:
        keys, values, ids = self.records()
        seq = self.seq[self._chronological()]
        return {"keys": keys, "values": values, "ids": ids.astype(np.float64), "seq": seq.astype(np.float64)}

    @classmethod
    def from_state(cls, capacity: int, state: dict[str, np.ndarray], pushed: int) -> "MemoryBank":
        keys, values = state["keys"], state["values"]
        bank = cls(capacity, keys.shape[1], values.shape[1])
        n = len(keys)
        bank.keys[:n] = keys
        bank.values[:n] = values
        bank.ids[:n] = state["ids"].astype(np.int64)
        bank.seq[:n] = state["seq"].astype(np.int64)
        bank.count = n
        bank.cursor = n % capacity
        bank.pushed = pushed
        return bank
