"""Per-class memory bank of generated latents.

A capped FIFO list per class: the newest entries are kept and the oldest fall
off once ``capacity`` is reached. Writers take the lock; readers working from
a ``snapshot()`` never see a half-finished insert.
"""

import threading
from collections import deque
from typing import Deque, Dict, List

import numpy as np

from numerics.rng import RngState
from numerics.tensor import Tensor
from shared.errors import ShapeError


class MemoryBank:
    """Flattened latents grouped by class id, insertion order preserved."""

    def __init__(self, capacity: int = 4096):
        self.capacity = capacity
        self._entries: Dict[int, Deque[Tensor]] = {}
        self._lock = threading.Lock()
        self._dim = None

    def insert(self, class_id: int, latent: Tensor) -> None:
        flat = Tensor(latent.data.reshape(-1))
        with self._lock:
            if self._dim is not None and flat.size != self._dim:
                raise ShapeError("bank_insert", (flat.size,), (self._dim,), "latent length")
            self._dim = flat.size
            self._entries.setdefault(int(class_id), deque(maxlen=self.capacity)).append(flat)

    def size(self, class_id: int) -> int:
        return len(self._entries.get(int(class_id), ()))

    def __len__(self) -> int:
        return sum(len(q) for q in self._entries.values())

    def classes(self) -> List[int]:
        return sorted(self._entries)

    def entries(self, class_id: int) -> List[Tensor]:
        """All stored latents of a class, oldest first."""
        with self._lock:
            return list(self._entries.get(int(class_id), ()))

    def sample(self, class_id: int, n_cap: int, rng: RngState) -> List[Tensor]:
        """Up to ``n_cap`` entries drawn uniformly without replacement."""
        stored = self.entries(class_id)
        if not stored:
            return []
        k = min(int(n_cap), len(stored))
        picks = np.sort(rng.choice(len(stored), size=k, replace=False))
        return [stored[j] for j in picks]

    def snapshot(self) -> "MemoryBank":
        """Independent copy; later inserts into either bank do not affect the other."""
        copy = MemoryBank(self.capacity)
        with self._lock:
            copy._entries = {c: deque(q, maxlen=self.capacity) for c, q in self._entries.items()}
            copy._dim = self._dim
        return copy

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """``bank/<class>`` -> (n, D) matrix, for checkpointing."""
        with self._lock:
            return {f"bank/{c}": np.stack([t.data for t in q]) for c, q in sorted(self._entries.items()) if q}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], capacity: int = 4096) -> "MemoryBank":
        bank = cls(capacity)
        for key in sorted(arrays, key=lambda k: int(k.split("/", 1)[1]) if k.startswith("bank/") else -1):
            if not key.startswith("bank/"):
                continue
            class_id = int(key.split("/", 1)[1])
            for row in arrays[key]:
                bank.insert(class_id, Tensor(row))
        return bank


def bank_insert(bank: MemoryBank, class_id: int, latent: Tensor) -> None:
    bank.insert(class_id, latent)


def bank_sample(bank: MemoryBank, class_id: int, n_cap: int, rng: RngState) -> List[Tensor]:
    return bank.sample(class_id, n_cap, rng)
