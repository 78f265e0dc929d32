"""Ring-buffer replay storage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s2: np.ndarray
    done: bool
    truncated: bool = False

    def __post_init__(self):
        if self.truncated and not self.done:
            raise InputError("a truncated transition must also be done")
        for x in (self.s, self.a, self.s2, self.r):
            if not np.isfinite(x).all():
                raise InputError("transition contains non-finite values")

    @property
    def terminal(self) -> bool:
        return self.done and not self.truncated


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    truncated: np.ndarray

    @property
    def terminal(self) -> np.ndarray:
        return self.done & ~self.truncated

    def __len__(self):
        return self.s.shape[0]


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int, dtype=np.float32):
        if capacity < 1:
            raise ConfigurationError("capacity must be >= 1")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim), dtype=dtype)
        self.a = np.zeros((capacity, action_dim), dtype=dtype)
        self.r = np.zeros(capacity, dtype=dtype)
        self.s2 = np.zeros((capacity, state_dim), dtype=dtype)
        self.done = np.zeros(capacity, dtype=bool)
        self.truncated = np.zeros(capacity, dtype=bool)
        self.inserted = 0

    def __len__(self):
        return min(self.inserted, self.capacity)

    def add(self, t: Transition):
        i = self.inserted % self.capacity
        self.s[i], self.a[i], self.r[i], self.s2[i] = t.s, t.a, t.r, t.s2
        self.done[i], self.truncated[i] = t.done, t.truncated
        self.inserted += 1

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if len(self) == 0:
            raise ConfigurationError("cannot sample from an empty buffer")
        return rng.integers(0, len(self), size=batch_size)

    def gather(self, idx) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx], self.truncated[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        return self.gather(self.sample_indices(batch_size, rng))

    def contents(self) -> dict:
        n = len(self)
        return {"s": self.s[:n], "a": self.a[:n], "r": self.r[:n], "s2": self.s2[:n],
                "done": self.done[:n], "truncated": self.truncated[:n]}
