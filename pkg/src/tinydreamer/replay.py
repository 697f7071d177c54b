"""Step-level ring replay buffer with uniform contiguous-window sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ReplayNotReady(RuntimeError):
    """Raised when the buffer does not yet hold enough steps to sample."""


@dataclass
class SequenceBatch:
    obs: np.ndarray  # (B, T, obs_dim)
    action: np.ndarray  # (B, T, action_dim), row t = action taken before obs t
    reward: np.ndarray  # (B, T)
    cont: np.ndarray  # (B, T)
    is_first: np.ndarray  # (B, T)
    starts: np.ndarray | None = None  # absolute window starts, for diagnostics


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.action = np.zeros((capacity, action_dim), dtype=np.float32)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.cont = np.zeros(capacity, dtype=np.float32)
        self.is_first = np.zeros(capacity, dtype=np.float32)
        self.total = 0  # steps ever written; ring slot = index % capacity

    def __len__(self) -> int:
        return min(self.total, self.capacity)

    def add_step(self, obs, action, reward, cont, is_first) -> None:
        i = self.total % self.capacity
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.cont[i] = cont
        self.is_first[i] = is_first
        self.total += 1

    def sample_batch(self, B: int, T: int, rng: np.random.Generator) -> SequenceBatch:
        """B uniform contiguous windows of length T (may straddle episodes)."""
        n = len(self)
        if n < T:
            raise ReplayNotReady(f"buffer holds {n} steps, need at least {T}")
        oldest = self.total - n
        starts = rng.integers(oldest, self.total - T + 1, size=B)
        idx = (starts[:, None] + np.arange(T)) % self.capacity
        return SequenceBatch(
            obs=self.obs[idx],
            action=self.action[idx],
            reward=self.reward[idx],
            cont=self.cont[idx],
            is_first=self.is_first[idx],
            starts=starts,
        )

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Everything needed to restore the buffer bit-exactly."""
        return {
            "obs": self.obs,
            "action": self.action,
            "reward": self.reward,
            "cont": self.cont,
            "is_first": self.is_first,
            "total": np.array([self.total], dtype=np.int64),
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.obs[:] = arrays["obs"]
        self.action[:] = arrays["action"]
        self.reward[:] = arrays["reward"]
        self.cont[:] = arrays["cont"]
        self.is_first[:] = arrays["is_first"]
        self.total = int(arrays["total"][0])
