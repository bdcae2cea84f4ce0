"""Bounded FIFO experience replay with uniform-with-replacement sampling.

Transitions store positions and a volume id only; observations are
re-extracted when a batch is assembled, keeping the memory footprint
independent of the window size.
"""
from collections import deque
from dataclasses import dataclass

from .errors import ConfigError, ContractError
from .mdp import Action


@dataclass(frozen=True)
class Transition:
    volume_id: int
    q: tuple
    action: Action
    q_next: tuple
    reward: int
    axis: int  # 0..2, or None for the single-memory baselines


class ReplayMemory:
    """FIFO ring of Transitions; axis-restricted when axis is given."""

    def __init__(self, capacity: int, axis=None):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = capacity
        self.axis = axis
        self._buf = deque(maxlen=capacity)

    def __len__(self):
        return len(self._buf)

    def push(self, t: Transition):
        if self.axis is not None and t.axis != self.axis:
            raise ContractError(
                f"transition for axis {t.axis} pushed into axis-{self.axis} memory")
        self._buf.append(t)

    def sample(self, batch_size: int, rng):
        """batch_size uniform draws with replacement; deterministic in rng state."""
        if not self._buf:
            raise ConfigError("cannot sample from an empty replay memory")
        idx = rng.integers(0, len(self._buf), size=batch_size)
        return [self._buf[i] for i in idx]
