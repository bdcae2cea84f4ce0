"""Environment dynamics: the six-action space, its per-axis two-action
projections, the deterministic clamped transition, and the binary
distance-sign reward.
"""
from enum import IntEnum

import numpy as np

from .errors import ContractError

AXES = ("x", "y", "z")


class Action(IntEnum):
    X_POS = 0
    X_NEG = 1
    Y_POS = 2
    Y_NEG = 3
    Z_POS = 4
    Z_NEG = 5

    @property
    def axis(self) -> int:
        return self.value // 2

    @property
    def sign(self) -> int:
        return 1 if self.value % 2 == 0 else -1

    @property
    def token(self) -> str:
        return AXES[self.axis] + ("+" if self.sign > 0 else "-")

    @classmethod
    def from_token(cls, token: str) -> "Action":
        return _TOKEN_TO_ACTION[token]

    @classmethod
    def partial_space(cls, axis: int):
        """The two-action projection {i+, i-} for axis i."""
        return (cls(2 * axis), cls(2 * axis + 1))


_TOKEN_TO_ACTION = {a.token: a for a in Action}


def transition(q, a: Action, eta: int, dims):
    """Move eta voxels along the action's axis, clamped to the volume."""
    q2 = list(int(c) for c in q)
    i = a.axis
    q2[i] = min(max(q2[i] + a.sign * eta, 0), dims[i] - 1)
    return tuple(q2)


def reward(q, a: Action, q_next, p) -> int:
    """sign(d(p,q) - d(p,q')) in {-1, 0, +1}; compares squared distances."""
    p = np.asarray(p, dtype=np.float64)
    d1 = float(np.sum((p - np.asarray(q, dtype=np.float64)) ** 2))
    d2 = float(np.sum((p - np.asarray(q_next, dtype=np.float64)) ** 2))
    if d1 > d2:
        return 1
    if d1 < d2:
        return -1
    return 0


def reconstruct_action(a_x: int, a_y: int, a_z: int) -> np.ndarray:
    """Composite displacement from one signed step choice (+-eta) per axis."""
    return np.array([a_x, a_y, a_z], dtype=np.int64)


def merge_policies(pi_x, pi_y, pi_z) -> np.ndarray:
    """Concatenate the three two-action distributions and scale by 1/3.

    Result is a distribution over the six actions in Action order.
    """
    out = np.empty(6, dtype=np.float64)
    for i, pair in enumerate((pi_x, pi_y, pi_z)):
        pair = np.asarray(pair, dtype=np.float64)
        if pair.shape != (2,) or abs(pair.sum() - 1.0) > 1e-6 or np.any(pair < 0):
            raise ContractError(f"partial policy for axis {AXES[i]} is not a distribution: {pair}")
        out[2 * i:2 * i + 2] = pair / 3.0
    return out
