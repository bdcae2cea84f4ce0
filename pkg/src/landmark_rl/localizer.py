"""Inference: greedy step-sequence walks, oscillation-centroid termination,
multi-start aggregation, and evaluation metrics.

A policy here is any object with partial_probs(volume, q, axis) -> (p+, p-).
The trained network and the analytic sign oracle both satisfy it, which keeps
oracle-based verification independent of the learned path.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .mdp import Action, transition
from .volume import Volume, states_batch


class NetPolicy:
    """Adapter exposing a trained partial-mode network as a walk policy."""

    def __init__(self, params, net_cfg):
        from . import network
        if net_cfg.mode != network.PARTIAL:
            raise ValueError("NetPolicy requires partial-mode parameters")
        self._params = params
        self._cfg = net_cfg
        self._net = network

    def partial_probs(self, vol, q, axis):
        s = states_batch(vol, [q], self._cfg.window)
        return self._net.forward_policy(self._params, self._cfg, s, axis=axis)[0]


class OracleSignPolicy:
    """Analytic policy: step toward the target along each axis."""

    def __init__(self, target):
        self._p = np.asarray(target, dtype=np.float64)

    def partial_probs(self, vol, q, axis):
        return (1.0, 0.0) if self._p[axis] > q[axis] else (0.0, 1.0)


def localize(vol: Volume, policy, start, steps=300, last=10, eta=2):
    """Greedy step-sequence walk; estimate is the mean of the last `last`
    visited positions (the oscillation centroid). No reward signal is used.
    """
    q = tuple(int(c) for c in start)
    visited = []
    n_seq = (steps + 2) // 3
    for _ in range(n_seq):
        for axis in range(3):
            probs = policy.partial_probs(vol, q, axis)
            a = Action(2 * axis) if probs[0] >= probs[1] else Action(2 * axis + 1)
            q = transition(q, a, eta, vol.dims)
            visited.append(q)
    tail = visited[-last:] if last > 0 else visited[-1:]
    return np.mean(np.asarray(tail, dtype=np.float64), axis=0)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # dicts: volume_id, landmark, err_mm / inside
    mean: float = float("nan")
    sd: float = float("nan")
    median: float = float("nan")
    failure_rate: float = float("nan")
    skipped: int = 0

    def summary(self):
        return {"mean": self.mean, "sd": self.sd, "median": self.median,
                "failure_rate": self.failure_rate, "n": len(self.rows)}

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write("volume_id,landmark,err_mm,inside_region\n")
            for r in self.rows:
                f.write(f"{r['volume_id']},{r['landmark']},"
                        f"{r.get('err_mm', '')},{r.get('inside', '')}\n")

    def write_summary(self, path):
        with open(path, "w") as f:
            json.dump(self.summary(), f, indent=2)


def sample_start(vol: Volume, margin, rng):
    return tuple(int(rng.integers(margin, d - margin)) for d in vol.dims)


def evaluate(volumes, policy, starts_per_volume=5, steps=300, last=10, eta=2,
             margin=8, seed=0, region_masks=None) -> EvalReport:
    """Multi-start localization over volumes with ground truth.

    The per-volume estimate is the mean of per-start estimates; the per-volume
    error is the spacing-weighted Euclidean distance of that mean from the
    ground truth. For region targets (region_masks[volume index] is a boolean
    array) the per-start failure flag is recorded instead.
    """
    rng = np.random.default_rng(seed)
    report = EvalReport()
    errs = []
    fails = []
    skipped = 0
    for vi, vol in enumerate(volumes):
        if not vol.landmarks and (region_masks is None or region_masks.get(vi) is None):
            skipped += 1
            continue
        starts = [sample_start(vol, margin, rng) for _ in range(starts_per_volume)]
        estimates = [localize(vol, policy, s, steps=steps, last=last, eta=eta)
                     for s in starts]
        mask = None if region_masks is None else region_masks.get(vi)
        if mask is not None:
            for est in estimates:
                ip = tuple(int(round(c)) for c in est)
                inside = bool(mask[ip])
                fails.append(0.0 if inside else 1.0)
                report.rows.append({"volume_id": vi, "landmark": "region", "inside": inside})
            continue
        name = next(iter(vol.landmarks))
        p = vol.landmark(name)
        est = np.mean(np.asarray(estimates), axis=0)
        err = float(np.linalg.norm((est - p) * np.asarray(vol.spacing)))
        errs.append(err)
        report.rows.append({"volume_id": vi, "landmark": name, "err_mm": err})
    if errs:
        report.mean = float(np.mean(errs))
        report.sd = float(np.std(errs))
        report.median = float(np.median(errs))
    if fails:
        report.failure_rate = float(np.mean(fails)) * 100.0
    report.skipped = skipped
    return report
