"""Training: episode collection by periodic step-sequences, TD(0) quantities,
and the three learners — per-axis partial policies with their own critics,
a single-policy actor-critic baseline, and a Q-learning baseline.

A lookup-table variant of the partial learner (position-keyed instead of
observation-keyed) is included for small-instance verification.
"""
import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import localizer, network
from .errors import ConfigError, NumericalError
from .mdp import Action, reward, transition
from .network import ACTOR_CRITIC, PARTIAL, Q_LEARNING, NetConfig
from .replay import ReplayMemory, Transition
from .volume import states_batch


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    alpha: float = 1e-4
    window: int = 16
    eta: int = 2
    episodes_per_epoch: int = 20
    steps_per_episode: int = 300  # partial mode runs steps/3 step-sequences
    epochs: int = 50
    replay_capacity: int = 100_000
    minibatch: int = 32
    exploration: str = "dropout"  # "dropout" or "epsilon"
    keep_prob_start: float = 0.1
    keep_prob_end: float = 0.7
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    seed: int = 0
    mode: str = PARTIAL
    eval_every: int = 1
    eval_starts: int = 2
    eval_steps: int = 150
    eval_last: int = 10

    def validate(self):
        if not (0 <= self.gamma < 1):
            raise ConfigError("gamma must lie in [0, 1)")
        if self.mode not in network.MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.exploration not in ("dropout", "epsilon"):
            raise ConfigError(f"unknown exploration {self.exploration!r}")
        for name in ("alpha", "window", "eta", "episodes_per_epoch",
                     "steps_per_episode", "replay_capacity", "minibatch"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")


@dataclass
class EpisodeTrace:
    volume_id: int
    start: tuple
    steps: list = field(default_factory=list)  # (position, action, reward)

    @property
    def cumulative_reward(self):
        return sum(r for _, _, r in self.steps)

    def write_csv(self, path):
        with open(path, "w") as f:
            f.write("t,x,y,z,action,reward\n")
            for t, (q, a, r) in enumerate(self.steps):
                f.write(f"{t},{q[0]},{q[1]},{q[2]},{a.token},{r}\n")


def td_quantities(r, v_next, v_curr, gamma):
    """TD-target tau = r + gamma*V(s') and TD-error eps = tau - V(s)."""
    tau = r + gamma * v_next
    return tau, tau - v_curr


def _schedule(start, end, epoch, epochs):
    if epochs <= 1:
        return end
    f = min(epoch / (epochs - 1), 1.0)
    return start + f * (end - start)


def exploration_value(cfg: TrainConfig, epoch: int):
    """Current keep-prob (dropout) or epsilon for this epoch."""
    if cfg.mode == Q_LEARNING or cfg.exploration == "epsilon":
        return _schedule(cfg.epsilon_start, cfg.epsilon_end, epoch, cfg.epochs)
    return _schedule(cfg.keep_prob_start, cfg.keep_prob_end, epoch, cfg.epochs)


def make_memories(cfg: TrainConfig):
    if cfg.mode == PARTIAL:
        return [ReplayMemory(cfg.replay_capacity, axis=i) for i in range(3)]
    return [ReplayMemory(cfg.replay_capacity)]


def collect_episode(vol, vol_id, params, net_cfg, cfg: TrainConfig, rng,
                    memories, explore) -> EpisodeTrace:
    """One agent walk with the current parameters; transitions are pushed into
    the (per-axis) memories. explore is the keep-prob (dropout modes) or
    epsilon (q-learning / epsilon exploration).
    """
    margin = cfg.window // 2
    p = vol.landmark()
    q = localizer.sample_start(vol, margin, rng)
    trace = EpisodeTrace(volume_id=vol_id, start=q)

    def push(action, axis_mem):
        nonlocal q
        q2 = transition(q, action, cfg.eta, vol.dims)
        r = reward(q, action, q2, p)
        axis_mem.push(Transition(vol_id, q, action, q2, r, action.axis))
        trace.steps.append((q2, action, r))
        q = q2

    if cfg.mode == PARTIAL:
        n_seq = cfg.steps_per_episode // 3
        keep = explore if cfg.exploration == "dropout" else 1.0
        eps_greedy = explore if cfg.exploration == "epsilon" else 0.0
        for _ in range(n_seq):
            for axis in range(3):
                if eps_greedy and rng.random() < eps_greedy:
                    local = int(rng.integers(0, 2))
                else:
                    s = states_batch(vol, [q], cfg.window)
                    probs = network.forward_policy(params, net_cfg, s, axis=axis,
                                                   keep_prob=keep, rng=rng)[0]
                    local = int(rng.choice(2, p=probs / probs.sum()))
                push(Action(2 * axis + local), memories[axis])
    elif cfg.mode == ACTOR_CRITIC:
        keep = explore if cfg.exploration == "dropout" else 1.0
        eps_greedy = explore if cfg.exploration == "epsilon" else 0.0
        for _ in range(cfg.steps_per_episode):
            if eps_greedy and rng.random() < eps_greedy:
                idx = int(rng.integers(0, 6))
            else:
                s = states_batch(vol, [q], cfg.window)
                probs = network.forward_policy(params, net_cfg, s, keep_prob=keep,
                                               rng=rng)[0]
                idx = int(rng.choice(6, p=probs / probs.sum()))
            push(Action(idx), memories[0])
    else:  # q-learning, epsilon-greedy
        for _ in range(cfg.steps_per_episode):
            if rng.random() < explore:
                idx = int(rng.integers(0, 6))
            else:
                s = states_batch(vol, [q], cfg.window)
                idx = int(np.argmax(network.forward_q(params, net_cfg, s)[0]))
            push(Action(idx), memories[0])
    return trace


def _batch_arrays(batch, volumes, window):
    svols = [volumes[t.volume_id] for t in batch]
    s = np.stack([states_batch(v, [t.q], window)[0] for v, t in zip(svols, batch)])
    s2 = np.stack([states_batch(v, [t.q_next], window)[0] for v, t in zip(svols, batch)])
    r = np.array([t.reward for t in batch], dtype=np.float32)
    return s, s2, r


def _update_from_memory(params, net_cfg, cfg, volumes, mem, pushed, rng, axis):
    """One pass of ceil(pushed/minibatch) minibatches against one memory."""
    stats = {"actor_loss": 0.0, "critic_loss": 0.0, "batches": 0}
    n_batches = math.ceil(pushed / cfg.minibatch)
    for _ in range(n_batches):
        batch = mem.sample(cfg.minibatch, rng)
        s, s2, r = _batch_arrays(batch, volumes, cfg.window)
        if cfg.mode == Q_LEARNING:
            q_next = network.forward_q(params, net_cfg, s2)
            tau = r + cfg.gamma * q_next.max(axis=1)
            actions = [t.action.value for t in batch]
            loss, grads = network.q_loss_and_gradients(params, net_cfg, s, actions, tau)
            stats["critic_loss"] += loss
        else:
            v_curr = network.forward_value(params, net_cfg, s, axis=axis)
            v_next = network.forward_value(params, net_cfg, s2, axis=axis)
            tau, eps = td_quantities(r, v_next, v_curr, cfg.gamma)
            if axis is None:
                actions = [t.action.value for t in batch]
            else:
                actions = [t.action.value % 2 for t in batch]
            al, cl, grads = network.loss_and_gradients(
                params, net_cfg, s, actions, tau, eps, axis=axis)
            stats["actor_loss"] += al
            stats["critic_loss"] += cl
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericalError(f"non-finite gradient in axis {axis} batch {stats['batches']}")
        network.apply_update(params, grads, cfg.alpha)
        stats["batches"] += 1
    return stats


def train_epoch(params, net_cfg, volumes, memories, cfg: TrainConfig, rng, epoch):
    """Collect this epoch's episodes, then run the minibatch update pass.

    Returns epoch stats: mean episode reward and mean losses.
    """
    explore = exploration_value(cfg, epoch)
    rewards = []
    for e in range(cfg.episodes_per_epoch):
        vol_id = e % len(volumes)
        trace = collect_episode(volumes[vol_id], vol_id, params, net_cfg, cfg,
                                rng, memories, explore)
        rewards.append(trace.cumulative_reward)
    # every episode pushes exactly steps transitions, split evenly per axis
    if cfg.mode == PARTIAL:
        pushed = [cfg.episodes_per_epoch * (cfg.steps_per_episode // 3)] * 3
    else:
        pushed = [cfg.episodes_per_epoch * cfg.steps_per_episode]

    stats = {"mean_reward": float(np.mean(rewards)) if rewards else 0.0,
             "actor_loss": 0.0, "critic_loss": 0.0, "batches": 0}
    for i, mem in enumerate(memories):
        axis = i if cfg.mode == PARTIAL else None
        s = _update_from_memory(params, net_cfg, cfg, volumes, mem, pushed[i], rng, axis)
        for k in ("actor_loss", "critic_loss", "batches"):
            stats[k] += s[k]
    if stats["batches"]:
        stats["actor_loss"] /= stats["batches"]
        stats["critic_loss"] /= stats["batches"]
    return stats


@dataclass
class TrainResult:
    params: dict
    net_cfg: NetConfig
    curves: list          # rows: (epoch, mean_reward, train_err, val_err)
    best_params: dict
    best_epoch: int
    best_val_err: float


def _clone(params):
    return {k: v.copy() for k, v in params.items()}


def train(train_volumes, val_volumes, cfg: TrainConfig, net_cfg=None,
          out_dir=None, log=None) -> TrainResult:
    """Full training run with periodic held-out evaluation and curve emission.

    Writes curves.csv plus best/final checkpoints into out_dir when given.
    Deterministic in (cfg, volumes).
    """
    cfg.validate()
    if not train_volumes:
        raise ConfigError("need at least one training volume")
    if net_cfg is None:
        net_cfg = NetConfig(window=cfg.window, mode=cfg.mode)
    rng = np.random.default_rng(cfg.seed)
    params = network.init_params(net_cfg, rng)
    memories = make_memories(cfg)

    curves = []
    best = _clone(params)
    best_epoch, best_val = -1, float("inf")
    train_eval = train_volumes[:min(5, len(train_volumes))]

    for epoch in range(cfg.epochs):
        stats = train_epoch(params, net_cfg, train_volumes, memories, cfg, rng, epoch)
        train_err = val_err = float("nan")
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            policy = localizer.make_policy(params, net_cfg)
            train_err = localizer.evaluate(
                train_eval, policy, starts_per_volume=cfg.eval_starts,
                steps=cfg.eval_steps, last=cfg.eval_last, eta=cfg.eta,
                margin=cfg.window // 2, seed=cfg.seed + epoch).mean
            if val_volumes:
                val_err = localizer.evaluate(
                    val_volumes, policy, starts_per_volume=cfg.eval_starts,
                    steps=cfg.eval_steps, last=cfg.eval_last, eta=cfg.eta,
                    margin=cfg.window // 2, seed=cfg.seed + epoch).mean
                if val_err < best_val:
                    best_val, best_epoch = val_err, epoch
                    best = _clone(params)
        curves.append((epoch, stats["mean_reward"], train_err, val_err))
        if log:
            log(epoch, stats, train_err, val_err)

    if not val_volumes or best_epoch < 0:
        best, best_epoch, best_val = _clone(params), cfg.epochs - 1, float("nan")

    result = TrainResult(params=params, net_cfg=net_cfg, curves=curves,
                         best_params=best, best_epoch=best_epoch, best_val_err=best_val)
    if out_dir is not None:
        write_curves(os.path.join(out_dir, "curves.csv"), curves)
        network.save_checkpoint(os.path.join(out_dir, "final.ckpt"), params,
                                net_cfg, epoch=cfg.epochs, seed=cfg.seed)
        network.save_checkpoint(os.path.join(out_dir, "best.ckpt"), best,
                                net_cfg, epoch=best_epoch, seed=cfg.seed)
    return result


def write_curves(path, curves):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mean_reward", "train_err", "val_err"])
        for row in curves:
            w.writerow(row)


# ---------------------------------------------------------------------------
# Lookup-table variant for small-instance verification
# ---------------------------------------------------------------------------

class TabularPartialAgent:
    """Position-keyed logits/values standing in for the network on tiny grids."""

    def __init__(self, dims):
        self.dims = tuple(dims)
        self.logits = np.zeros(self.dims + (3, 2), dtype=np.float64)
        self.values = np.zeros(self.dims + (3,), dtype=np.float64)

    def probs(self, q, axis):
        z = self.logits[q[0], q[1], q[2], axis]
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def greedy_sign(self, q, axis):
        z = self.logits[q[0], q[1], q[2], axis]
        return 1 if z[0] >= z[1] else -1

    def match_fraction(self, target, min_dist=1):
        """Fraction of (position, axis) pairs with |p_i - q_i| >= min_dist whose
        greedy partial action matches the analytic sign oracle.
        """
        p = np.asarray(target, dtype=np.float64)
        greedy_plus = self.logits[..., 0] >= self.logits[..., 1]  # (nx,ny,nz,3)
        grids = np.meshgrid(*(np.arange(d) for d in self.dims), indexing="ij")
        total = matched = 0
        for axis in range(3):
            delta = p[axis] - grids[axis]
            mask = np.abs(delta) >= min_dist
            oracle_plus = delta > 0
            total += mask.sum()
            matched += (greedy_plus[..., axis][mask] == oracle_plus[mask]).sum()
        return matched / total


def train_tabular(dims, target, eta=1, gamma=0.9, alpha=0.1, epochs=200,
                  episodes_per_epoch=10, seq_per_episode=20, seed=0,
                  stop_at=None) -> tuple:
    """Incremental per-axis actor-critic with lookup tables on a tiny grid.

    Mirrors the network learner's unit sequence (x, y, z applied at the
    current position, immediate reward, only the responsible axis updated).
    Returns (agent, epochs_run).
    """
    rng = np.random.default_rng(seed)
    agent = TabularPartialAgent(dims)
    p = np.asarray(target, dtype=np.float64)
    for epoch in range(epochs):
        for _ in range(episodes_per_epoch):
            q = tuple(int(rng.integers(0, d)) for d in dims)
            for _ in range(seq_per_episode):
                for axis in range(3):
                    probs = agent.probs(q, axis)
                    local = int(rng.choice(2, p=probs))
                    a = Action(2 * axis + local)
                    q2 = transition(q, a, eta, dims)
                    r = reward(q, a, q2, p)
                    tau, eps = td_quantities(
                        r, agent.values[q2[0], q2[1], q2[2], axis],
                        agent.values[q[0], q[1], q[2], axis], gamma)
                    grad_log = -probs
                    grad_log[local] += 1.0
                    agent.logits[q[0], q[1], q[2], axis] += alpha * eps * grad_log
                    agent.values[q[0], q[1], q[2], axis] += alpha * 2.0 * eps
                    q = q2
        if stop_at is not None and agent.match_fraction(target) >= stop_at:
            return agent, epoch + 1
    return agent, epochs
