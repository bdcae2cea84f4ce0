"""Convolutional policy/value approximator with hand-written backprop.

A shared trunk of conv(3x3, same) -> ReLU -> maxpool(2x2) stages feeds either
three per-axis two-way policy heads and three per-axis scalar value heads
("partial" mode), a single six-way policy head plus one value head
("actor-critic" mode), or a single six-way linear Q head ("q-learning" mode).
Heads are one hidden fully-connected layer each.

All gradients are of scalar LOSSES; apply_update always descends, so the
policy-improvement ascent is encoded by the negated advantage-weighted
log-likelihood loss.
"""
import json
from dataclasses import dataclass, asdict

import numpy as np

from . import kernels
from .errors import ConfigError, NumericalError, VolumeIOError
from .mdp import AXES

PARTIAL = "partial"
ACTOR_CRITIC = "actor-critic"
Q_LEARNING = "q-learning"
MODES = (PARTIAL, ACTOR_CRITIC, Q_LEARNING)


@dataclass(frozen=True)
class NetConfig:
    window: int = 16
    conv_channels: tuple = (16, 32, 32, 64)
    hidden: int = 128
    mode: str = PARTIAL

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        m = self.window
        for _ in self.conv_channels:
            if m % 2 != 0:
                raise ConfigError(
                    f"window {self.window} not divisible by 2^{len(self.conv_channels)}")
            m //= 2
        if m < 1:
            raise ConfigError("too many pooling stages for this window")

    @property
    def flat_dim(self) -> int:
        side = self.window >> len(self.conv_channels)
        return self.conv_channels[-1] * side * side

    def head_names(self):
        if self.mode == PARTIAL:
            return [("pol", ax) for ax in AXES] + [("val", ax) for ax in AXES]
        if self.mode == ACTOR_CRITIC:
            return [("pol", None), ("val", None)]
        return [("q", None)]


def _head_prefix(kind, axis):
    return kind if axis is None else f"{kind}_{axis}"


def head_param_names(cfg: NetConfig, kind, axis=None):
    p = _head_prefix(kind, axis)
    return [f"{p}_w1", f"{p}_b1", f"{p}_w2", f"{p}_b2"]


def trunk_param_names(cfg: NetConfig):
    names = []
    for i in range(len(cfg.conv_channels)):
        names += [f"conv{i}_w", f"conv{i}_b"]
    return names


def param_names(cfg: NetConfig):
    names = trunk_param_names(cfg)
    for kind, axis in cfg.head_names():
        names += head_param_names(cfg, kind, axis)
    return names


def _head_out_dim(kind, mode):
    if kind == "val":
        return 1
    if kind == "pol" and mode == PARTIAL:
        return 2
    return 6


def init_params(cfg: NetConfig, rng, dtype=np.float32):
    """Fan-in scaled uniform weights, zero biases."""
    def uni(shape, fan_in):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape).astype(dtype)

    params = {}
    c_in = 3
    for i, c_out in enumerate(cfg.conv_channels):
        params[f"conv{i}_w"] = uni((c_out, c_in, 3, 3), c_in * 9)
        params[f"conv{i}_b"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    for kind, axis in cfg.head_names():
        p = _head_prefix(kind, axis)
        out = _head_out_dim(kind, cfg.mode)
        params[f"{p}_w1"] = uni((cfg.hidden, cfg.flat_dim), cfg.flat_dim)
        params[f"{p}_b1"] = np.zeros(cfg.hidden, dtype=dtype)
        params[f"{p}_w2"] = uni((out, cfg.hidden), cfg.hidden)
        params[f"{p}_b2"] = np.zeros(out, dtype=dtype)
    return params


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def _trunk_forward(params, cfg, x):
    """x: (B, 3, m, m) -> (flat (B, flat_dim), cache)."""
    if x.ndim != 4 or x.shape[1:] != (3, cfg.window, cfg.window):
        raise ConfigError(
            f"state batch shape {x.shape} does not match trunk (B, 3, {cfg.window}, {cfg.window})")
    stages = []
    for i in range(len(cfg.conv_channels)):
        pre = kernels.conv_forward(x, params[f"conv{i}_w"], params[f"conv{i}_b"])
        act = np.maximum(pre, 0)
        pooled, idx = kernels.maxpool_forward(act)
        stages.append((x, pre, idx, act.shape))
        x = pooled
    flat = x.reshape(x.shape[0], -1)
    return flat, (stages, x.shape)


def _trunk_backward(params, cfg, cache, dflat):
    stages, pooled_shape = cache
    d = dflat.reshape(pooled_shape)
    grads = {}
    for i in reversed(range(len(cfg.conv_channels))):
        x_in, pre, idx, act_shape = stages[i]
        da = kernels.maxpool_backward(idx, np.ascontiguousarray(d), act_shape[2], act_shape[3])
        dpre = np.where(pre > 0, da, 0).astype(da.dtype)
        dx, dw, db = kernels.conv_backward(x_in, params[f"conv{i}_w"], dpre)
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
        d = dx
    return grads


def _mlp_forward(params, prefix, flat):
    h_pre = flat @ params[f"{prefix}_w1"].T + params[f"{prefix}_b1"]
    h = np.maximum(h_pre, 0)
    out = h @ params[f"{prefix}_w2"].T + params[f"{prefix}_b2"]
    return out, (flat, h_pre, h)

def _mlp_backward(params, prefix, cache, dout):
    flat, h_pre, h = cache
    grads = {
        f"{prefix}_w2": dout.T @ h,
        f"{prefix}_b2": dout.sum(axis=0),
    }
    dh = dout @ params[f"{prefix}_w2"]
    dh_pre = np.where(h_pre > 0, dh, 0).astype(dh.dtype)
    grads[f"{prefix}_w1"] = dh_pre.T @ flat
    grads[f"{prefix}_b1"] = dh_pre.sum(axis=0)
    dflat = dh_pre @ params[f"{prefix}_w1"]
    return grads, dflat


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward_policy(params, cfg, states, axis=None, keep_prob=1.0, rng=None):
    """Action distribution(s) for a batch of states.

    axis selects the partial head in partial mode (None = the single 6-way
    head). Dropout on the flat trunk output is applied only when keep_prob < 1
    and rng is given; it exists for exploration-time sampling only.
    """
    flat, _ = _trunk_forward(params, cfg, states)
    if keep_prob < 1.0:
        if rng is None:
            raise ConfigError("dropout sampling requires an rng")
        mask = (rng.random(flat.shape) < keep_prob).astype(flat.dtype)
        flat = flat * mask / keep_prob
    prefix = _head_prefix("pol", AXES[axis] if axis is not None else None)
    logits, _ = _mlp_forward(params, prefix, flat)
    return _softmax(logits)


def forward_value(params, cfg, states, axis=None):
    flat, _ = _trunk_forward(params, cfg, states)
    prefix = _head_prefix("val", AXES[axis] if axis is not None else None)
    out, _ = _mlp_forward(params, prefix, flat)
    return out[:, 0]


def forward_q(params, cfg, states):
    flat, _ = _trunk_forward(params, cfg, states)
    out, _ = _mlp_forward(params, "q", flat)
    return out


def loss_and_gradients(params, cfg, states, actions, td_target, td_error, axis=None,
                       actor=True, critic=True):
    """Mean-batch actor and critic losses and their gradients.

    actions are head-local indices (0/1 in partial mode, 0..5 otherwise).
    td_error enters the actor loss as a fixed coefficient; td_target is the
    critic regression target. Gradients cover the selected head(s) and the
    shared trunk only; all other heads are untouched.
    """
    B = states.shape[0]
    if B == 0:
        raise ConfigError("empty batch")
    actions = np.asarray(actions, dtype=np.intp)
    td_target = np.asarray(td_target, dtype=states.dtype)
    td_error = np.asarray(td_error, dtype=states.dtype)

    flat, trunk_cache = _trunk_forward(params, cfg, states)
    if not np.all(np.isfinite(flat)):
        bad = int(np.argwhere(~np.isfinite(flat).all(axis=1))[0, 0])
        raise NumericalError(f"non-finite trunk activation at batch index {bad}")

    ax_name = AXES[axis] if axis is not None else None
    grads = {}
    dflat = np.zeros_like(flat)
    actor_loss = critic_loss = 0.0

    if actor:
        prefix = _head_prefix("pol", ax_name)
        logits, cache = _mlp_forward(params, prefix, flat)
        probs = _softmax(logits)
        picked = np.clip(probs[np.arange(B), actions], 1e-12, None)
        actor_loss = float(np.mean(-td_error * np.log(picked)))
        dlogits = probs * td_error[:, None]
        dlogits[np.arange(B), actions] -= td_error
        dlogits /= B
        g, df = _mlp_backward(params, prefix, cache, dlogits.astype(flat.dtype))
        grads.update(g)
        dflat += df

    if critic:
        prefix = _head_prefix("val", ax_name)
        out, cache = _mlp_forward(params, prefix, flat)
        v = out[:, 0]
        critic_loss = float(np.mean((td_target - v) ** 2))
        dv = (2.0 * (v - td_target) / B)[:, None]
        g, df = _mlp_backward(params, prefix, cache, dv.astype(flat.dtype))
        grads.update(g)
        dflat += df

    grads.update(_trunk_backward(params, cfg, trunk_cache, dflat))
    return actor_loss, critic_loss, grads


def q_loss_and_gradients(params, cfg, states, actions, td_target):
    """Squared TD-error loss on the Q head for the taken actions."""
    B = states.shape[0]
    actions = np.asarray(actions, dtype=np.intp)
    td_target = np.asarray(td_target, dtype=states.dtype)
    flat, trunk_cache = _trunk_forward(params, cfg, states)
    out, cache = _mlp_forward(params, "q", flat)
    qa = out[np.arange(B), actions]
    loss = float(np.mean((td_target - qa) ** 2))
    dout = np.zeros_like(out)
    dout[np.arange(B), actions] = 2.0 * (qa - td_target) / B
    grads, dflat = _mlp_backward(params, "q", cache, dout)
    grads.update(_trunk_backward(params, cfg, trunk_cache, dflat))
    return loss, grads


def apply_update(params, grads, alpha):
    """In-place plain SGD descent step; returns params."""
    for name, g in grads.items():
        params[name] -= (alpha * g).astype(params[name].dtype)
    return params


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------

TINY_CONFIGS = {
    "policy": NetConfig(window=8, conv_channels=(4, 8), hidden=16, mode=PARTIAL),
    "value": NetConfig(window=8, conv_channels=(4, 8), hidden=16, mode=PARTIAL),
    "q": NetConfig(window=8, conv_channels=(4, 8), hidden=16, mode=Q_LEARNING),
}


def gradient_check(cfg: NetConfig, seed: int, head: str = "policy",
                   batch: int = 3, h: float = 1e-4) -> float:
    """Max relative error of analytic vs. central-difference gradients.

    Runs in double precision over every parameter of the checked head and the
    trunk. head is "policy", "value", or "q".
    """
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng, dtype=np.float64)
    states = rng.random((batch, 3, cfg.window, cfg.window))
    td_target = rng.standard_normal(batch)
    td_error = rng.standard_normal(batch)
    if head == "q":
        actions = rng.integers(0, 6, size=batch)

        def loss_of(p):
            loss, g = q_loss_and_gradients(p, cfg, states, actions, td_target)
            return loss, g
    else:
        axis = 0 if cfg.mode == PARTIAL else None
        n_act = 2 if cfg.mode == PARTIAL else 6
        actions = rng.integers(0, n_act, size=batch)
        actor = head == "policy"

        def loss_of(p):
            al, cl, g = loss_and_gradients(p, cfg, states, actions, td_target,
                                           td_error, axis=axis,
                                           actor=actor, critic=not actor)
            return al + cl, g

    _, analytic = loss_of(params)
    max_rel = 0.0
    for name, g in analytic.items():
        flat_p = params[name].reshape(-1)
        flat_g = g.reshape(-1)
        for k in range(flat_p.size):
            orig = flat_p[k]
            flat_p[k] = orig + h
            lp, _ = loss_of(params)
            flat_p[k] = orig - h
            lm, _ = loss_of(params)
            flat_p[k] = orig
            num = (lp - lm) / (2 * h)
            rel = abs(flat_g[k] - num) / max(abs(flat_g[k]) + abs(num), 1e-4)
            max_rel = max(max_rel, rel)
    return max_rel


# ---------------------------------------------------------------------------
# Checkpoints: JSON manifest line + f32le payload per tensor in manifest order.
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, cfg: NetConfig, epoch=0, seed=0):
    names = param_names(cfg)
    manifest = {
        "config": {**asdict(cfg), "conv_channels": list(cfg.conv_channels)},
        "epoch": int(epoch),
        "seed": int(seed),
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(manifest).encode("utf-8") + b"\n")
        for n in names:
            f.write(np.asarray(params[n], dtype="<f4").ravel().tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        try:
            manifest = json.loads(f.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise VolumeIOError(f"malformed checkpoint manifest: {e}") from e
        c = manifest["config"]
        cfg = NetConfig(window=c["window"], conv_channels=tuple(c["conv_channels"]),
                        hidden=c["hidden"], mode=c["mode"])
        params = {}
        for t in manifest["tensors"]:
            shape = tuple(t["shape"])
            n = int(np.prod(shape))
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise VolumeIOError(f"checkpoint payload truncated at tensor {t['name']!r}")
            params[t["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return params, cfg, {"epoch": manifest["epoch"], "seed": manifest["seed"]}
