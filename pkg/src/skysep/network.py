"""Shared actor-critic network with attention pooling over intruders.

The ownship row and each intruder row pass through separate FC encoders
(LeakyReLU). Intruder embeddings are aggregated by masked multi-head
attention with the ownship embedding as the query; the pooled context is
concatenated with the ownship embedding and fed to the policy-logit and
value heads.

The forward pass is written once and runs either on plain numpy arrays
(fast rollout path) or on autodiff Tensors (training / input gradients);
both paths execute the identical op sequence, so results are bit-equal.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

N_FEATURES = 6
N_ACTIONS = 3

PROB_FLOOR = 1e-8  # symmetric floor inside KL / log-prob to avoid log(0)

_CKPT_MAGIC = b"ACNET"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    n_features: int = N_FEATURES
    max_intruders: int = 5
    encoder_widths: tuple = (64, 64)
    heads: int = 4
    head_dim: int = 16
    trunk_width: int = 64
    n_actions: int = N_ACTIONS

    @property
    def embed_dim(self) -> int:
        return self.encoder_widths[-1]

    @property
    def attn_dim(self) -> int:
        return self.heads * self.head_dim


def init_params(cfg: NetConfig, rng: np.random.Generator) -> dict:
    """He-style Gaussian init, deterministic given the generator state."""

    def dense(n_in, n_out, name, out):
        out[f"{name}_w"] = rng.normal(0.0, np.sqrt(2.0 / n_in), (n_in, n_out))
        out[f"{name}_b"] = np.zeros(n_out)

    p: dict[str, np.ndarray] = {}
    w0, w1 = cfg.encoder_widths
    for enc in ("own", "intr"):
        dense(cfg.n_features, w0, f"{enc}1", p)
        dense(w0, w1, f"{enc}2", p)
    for proj in ("q", "k", "v"):
        p[f"attn_{proj}_w"] = rng.normal(
            0.0, np.sqrt(1.0 / cfg.embed_dim), (cfg.embed_dim, cfg.attn_dim)
        )
    trunk_in = cfg.embed_dim + cfg.attn_dim
    dense(trunk_in, cfg.trunk_width, "pol1", p)
    dense(cfg.trunk_width, cfg.n_actions, "pol_out", p)
    dense(trunk_in, cfg.trunk_width, "val1", p)
    dense(cfg.trunk_width, 1, "val_out", p)
    # near-uniform initial policy and small initial values
    p["pol_out_w"] *= 0.01
    p["val_out_w"] *= 0.1
    return p


# -- dual-mode helpers ------------------------------------------------------


def _lrelu(x):
    if isinstance(x, Tensor):
        return ad.leaky_relu(x)
    return np.where(x > 0, x, ad.LEAKY_SLOPE * x)


def _reshape(x, shape):
    return x.reshape(*shape) if isinstance(x, Tensor) else x.reshape(shape)


def _transpose(x, axes):
    return x.transpose(axes)


def _concat(parts, axis):
    if isinstance(parts[0], Tensor):
        return ad.concat(parts, axis=axis)
    return np.concatenate(parts, axis=axis)


def _masked_softmax(scores, valid):
    if isinstance(scores, Tensor):
        return ad.masked_softmax(scores, valid)
    data = np.where(valid, scores, -np.inf)
    peak = np.max(data, axis=-1, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    e = np.where(valid, np.exp(data - peak), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    return np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)


@dataclass
class ForwardTape:
    """Holds the live autodiff graph of one forward pass."""

    inputs: Tensor
    logits: Tensor
    value: Tensor
    params: dict = field(repr=False, default=None)


def forward(params, rows, mask, cfg: NetConfig):
    """Run the network on a batch.

    rows: (B, 1+m, n) normalized state matrices (Tensor or ndarray)
    mask: (B, m) bool, True for valid intruder rows
    Returns (logits (B, n_actions), value (B,)).
    """
    B = rows.shape[0]
    H, dh = cfg.heads, cfg.head_dim
    m = cfg.max_intruders

    own = rows[:, 0, :]
    intr = rows[:, 1:, :]

    e_own = _lrelu(_lrelu(own @ params["own1_w"] + params["own1_b"])
                   @ params["own2_w"] + params["own2_b"])
    e_int = _lrelu(_lrelu(intr @ params["intr1_w"] + params["intr1_b"])
                   @ params["intr2_w"] + params["intr2_b"])

    q = _reshape(e_own @ params["attn_q_w"], (B, H, dh, 1))
    k = _transpose(_reshape(e_int @ params["attn_k_w"], (B, m, H, dh)), (0, 2, 1, 3))
    v = _transpose(_reshape(e_int @ params["attn_v_w"], (B, m, H, dh)), (0, 2, 1, 3))

    scores = _reshape(k @ q, (B, H, m)) * (1.0 / np.sqrt(dh))
    weights = _masked_softmax(scores, mask[:, None, :])  # (B, H, m)
    context = _reshape(_reshape(weights, (B, H, 1, m)) @ v, (B, H * dh))

    z = _concat([e_own, context], axis=-1)
    hp = _lrelu(z @ params["pol1_w"] + params["pol1_b"])
    logits = hp @ params["pol_out_w"] + params["pol_out_b"]
    hv = _lrelu(z @ params["val1_w"] + params["val1_b"])
    value = _reshape(hv @ params["val_out_w"] + params["val_out_b"], (B,))
    return logits, value


def forward_tape(params, rows, mask, cfg: NetConfig,
                 wrt_input: bool = False) -> ForwardTape:
    """Forward pass recording the autodiff graph."""
    tparams = {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=True)
               for k, v in params.items()}
    tin = Tensor(rows, requires_grad=wrt_input)
    logits, value = forward(tparams, tin, mask, cfg)
    return ForwardTape(inputs=tin, logits=logits, value=value, params=tparams)


def policy_value(params, rows, mask, cfg: NetConfig):
    """Fast path: action probabilities and values on plain numpy arrays."""
    logits, value = forward(params, rows, mask, cfg)
    return softmax(logits), value


def input_gradient(params, rows_norm, mask, cfg: NetConfig) -> np.ndarray:
    """Exact gradient of the value head w.r.t. the normalized inputs.

    Returns a (B, 1+m, n) array; gradients in masked rows are exactly zero
    (attention weights there are hard zeros). Callers chain through the
    feature normalization to recover physical units.
    """
    tape = forward_tape(params, rows_norm, mask, cfg, wrt_input=True)
    tape.value.backward(np.ones(rows_norm.shape[0]))
    g = tape.inputs.grad
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite input gradient")
    g = g.copy()
    g[:, 1:, :][~mask] = 0.0
    return g


def param_gradient(loss: Tensor, tparams: dict) -> dict:
    """Reverse-mode gradients of a scalar loss for every parameter tensor."""
    loss.backward()
    grads = {}
    for k, t in tparams.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
        grads[k] = g
    return grads


# -- categorical distribution ops -------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_prob(probs: np.ndarray, action) -> np.ndarray:
    p = np.maximum(probs, PROB_FLOOR)
    return np.log(np.take_along_axis(p, np.asarray(action)[..., None], -1))[..., 0]


def entropy(probs: np.ndarray) -> np.ndarray:
    p = np.maximum(probs, PROB_FLOOR)
    return -(probs * np.log(p)).sum(axis=-1)


def kl_divergence(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    pf = np.maximum(p, PROB_FLOOR)
    qf = np.maximum(q, PROB_FLOOR)
    return (p * (np.log(pf) - np.log(qf))).sum(axis=-1)


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorized categorical sampling by inverse CDF."""
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])[..., None]
    return np.minimum((u > cdf).sum(axis=-1), probs.shape[-1] - 1)


# -- checkpoint io -----------------------------------------------------------


def save_checkpoint(path, params: dict, cfg: NetConfig, extra: dict | None = None):
    """Versioned binary format: magic, version, JSON header, named tensors
    (little-endian float64)."""
    header = {"config": cfg.__dict__ | {}, "extra": extra or {}}
    hjson = json.dumps(header, default=list).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<HI", _CKPT_VERSION, len(hjson)))
        f.write(hjson)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


class CheckpointError(Exception):
    pass


def load_checkpoint(path):
    """Returns (params, NetConfig, extra dict)."""
    with open(path, "rb") as f:
        if f.read(len(_CKPT_MAGIC)) != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a skysep checkpoint")
        version, hlen = struct.unpack("<HI", f.read(6))
        if version != _CKPT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        header = json.loads(f.read(hlen))
        raw_cfg = header["config"]
        for key in ("encoder_widths",):
            raw_cfg[key] = tuple(raw_cfg[key])
        cfg = NetConfig(**raw_cfg)
        (count,) = struct.unpack("<I", f.read(4))
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            params[name] = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).copy()
    return params, cfg, header.get("extra", {})
