"""Channel-wise cost model: per-channel BiGRU stacks, last-step attention, linear head.

Parameters live in one flat dict with exact per-channel shapes (so counting
them is honest); at run time the channels are zero-padded and stacked so a
single batched time loop serves every channel and both directions.

Head input is the ordered concatenation of the channel summaries, e.g.
``[dx | px | rx | cost]``; the order is part of the checkpoint.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..nn import attention_backward, attention_forward, bigru_backward, bigru_forward, xavier
from ..nn.attention import scatter_last
from ..nn.checkpoint import CheckpointError, load_tensors, save_tensors
from .inputs import CODE_CHANNELS, input_width

MODES = ("channel_wise", "single_channel", "per_code")
EMBEDDINGS = ("pretrained", "trainable")
MAX_CODE_CHANNELS = 32


@dataclass
class ModelConfig:
    mode: str = "channel_wise"
    embedding: str = "pretrained"
    attention: bool = True
    granularity: str = "day"
    embed_dim: int = 64
    hidden: int = 32
    attn_dim: int = 32
    attended_dim: int = 64
    n_layers: int = 2
    seq_cap: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.embedding not in EMBEDDINGS:
            raise ValueError(f"embedding must be one of {EMBEDDINGS}, got {self.embedding!r}")
        for name in ("embed_dim", "hidden", "attn_dim", "attended_dim", "n_layers", "seq_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def summary_width(self):
        return self.attended_dim if self.attention else 2 * self.hidden


@dataclass
class ChannelModel:
    config: ModelConfig
    channels: tuple
    params: dict = field(default_factory=dict)
    vocab_sizes: dict = field(default_factory=dict)   # trainable-embedding rows per code channel

    @classmethod
    def init(cls, config: ModelConfig, channels, vocab_sizes=None):
        channels = tuple(channels)
        if config.mode == "per_code" and len(channels) - 1 > MAX_CODE_CHANNELS:
            raise ValueError(f"one-channel-per-code mode is capped at {MAX_CODE_CHANNELS} code channels")
        rng = np.random.default_rng(config.seed)
        m, p = config.embed_dim, config.hidden
        params = {}
        vocab_sizes = dict(vocab_sizes or {})
        for ch in channels:
            if config.embedding == "trainable" and ch in CODE_CHANNELS:
                V = vocab_sizes[ch]
                params[f"{ch}.emb"] = rng.normal(0.0, 0.1, (V, m))
            width = input_width(ch, m)
            for layer in range(config.n_layers):
                fan_in = width if layer == 0 else 2 * p
                params[f"{ch}.L{layer}.Wx"] = xavier(rng, (2, fan_in, 3 * p), fan_in, 3 * p)
                params[f"{ch}.L{layer}.Wh"] = xavier(rng, (2, p, 3 * p), p, 3 * p)
                params[f"{ch}.L{layer}.b"] = np.zeros((2, 3 * p))
            if config.attention:
                q, r = config.attn_dim, config.attended_dim
                params[f"{ch}.att.Wa"] = xavier(rng, (q, 4 * p), 4 * p, q)
                params[f"{ch}.att.v"] = xavier(rng, (q,), q, 1)
                params[f"{ch}.att.Wc"] = xavier(rng, (r, 4 * p), 4 * p, r)
        F = config.summary_width * len(channels)
        params["head.W"] = xavier(rng, (F,), F, 1)
        params["head.b"] = np.zeros(1)
        used = {ch: vocab_sizes[ch] for ch in channels if ch in vocab_sizes}
        return cls(config, channels, params, used if config.embedding == "trainable" else {})

    def count_parameters(self):
        return int(sum(v.size for v in self.params.values()))

    # -- forward / backward over a collated Batch -------------------------------------------

    def _stack_layer(self, layer, width):
        C = len(self.channels)
        P3 = 3 * self.config.hidden
        Wx = np.zeros((2 * C, width, P3))
        for c, ch in enumerate(self.channels):
            w = self.params[f"{ch}.L{layer}.Wx"]
            Wx[c, : w.shape[1]] = w[0]
            Wx[C + c, : w.shape[1]] = w[1]
        Wh = np.concatenate([self.params[f"{ch}.L{layer}.Wh"][d] [None]
                             for d in (0, 1) for ch in self.channels])
        b = np.concatenate([self.params[f"{ch}.L{layer}.b"][d][None]
                            for d in (0, 1) for ch in self.channels])
        return Wx, Wh, b

    def forward(self, batch):
        """Raw head outputs (log-cost scale) of shape (B,), per-channel attention and a cache."""
        cfg = self.config
        C = len(self.channels)
        X = batch.X
        B, T = X.shape[1], X.shape[2]
        if X.shape[0] != C:
            raise ValueError(f"batch has {X.shape[0]} channels, model expects {C}")
        if cfg.embedding == "trainable":
            X = X.copy()
            for c, ch in enumerate(self.channels):
                if f"{ch}.emb" in self.params:
                    E = self.params[f"{ch}.emb"]
                    if batch.bag_mats[ch].shape[1] != E.shape[0]:
                        raise ValueError(f"{ch}: bag vocabulary {batch.bag_mats[ch].shape[1]} != {E.shape[0]}")
                    X[c, :, :, : cfg.embed_dim] = (batch.bag_mats[ch] @ E).reshape(B, T, -1)
        caches = []
        H = X
        for layer in range(cfg.n_layers):
            Wx, Wh, b = self._stack_layer(layer, H.shape[-1])
            H, cache = bigru_forward(Wx, Wh, b, H, batch.mask, batch.lengths)
            caches.append(cache)
        if cfg.attention:
            Wa = np.stack([self.params[f"{ch}.att.Wa"] for ch in self.channels])
            v = np.stack([self.params[f"{ch}.att.v"] for ch in self.channels])
            Wc = np.stack([self.params[f"{ch}.att.Wc"] for ch in self.channels])
            S, alpha, att_cache = attention_forward(Wa, v, Wc, H, batch.lengths)
        else:
            last = (batch.lengths - 1)[..., None, None]
            S = np.take_along_axis(H, last, axis=2)[:, :, 0]
            alpha, att_cache = None, last
        feat = np.concatenate(list(S), axis=1)                       # (B, C*width)
        y = feat @ self.params["head.W"] + self.params["head.b"][0]
        cache = (X, H.shape, caches, att_cache, feat, B, T)
        return y, alpha, cache

    def backward(self, dy, cache, batch):
        cfg = self.config
        X, Hshape, caches, att_cache, feat, B, T = cache
        C = len(self.channels)
        grads = {"head.W": feat.T @ dy, "head.b": np.array([dy.sum()])}
        dS = np.stack(np.split(np.outer(dy, self.params["head.W"]), C, axis=1))   # (C, B, width)
        if cfg.attention:
            dH, dWa, dv, dWc = attention_backward(dS, att_cache)
            for c, ch in enumerate(self.channels):
                grads[f"{ch}.att.Wa"] = dWa[c]
                grads[f"{ch}.att.v"] = dv[c]
                grads[f"{ch}.att.Wc"] = dWc[c]
        else:
            dH = np.zeros(Hshape)
            scatter_last(dH, att_cache, dS)
        for layer in range(cfg.n_layers - 1, -1, -1):
            dH, dWx, dWh, db = bigru_backward(dH, caches[layer])
            for c, ch in enumerate(self.channels):
                rows = self.params[f"{ch}.L{layer}.Wx"].shape[1]
                grads[f"{ch}.L{layer}.Wx"] = np.stack([dWx[c, :rows], dWx[C + c, :rows]])
                grads[f"{ch}.L{layer}.Wh"] = np.stack([dWh[c], dWh[C + c]])
                grads[f"{ch}.L{layer}.b"] = np.stack([db[c], db[C + c]])
        for c, ch in enumerate(self.channels):
            if f"{ch}.emb" in self.params:
                dX = dH[c, :, :, : cfg.embed_dim].reshape(B * T, -1)
                grads[f"{ch}.emb"] = np.asarray(batch.bag_mats[ch].T @ dX)
        return grads

    def loss_and_grads(self, batch):
        """Mean squared error on ``log1p(cost)`` and its gradients."""
        y, _, cache = self.forward(batch)
        resid = y - batch.targets
        loss = float(np.mean(resid ** 2))
        grads = self.backward(2.0 * resid / len(resid), cache, batch)
        return loss, grads

    # -- persistence ------------------------------------------------------------------------

    def header(self):
        return {"kind": "channel_model", "channels": list(self.channels), "config": asdict(self.config),
                "vocab_sizes": self.vocab_sizes}

    def save(self, path, extra=None):
        header = self.header()
        if extra:
            header["extra"] = extra
        save_tensors(path, self.params, header)

    @classmethod
    def load(cls, path, expected_channels=None):
        tensors, header = load_tensors(path)
        if header.get("kind") != "channel_model":
            raise CheckpointError(f"{path}: not a channel-model checkpoint")
        channels = tuple(header["channels"])
        if expected_channels is not None and tuple(expected_channels) != channels:
            raise CheckpointError(
                f"{path}: channel order {list(channels)} differs from expected {list(expected_channels)}")
        model = cls(ModelConfig(**header["config"]), channels, tensors, header.get("vocab_sizes", {}))
        ref = cls.init(model.config, channels, model.vocab_sizes)
        for name, arr in ref.params.items():
            if name not in tensors or tensors[name].shape != arr.shape:
                found = None if name not in tensors else tensors[name].shape
                raise CheckpointError(f"{path}: tensor {name} expected shape {arr.shape}, found {found}")
        return model


def describe(model: ChannelModel):
    return json.dumps(model.header(), sort_keys=True)
