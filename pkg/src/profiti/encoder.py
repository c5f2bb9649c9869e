"""Condition encoder: maps (observations, queries) to one embedding row per
query.

Observations are embedded rowwise from (time encoding, channel embedding,
standardized value); query tokens then cross-attend over the observation
rows for a configurable number of rounds.  Every step is either rowwise or
an attention sum over observations, so the output is equivariant in the
queries and invariant to observation order (up to float summation order).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import SeriesInstance
from .errors import ValidationError


@dataclass
class EncoderConfig:
    dim: int = 64
    n_heads: int = 2
    n_layers: int = 2
    time_dim: int = 16
    channel_dim: int = 8
    value_dim: int = 8
    min_period: float = 0.1
    max_period: float = 100.0

    def __post_init__(self):
        if self.dim % self.n_heads:
            raise ValueError(f"dim {self.dim} not divisible by {self.n_heads} heads")
        if self.time_dim < 3:
            raise ValueError("time_dim must be at least 3 (raw value plus sin/cos)")


def time_encoding(times, cfg: EncoderConfig):
    """Raw time plus sin/cos features at geometrically spaced frequencies."""
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    n_sin = (cfg.time_dim - 1 + 1) // 2
    n_cos = cfg.time_dim - 1 - n_sin
    n_freq = max(n_sin, n_cos)
    periods = np.geomspace(cfg.min_period, cfg.max_period, n_freq)
    angles = 2.0 * np.pi * times[:, None] / periods[None, :]
    parts = [times[:, None], np.sin(angles[:, :n_sin])]
    if n_cos:
        parts.append(np.cos(angles[:, :n_cos]))
    return np.concatenate(parts, axis=1)


@dataclass
class CrossAttentionLayer:
    wq: list  # per head, (dim, head_dim)
    wk: list
    wv: list
    wo: ad.Tensor
    bo: ad.Tensor
    ln1_scale: ad.Tensor
    ln1_bias: ad.Tensor
    ff_w1: ad.Tensor
    ff_b1: ad.Tensor
    ff_w2: ad.Tensor
    ff_b2: ad.Tensor
    ln2_scale: ad.Tensor
    ln2_bias: ad.Tensor

    def tensors(self):
        return [*self.wq, *self.wk, *self.wv, self.wo, self.bo,
                self.ln1_scale, self.ln1_bias,
                self.ff_w1, self.ff_b1, self.ff_w2, self.ff_b2,
                self.ln2_scale, self.ln2_bias]


@dataclass
class EncoderParams:
    channel_emb: ad.Tensor
    value_w: ad.Tensor
    value_b: ad.Tensor
    obs_w1: ad.Tensor
    obs_b1: ad.Tensor
    obs_w2: ad.Tensor
    obs_b2: ad.Tensor
    qry_w1: ad.Tensor
    qry_b1: ad.Tensor
    qry_w2: ad.Tensor
    qry_b2: ad.Tensor
    layers: list = field(default_factory=list)

    def tensors(self):
        ts = [self.channel_emb, self.value_w, self.value_b,
              self.obs_w1, self.obs_b1, self.obs_w2, self.obs_b2,
              self.qry_w1, self.qry_b1, self.qry_w2, self.qry_b2]
        for layer in self.layers:
            ts.extend(layer.tensors())
        return ts


def init_encoder_params(cfg: EncoderConfig, n_channels, rng):
    d = cfg.dim
    head_dim = d // cfg.n_heads

    def mat(rows, cols, name):
        return ad.parameter(rng.standard_normal((rows, cols)) / np.sqrt(rows), name)

    def vec(n, name, value=0.0):
        return ad.parameter(np.full(n, value, dtype=np.float64), name)

    obs_in = cfg.time_dim + cfg.channel_dim + cfg.value_dim
    qry_in = cfg.time_dim + cfg.channel_dim
    params = EncoderParams(
        channel_emb=ad.parameter(rng.standard_normal((n_channels, cfg.channel_dim))
                                 / np.sqrt(cfg.channel_dim), "enc.channel_emb"),
        value_w=mat(1, cfg.value_dim, "enc.value_w"),
        value_b=vec(cfg.value_dim, "enc.value_b"),
        obs_w1=mat(obs_in, d, "enc.obs_w1"),
        obs_b1=vec(d, "enc.obs_b1"),
        obs_w2=mat(d, d, "enc.obs_w2"),
        obs_b2=vec(d, "enc.obs_b2"),
        qry_w1=mat(qry_in, d, "enc.qry_w1"),
        qry_b1=vec(d, "enc.qry_b1"),
        qry_w2=mat(d, d, "enc.qry_w2"),
        qry_b2=vec(d, "enc.qry_b2"),
    )
    for i in range(cfg.n_layers):
        p = f"enc.layer{i}"
        params.layers.append(CrossAttentionLayer(
            wq=[mat(d, head_dim, f"{p}.h{h}.wq") for h in range(cfg.n_heads)],
            wk=[mat(d, head_dim, f"{p}.h{h}.wk") for h in range(cfg.n_heads)],
            wv=[mat(d, head_dim, f"{p}.h{h}.wv") for h in range(cfg.n_heads)],
            wo=mat(d, d, f"{p}.wo"),
            bo=vec(d, f"{p}.bo"),
            ln1_scale=vec(d, f"{p}.ln1_scale", 1.0),
            ln1_bias=vec(d, f"{p}.ln1_bias"),
            ff_w1=mat(d, 2 * d, f"{p}.ff_w1"),
            ff_b1=vec(2 * d, f"{p}.ff_b1"),
            ff_w2=mat(2 * d, d, f"{p}.ff_w2"),
            ff_b2=vec(d, f"{p}.ff_b2"),
            ln2_scale=vec(d, f"{p}.ln2_scale", 1.0),
            ln2_bias=vec(d, f"{p}.ln2_bias"),
        ))
    return params


def _layer_norm(x, scale, bias):
    centered = x - ad.mean_(x, axis=-1, keepdims=True)
    var = ad.mean_(centered * centered, axis=-1, keepdims=True)
    return centered / ad.sqrt(var + 1e-8) * scale + bias


def _mlp(x, w1, b1, w2, b2):
    return ad.matmul(ad.tanh(ad.matmul(x, w1) + b1), w2) + b2


def _check_channels(indices, n_channels, what):
    bad = [c for c in indices if not 0 <= c < n_channels]
    if bad:
        raise ValidationError(f"{what} channel {bad[0]} outside [0, {n_channels})")


def encode_observations(observations, params: EncoderParams, cfg: EncoderConfig,
                        norm_stats):
    """Embed each observation event into a row of an (I, dim) matrix."""
    if not observations:
        raise ValidationError("at least one observation required")
    channels = [ob.c for ob in observations]
    _check_channels(channels, params.channel_emb.data.shape[0], "observation")
    mean, std = norm_stats
    times = np.array([ob.t for ob in observations])
    values = np.array([(ob.o - mean[ob.c]) / std[ob.c] for ob in observations])
    time_feats = ad.tensor(time_encoding(times, cfg))
    chan_feats = ad.gather_rows(params.channel_emb, np.array(channels))
    value_feats = ad.matmul(ad.tensor(values[:, None]), params.value_w) + params.value_b
    h = ad.concat([time_feats, chan_feats, value_feats], axis=1)
    return _mlp(h, params.obs_w1, params.obs_b1, params.obs_w2, params.obs_b2)


def encode_queries(instance: SeriesInstance, params: EncoderParams,
                   cfg: EncoderConfig, norm_stats):
    """Condition matrix: one row per query, cross-attending over the encoded
    observations."""
    obs = encode_observations(instance.observations, params, cfg, norm_stats)
    channels = [q.c for q in instance.queries]
    _check_channels(channels, params.channel_emb.data.shape[0], "query")
    times = np.array([q.t for q in instance.queries])
    tokens = ad.concat(
        [ad.tensor(time_encoding(times, cfg)),
         ad.gather_rows(params.channel_emb, np.array(channels))],
        axis=1,
    )
    x = _mlp(tokens, params.qry_w1, params.qry_b1, params.qry_w2, params.qry_b2)
    inv_sqrt = 1.0 / np.sqrt(cfg.dim // cfg.n_heads)
    for layer in params.layers:
        heads = []
        for wq, wk, wv in zip(layer.wq, layer.wk, layer.wv):
            q = ad.matmul(x, wq)
            k = ad.matmul(obs, wk)
            v = ad.matmul(obs, wv)
            weights = ad.softmax(ad.matmul(q, ad.transpose(k)) * inv_sqrt, axis=-1)
            heads.append(ad.matmul(weights, v))
        attended = ad.matmul(ad.concat(heads, axis=1), layer.wo) + layer.bo
        x = _layer_norm(x + attended, layer.ln1_scale, layer.ln1_bias)
        ff = _mlp(x, layer.ff_w1, layer.ff_b1, layer.ff_w2, layer.ff_b2)
        x = _layer_norm(x + ff, layer.ln2_scale, layer.ln2_bias)
    return x


def compute_norm_stats(dataset, n_channels):
    """Per-channel mean/std of observation values over a training split."""
    sums = np.zeros(n_channels)
    sq = np.zeros(n_channels)
    counts = np.zeros(n_channels)
    for inst in dataset:
        for ob in inst.observations:
            sums[ob.c] += ob.o
            sq[ob.c] += ob.o * ob.o
            counts[ob.c] += 1
    mean = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    var = np.where(counts > 0, sq / np.maximum(counts, 1) - mean * mean, 1.0)
    std = np.sqrt(np.maximum(var, 1e-12))
    return mean, np.maximum(std, 1e-6)
