"""The full conditional flow model.

Density evaluation consumes an answer vector y and produces the latent z by
running, per block, the conditioned attention multiply, the elementwise
linear map and the Shiesh activation, accumulating the exact log|det| of
the y -> z transformation.  The joint log density is then

    log p(y | obs, queries) = log N(z; 0, I) + sum of per-layer log|det|s.

Sampling inverts the stack: draw z ~ N(0, I) and run the analytic layer
inverses in reverse order (a triangular solve for the attention step).

For efficiency the whole stack runs in the canonical sorted query order:
queries and answers are sorted once up front and the latent is unsorted at
the end, which is equivalent to sorting inside every attention layer
because all other maps are elementwise.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import autodiff as ad
from .data import (
    SeriesInstance,
    SortCriterion,
    argsort_queries,
    invert_permutation,
)
from .encoder import (
    EncoderConfig,
    compute_norm_stats,
    encode_queries,
    init_encoder_params,
)
from .errors import ConfigError, NumericError, ValidationError
from .layers import (
    ATTENTION_KINDS,
    AttentionParams,
    ELParams,
    attention_matrix,
    el_terms,
    init_attention_params,
    init_el_params,
    solve_attention,
)
from .shiesh import shiesh_inv, shiesh_log_deriv_t, shiesh_t

CHECKPOINT_SCHEMA_VERSION = 1
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    n_blocks: int = 4
    attn_dim: Optional[int] = None      # defaults to the encoder dim
    attn_eps: float = 1e-5
    shiesh_b: float = 1.0
    use_sita: bool = True
    attn_kind: Optional[str] = None     # "tri" | "reg" | "itrans"; None = default
    use_shiesh: bool = True
    sort_matrix: tuple = ((1.0, 0.0), (0.0, 1.0))

    def resolved_attn_kind(self):
        if not self.use_sita:
            if self.attn_kind is not None:
                raise ConfigError(
                    "attn_kind set while use_sita is false; these flags contradict"
                )
            return None
        return self.attn_kind or "tri"

    def validate(self):
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be at least 1")
        if self.attn_eps <= 0:
            raise ConfigError("attn_eps must be positive")
        if self.shiesh_b <= 0:
            raise ConfigError("shiesh_b must be positive")
        kind = self.resolved_attn_kind()
        if kind is not None and kind not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attn_kind {kind!r}")
        return self

    def sort_criterion(self):
        return SortCriterion(tuple(tuple(row) for row in self.sort_matrix))


@dataclass
class BlockParams:
    attention: Optional[AttentionParams]
    el: ELParams

    def tensors(self):
        ts = [] if self.attention is None else self.attention.tensors()
        return ts + self.el.tensors()


@dataclass
class DensityResult:
    log_density: float
    z: np.ndarray                 # latent in original query order
    per_layer_logdets: list


@dataclass
class Prepared:
    """Per-instance condition snapshot: everything the flow needs except y."""

    perm: np.ndarray
    inv_perm: np.ndarray
    shift0: ad.Tensor
    matrices: list      # per block: Tensor (K, K) or None when use_sita is off
    diags: list         # per block: Tensor (K,) or None
    attn_logdets: list  # per block: Tensor scalar or None
    scales: list        # per block: Tensor (K,)
    log_scales: list
    shifts: list


class ProfitiModel:
    def __init__(self, config: ModelConfig, n_channels, encoder_params,
                 init_shift, blocks, norm_stats):
        self.config = config.validate()
        self.n_channels = n_channels
        self.encoder_params = encoder_params
        self.init_shift = init_shift
        self.blocks = blocks
        self.norm_stats = norm_stats

    # ------------------------------------------------------------- build

    @classmethod
    def build(cls, config: ModelConfig, n_channels, seed, norm_stats=None):
        config.validate()
        rng = np.random.default_rng(seed)
        attn_dim = config.attn_dim or config.encoder.dim
        kind = config.resolved_attn_kind()
        encoder_params = init_encoder_params(config.encoder, n_channels, rng)
        init_shift = init_el_params(config.encoder.dim, rng, "flow.init", fixed_scale=True)
        blocks = []
        for i in range(config.n_blocks):
            attention = None
            if config.use_sita:
                attention = init_attention_params(
                    config.encoder.dim, attn_dim, config.attn_eps, kind, rng,
                    f"flow.b{i}.attn",
                )
            blocks.append(BlockParams(attention, init_el_params(
                config.encoder.dim, rng, f"flow.b{i}.el")))
        if norm_stats is None:
            norm_stats = (np.zeros(n_channels), np.ones(n_channels))
        return cls(config, n_channels, encoder_params, init_shift, blocks, norm_stats)

    def fit_normalization(self, dataset):
        self.norm_stats = compute_norm_stats(dataset, self.n_channels)

    def named_parameters(self):
        tensors = (self.encoder_params.tensors() + self.init_shift.tensors()
                   + [t for b in self.blocks for t in b.tensors()])
        return [(t.name, t) for t in tensors]

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    # ----------------------------------------------------------- prepare

    def prepare(self, instance: SeriesInstance) -> Prepared:
        """Encode the instance and build every condition-dependent tensor."""
        if instance.n_queries < 1:
            raise ValidationError("instance has no queries")
        x = encode_queries(instance, self.encoder_params, self.config.encoder,
                           self.norm_stats)
        perm = argsort_queries(instance.queries, self.config.sort_criterion())
        x_sorted = ad.gather_rows(x, perm)
        _, _, shift0 = el_terms(x_sorted, self.init_shift)
        prepared = Prepared(perm, invert_permutation(perm), shift0,
                            [], [], [], [], [], [])
        for block in self.blocks:
            if block.attention is not None:
                m, diag, logdet = attention_matrix(x_sorted, block.attention)
            else:
                m = diag = logdet = None
            scale, log_scale, shift = el_terms(x_sorted, block.el)
            prepared.matrices.append(m)
            prepared.diags.append(diag)
            prepared.attn_logdets.append(logdet)
            prepared.scales.append(scale)
            prepared.log_scales.append(log_scale)
            prepared.shifts.append(shift)
        return prepared

    # ------------------------------------------------------------ density

    def _transform_graph(self, instance, prepared, marginal=False):
        """Run y -> z in sorted space.

        Returns (z_sorted, total_logdet, per_layer_logdets) in joint mode,
        or (z_sorted, per_coordinate_logdet_vector) in marginal mode where
        attention is restricted to its diagonal.
        """
        if instance.answers is None:
            raise ValidationError(f"series {instance.series_id!r} carries no answers")
        if len(instance.answers) != instance.n_queries:
            raise ValidationError("answers/queries length mismatch")
        y_sorted = np.asarray(instance.answers, dtype=np.float64)[prepared.perm]
        v = ad.tensor(y_sorted) + prepared.shift0
        per_layer = []
        coord_logdet = ad.tensor(np.zeros(instance.n_queries))
        b = self.config.shiesh_b
        for i in range(self.config.n_blocks):
            if self.config.use_sita:
                if marginal:
                    diag = prepared.diags[i]
                    v = v * diag
                    coord_logdet = coord_logdet + ad.log(ad.abs_(diag))
                else:
                    v = ad.matmul(prepared.matrices[i], v)
                    per_layer.append(prepared.attn_logdets[i])
            v = v * prepared.scales[i] + prepared.shifts[i]
            if marginal:
                coord_logdet = coord_logdet + prepared.log_scales[i]
            else:
                per_layer.append(ad.sum_(prepared.log_scales[i]))
            if self.config.use_shiesh:
                log_deriv = shiesh_log_deriv_t(v, b)
                if marginal:
                    coord_logdet = coord_logdet + log_deriv
                else:
                    per_layer.append(ad.sum_(log_deriv))
                v = shiesh_t(v, b)
            if not np.all(np.isfinite(v.data)):
                raise NumericError(
                    f"non-finite flow values after block {i} "
                    f"(series {instance.series_id!r})"
                )
        if marginal:
            return v, coord_logdet
        total = per_layer[0] if per_layer else ad.tensor(0.0)
        for term in per_layer[1:]:
            total = total + term
        return v, total, per_layer

    def log_density_graph(self, instance, prepared=None):
        """Joint log density as a scalar graph tensor (for training)."""
        if prepared is None:
            prepared = self.prepare(instance)
        z, logdet, _ = self._transform_graph(instance, prepared)
        k = instance.n_queries
        log_base = ad.sum_(z * z) * -0.5 - 0.5 * k * LOG_2PI
        return log_base + logdet

    def njnll_graph(self, instance, prepared=None):
        """Per-instance loss: negative joint log density over query count."""
        return self.log_density_graph(instance, prepared) * (-1.0 / instance.n_queries)

    def density(self, instance) -> DensityResult:
        prepared = self.prepare(instance)
        z, logdet, per_layer = self._transform_graph(instance, prepared)
        k = instance.n_queries
        log_density = float(-0.5 * np.sum(z.data * z.data) - 0.5 * k * LOG_2PI
                            + logdet.data)
        return DensityResult(
            log_density=log_density,
            z=z.data[prepared.inv_perm].copy(),
            per_layer_logdets=[float(t.data) for t in per_layer],
        )

    def njnll(self, instance) -> float:
        return -self.density(instance).log_density / instance.n_queries

    def marginal_log_densities(self, instance) -> np.ndarray:
        """Per-query log densities with attention restricted to its diagonal
        (the factorized read-out of the flow; for models built without
        attention this equals the joint density's per-coordinate terms)."""
        prepared = self.prepare(instance)
        z, coord_logdet = self._transform_graph(instance, prepared, marginal=True)
        coords = -0.5 * z.data * z.data - 0.5 * LOG_2PI + coord_logdet.data
        return coords[prepared.inv_perm].copy()

    def marginal_nll(self, instance, k) -> float:
        if not 0 <= k < instance.n_queries:
            raise ValidationError(f"query index {k} outside [0, {instance.n_queries})")
        return -float(self.marginal_log_densities(instance)[k])

    # ----------------------------------------------------------- sampling

    def _prepared_arrays(self, prepared: Prepared):
        blocks = []
        for i in range(self.config.n_blocks):
            m = prepared.matrices[i]
            blocks.append((
                None if m is None else m.data,
                prepared.scales[i].data,
                prepared.shifts[i].data,
            ))
        return prepared.shift0.data, blocks

    def sample(self, instance, n, rng) -> np.ndarray:
        """Draw n joint answer samples; rows are samples, columns queries."""
        if n < 1:
            raise ValidationError("sample: n must be at least 1")
        prepared = self.prepare(instance)
        shift0, blocks = self._prepared_arrays(prepared)
        kind = self.config.resolved_attn_kind()
        b = self.config.shiesh_b
        k = instance.n_queries
        out = np.empty((n, k))
        for s in range(n):
            v = rng.standard_normal(k)[prepared.perm]
            for m, scale, shift in reversed(blocks):
                if self.config.use_shiesh:
                    v = shiesh_inv(v, b)
                v = (v - shift) / scale
                if m is not None:
                    v = solve_attention(m, v, kind)
            out[s] = (v - shift0)[prepared.inv_perm]
        return out

    # -------------------------------------------------------- checkpoints

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        named = self.named_parameters()
        manifest = {
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "n_channels": self.n_channels,
            "config": _config_to_dict(self.config),
            "norm_mean": [float(v) for v in self.norm_stats[0]],
            "norm_std": [float(v) for v in self.norm_stats[1]],
            "parameters": [{"name": name, "shape": list(t.data.shape)}
                           for name, t in named],
        }
        with open(os.path.join(directory, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2)
        blob = np.concatenate([t.data.reshape(-1) for _, t in named])
        blob.astype("<f8").tofile(os.path.join(directory, "params.bin"))

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "manifest.json")) as fh:
            manifest = json.load(fh)
        if manifest.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
            raise ConfigError(
                f"checkpoint schema version {manifest.get('schema_version')} "
                f"does not match supported version {CHECKPOINT_SCHEMA_VERSION}"
            )
        config = _config_from_dict(manifest["config"])
        model = cls.build(config, manifest["n_channels"], seed=0)
        model.norm_stats = (np.array(manifest["norm_mean"]),
                            np.array(manifest["norm_std"]))
        blob = np.fromfile(os.path.join(directory, "params.bin"), dtype="<f8")
        named = model.named_parameters()
        expected = [(spec["name"], tuple(spec["shape"])) for spec in manifest["parameters"]]
        actual = [(name, t.data.shape) for name, t in named]
        if expected != actual:
            raise ConfigError("checkpoint parameter layout does not match the config")
        offset = 0
        for _, t in named:
            size = t.data.size
            t.data = blob[offset:offset + size].reshape(t.data.shape).copy()
            offset += size
        if offset != blob.size:
            raise ConfigError(
                f"checkpoint blob holds {blob.size} values, expected {offset}"
            )
        return model


def _config_to_dict(config: ModelConfig):
    d = asdict(config)
    d["sort_matrix"] = [list(row) for row in config.sort_matrix]
    return d


def _config_from_dict(d):
    d = dict(d)
    enc = EncoderConfig(**d.pop("encoder", {}))
    if "sort_matrix" in d:
        d["sort_matrix"] = tuple(tuple(row) for row in d["sort_matrix"])
    return ModelConfig(encoder=enc, **d)


def build_variant(base_config: ModelConfig, use_sita=True, use_shiesh=True,
                  attn_kind=None):
    """Derive an ablation variant config from a base configuration."""
    cfg = _config_from_dict(_config_to_dict(base_config))
    cfg.use_sita = use_sita
    cfg.use_shiesh = use_shiesh
    cfg.attn_kind = attn_kind
    cfg.validate()
    return cfg
