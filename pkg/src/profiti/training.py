"""Training loop, evaluation, and the ablation runner.

Batches are lists of instances processed independently (variable query
counts rule out tensor batching); gradients are averaged over the batch and
applied with Adam.  Checkpoint selection follows the best validation njNLL
with early stopping.  All randomness flows from one master seed through
named spawns, so a run is bit-reproducible in single-threaded mode; with a
thread pool the per-instance gradients are still reduced in batch order,
which keeps the update deterministic as well.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import autodiff as ad
from .data import load_jsonl, save_jsonl
from .errors import ConfigError, NumericError, ValidationError
from .metrics import MetricReport, evaluate_metrics
from .model import ModelConfig, ProfitiModel, _config_to_dict, _config_from_dict, build_variant
from .plots import line_plot_svg
from .synthetic import SyntheticConfig, generate

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data_path: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None
    split: tuple = (0.7, 0.1, 0.2)
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    data_seed: Optional[int] = None   # defaults to `seed`
    patience: int = 10
    n_eval_samples: int = 100
    threads: int = 1

    def validate(self):
        if (self.data_path is None) == (self.synthetic is None):
            raise ConfigError("provide exactly one of data_path or synthetic")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {self.split}")
        if any(r < 0 for r in self.split):
            raise ConfigError("split ratios must be nonnegative")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        self.model.validate()
        return self


@dataclass
class RunRecord:
    config: dict
    seed: int
    eval_seed: int
    status: str
    epochs_run: int
    best_epoch: int
    train_njnll: list
    val_njnll: list          # entry 0 is the pre-training value
    epoch_seconds: list
    report: MetricReport
    checkpoint_path: str

    def fingerprint(self):
        """Deterministic content: everything except wall-clock and paths."""
        d = asdict(self)
        d.pop("epoch_seconds")
        d.pop("checkpoint_path")
        return d

    def to_json(self):
        d = asdict(self)
        return json.dumps(d, indent=2)


def apply_env_overrides(config: TrainConfig):
    """PROFITI_SEED and PROFITI_THREADS take precedence over the config."""
    seed = os.environ.get("PROFITI_SEED")
    if seed is not None:
        config.seed = int(seed)
    threads = os.environ.get("PROFITI_THREADS")
    if threads is not None:
        config.threads = int(threads)
    return config


def split_dataset(dataset, ratios, rng):
    order = rng.permutation(len(dataset))
    n_train = int(round(ratios[0] * len(dataset)))
    n_val = int(round(ratios[1] * len(dataset)))
    train = [dataset[i] for i in order[:n_train]]
    val = [dataset[i] for i in order[n_train:n_train + n_val]]
    test = [dataset[i] for i in order[n_train + n_val:]]
    return train, val, test


def _load_dataset(config: TrainConfig):
    if config.data_path is not None:
        return load_jsonl(config.data_path)
    data_seed = config.seed if config.data_seed is None else config.data_seed
    return generate(config.synthetic, seed=data_seed)


def _dataset_channels(dataset):
    channels = {inst.n_channels for inst in dataset}
    if len(channels) != 1:
        raise ValidationError(f"mixed channel counts in dataset: {sorted(channels)}")
    return channels.pop()


def _instance_grads(model, instance, scale):
    loss = model.njnll_graph(instance)
    if not np.isfinite(loss.data):
        raise NumericError(
            f"non-finite loss on series {instance.series_id!r}"
        )
    grads = ad.backward(loss, accumulate=False)
    return float(loss.data), {p: g * scale for p, g in grads.items()}


def _batch_grads(model, batch, pool):
    """Mean loss and mean gradients over a batch of instances."""
    scale = 1.0 / len(batch)
    if pool is None:
        results = [_instance_grads(model, inst, scale) for inst in batch]
    else:
        results = list(pool.map(lambda inst: _instance_grads(model, inst, scale), batch))
    total = {}
    losses = []
    for loss, grads in results:  # fixed reduction order keeps runs bit-identical
        losses.append(loss)
        for p, g in grads.items():
            if p in total:
                total[p] = total[p] + g
            else:
                total[p] = g
    return float(np.mean(losses)), total


def _mean_njnll(model, dataset, pool=None):
    if pool is None:
        values = [model.njnll(inst) for inst in dataset]
    else:
        values = list(pool.map(model.njnll, dataset))
    return float(np.mean(values))


def _snapshot(model):
    return [t.data.copy() for _, t in model.named_parameters()]


def _restore(model, snapshot):
    for (_, t), data in zip(model.named_parameters(), snapshot):
        t.data = data.copy()


def train(config: TrainConfig, out_dir) -> RunRecord:
    """Fit on njNLL, select by validation njNLL, evaluate on the test split."""
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    master = np.random.SeedSequence(config.seed)
    split_seed, model_seed, eval_seed = (s.generate_state(1)[0] for s in master.spawn(3))

    dataset = _load_dataset(config)
    if not dataset:
        raise ValidationError("dataset is empty")
    n_channels = _dataset_channels(dataset)
    train_set, val_set, test_set = split_dataset(
        dataset, config.split, np.random.default_rng(split_seed)
    )
    if not train_set or not val_set or not test_set:
        raise ConfigError(
            f"split {config.split} leaves an empty part for {len(dataset)} instances"
        )

    model = ProfitiModel.build(config.model, n_channels, seed=model_seed)
    model.fit_normalization(train_set)

    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    state = ad.AdamState()
    shuffle_rng = np.random.default_rng(split_seed + 1)
    params = model.parameters()

    initial_val = _mean_njnll(model, val_set, pool)
    val_curve = [initial_val]
    train_curve = []
    epoch_seconds = []
    best_val = initial_val
    best_epoch = 0
    best_params = _snapshot(model)
    status = "ok"
    stale = 0
    diverged_streak = 0
    divergence_bar = initial_val + 10.0 * abs(initial_val)

    epochs_run = 0
    try:
        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = shuffle_rng.permutation(len(train_set))
            epoch_losses = []
            for start in range(0, len(order), config.batch_size):
                batch = [train_set[i] for i in order[start:start + config.batch_size]]
                loss, grads = _batch_grads(model, batch, pool)
                epoch_losses.append(loss)
                ad.adam_step(params, grads, state, lr=config.lr)
            epochs_run = epoch
            train_curve.append(float(np.mean(epoch_losses)))
            val = _mean_njnll(model, val_set, pool)
            val_curve.append(val)
            epoch_seconds.append(time.perf_counter() - started)
            logger.info("epoch %d: train %.4f val %.4f (%.1fs)",
                        epoch, train_curve[-1], val, epoch_seconds[-1])
            if val < best_val:
                best_val = val
                best_epoch = epoch
                best_params = _snapshot(model)
                stale = 0
            else:
                stale += 1
            diverged_streak = diverged_streak + 1 if val > divergence_bar else 0
            if diverged_streak >= 5:
                status = "aborted_divergence"
                logger.warning("validation njNLL diverged for 5 epochs; stopping")
                break
            if stale >= config.patience:
                status = "early_stopped"
                break
    finally:
        if pool is not None:
            pool.shutdown()

    _restore(model, best_params)
    checkpoint_path = os.path.join(out_dir, "checkpoint")
    model.save(checkpoint_path)
    save_jsonl(train_set, os.path.join(out_dir, "train_split.jsonl"))
    save_jsonl(val_set, os.path.join(out_dir, "val_split.jsonl"))
    save_jsonl(test_set, os.path.join(out_dir, "test_split.jsonl"))
    report = evaluate_metrics(test_set, model, n_samples=config.n_eval_samples,
                              seed=int(eval_seed))
    record = RunRecord(
        config=_train_config_to_dict(config),
        seed=config.seed,
        eval_seed=int(eval_seed),
        status=status,
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        train_njnll=train_curve,
        val_njnll=val_curve,
        epoch_seconds=epoch_seconds,
        report=report,
        checkpoint_path=checkpoint_path,
    )
    _write_run_outputs(record, out_dir)
    return record


def _write_run_outputs(record: RunRecord, out_dir):
    with open(os.path.join(out_dir, "run_record.json"), "w") as fh:
        fh.write(record.to_json())
    curve_path = os.path.join(out_dir, "loss_curve.csv")
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_njnll", "val_njnll"])
        writer.writerow([0, "", repr(record.val_njnll[0])])
        for i, train_value in enumerate(record.train_njnll, start=1):
            writer.writerow([i, repr(train_value), repr(record.val_njnll[i])])
    if record.train_njnll:
        epochs = np.arange(1, len(record.train_njnll) + 1)
        line_plot_svg(
            {"train": (epochs, record.train_njnll),
             "validation": (np.arange(len(record.val_njnll)), record.val_njnll)},
            os.path.join(out_dir, "loss_curve.svg"),
            title="njNLL per epoch", x_label="epoch", y_label="njNLL",
        )


def evaluate(checkpoint_path, dataset, n_samples=100, seed=0) -> MetricReport:
    if not dataset:
        raise ValidationError("empty dataset")
    model = ProfitiModel.load(checkpoint_path)
    return evaluate_metrics(dataset, model, n_samples=n_samples, seed=seed)


ABLATION_VARIANTS = (
    ("full", {}),
    ("no_sita", {"use_sita": False}),
    ("no_shiesh", {"use_shiesh": False}),
    ("no_sita_no_shiesh", {"use_sita": False, "use_shiesh": False}),
    ("attn_reg", {"attn_kind": "reg"}),
    ("attn_itrans", {"attn_kind": "itrans"}),
)


def run_ablation(config: TrainConfig, out_dir):
    """Train every variant on identical data/seed and tabulate test njNLL."""
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    table = {}
    for name, flags in ABLATION_VARIANTS:
        variant_config = _train_config_from_dict(_train_config_to_dict(config))
        variant_config.model = build_variant(config.model, **{
            "use_sita": flags.get("use_sita", True),
            "use_shiesh": flags.get("use_shiesh", True),
            "attn_kind": flags.get("attn_kind"),
        })
        started = time.perf_counter()
        record = train(variant_config, os.path.join(out_dir, name))
        table[name] = {
            "test_njnll": record.report.njnll,
            "test_mnll": record.report.mnll,
            "status": record.status,
            "epochs_run": record.epochs_run,
            "seconds": time.perf_counter() - started,
        }
        logger.info("ablation %s: test njNLL %.4f", name, record.report.njnll)
    with open(os.path.join(out_dir, "ablation.json"), "w") as fh:
        json.dump(table, fh, indent=2)
    return table


# ---------------------------------------------------------------------------
# config (de)serialization


def _train_config_to_dict(config: TrainConfig):
    d = asdict(config)
    d["model"] = _config_to_dict(config.model)
    d["split"] = list(config.split)
    if config.synthetic is not None:
        d["synthetic"] = asdict(config.synthetic)
    return d


def _train_config_from_dict(d):
    """Build a TrainConfig from a (possibly partial) plain dict."""
    d = dict(d)
    if "model" in d:
        d["model"] = _config_from_dict(d["model"])
    if "split" in d:
        d["split"] = tuple(d["split"])
    if d.get("synthetic") is not None:
        d["synthetic"] = SyntheticConfig(**d["synthetic"])
    return TrainConfig(**d)


def load_train_config(path) -> TrainConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    try:
        return _train_config_from_dict(raw).validate()
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
