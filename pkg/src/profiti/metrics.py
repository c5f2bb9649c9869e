"""Evaluation metrics for probabilistic forecasts.

* njNLL: mean over instances of the joint negative log density divided by
  that instance's query count.
* mNLL: sum of per-query marginal negative log densities over the total
  query count (query-weighted, so it differs from njNLL whenever query
  counts vary; both are reported as defined).
* CRPS: per query, the V-statistic estimator over model samples,
      mean|X - y| - 0.5 * mean|X - X'|,
  with the second mean taken over all ordered sample pairs.
* MSE: squared error of the robust sample mean, where samples outside the
  Tukey fences [Q1 - 1.5 IQR, Q3 + 1.5 IQR] (linear-interpolation
  quantiles) are dropped first; if everything is fenced out the plain mean
  is used and the event logged.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    njnll: float
    mnll: float
    crps: float
    mse: float
    n_instances: int
    n_queries: int

    def to_dict(self):
        return asdict(self)

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def to_text(self):
        rows = [("njNLL", self.njnll), ("mNLL", self.mnll),
                ("CRPS", self.crps), ("MSE", self.mse)]
        width = max(len(name) for name, _ in rows)
        lines = [f"instances: {self.n_instances}   queries: {self.n_queries}"]
        lines += [f"{name:<{width}}  {value: .6f}" for name, value in rows]
        return "\n".join(lines)


def aggregate_reports(reports):
    """Mean and standard deviation across folds for each metric."""
    if not reports:
        raise ValidationError("no reports to aggregate")
    out = {}
    for key in ("njnll", "mnll", "crps", "mse"):
        values = np.array([getattr(r, key) for r in reports])
        out[key] = {"mean": float(values.mean()), "std": float(values.std())}
    return out


def _require_answers(dataset):
    if not dataset:
        raise ValidationError("empty dataset")
    for inst in dataset:
        if inst.answers is None:
            raise ValidationError(f"series {inst.series_id!r} carries no answers")


def njnll(dataset, model):
    _require_answers(dataset)
    return float(np.mean([model.njnll(inst) for inst in dataset]))


def mnll(dataset, model):
    _require_answers(dataset)
    total = 0.0
    count = 0
    for inst in dataset:
        total -= float(np.sum(model.marginal_log_densities(inst)))
        count += inst.n_queries
    return total / count


def crps_from_samples(samples, observed):
    """V-statistic CRPS for one query from a 1-D sample vector.

    The pairwise term mean|X - X'| over all ordered pairs is computed from
    the sorted-sample gaps in O(n log n): the gap between order statistics
    k and k+1 is crossed by (k+1)(n-1-k) unordered pairs.
    """
    samples = np.sort(np.asarray(samples, dtype=np.float64))
    n = samples.size
    term_obs = np.mean(np.abs(samples - observed))
    k = np.arange(n - 1)
    crossings = (k + 1.0) * (n - 1.0 - k)
    pair_mean = 2.0 * np.dot(np.diff(samples), crossings) / (n * n)
    return float(term_obs - 0.5 * pair_mean)


def crps(dataset, model, n_samples=100, rng=None):
    _require_answers(dataset)
    if n_samples < 2:
        raise ValidationError("crps: n_samples must be at least 2")
    rng = rng or np.random.default_rng(0)
    values = []
    for inst in dataset:
        samples = model.sample(inst, n_samples, rng)
        for k in range(inst.n_queries):
            values.append(crps_from_samples(samples[:, k], inst.answers[k]))
    return float(np.mean(values))


def robust_mean(samples):
    """Mean after dropping samples outside the Tukey fences."""
    samples = np.asarray(samples, dtype=np.float64)
    q1, q3 = np.quantile(samples, [0.25, 0.75])  # linear interpolation
    iqr = q3 - q1
    kept = samples[(samples >= q1 - 1.5 * iqr) & (samples <= q3 + 1.5 * iqr)]
    if kept.size == 0:
        logger.warning("robust_mean: all %d samples fenced out; using plain mean",
                       samples.size)
        return float(samples.mean())
    return float(kept.mean())


def mse_robust(dataset, model, n_samples=100, rng=None):
    _require_answers(dataset)
    if n_samples < 4:
        raise ValidationError("mse_robust: n_samples must be at least 4")
    rng = rng or np.random.default_rng(0)
    errors = []
    for inst in dataset:
        samples = model.sample(inst, n_samples, rng)
        for k in range(inst.n_queries):
            errors.append((robust_mean(samples[:, k]) - inst.answers[k]) ** 2)
    return float(np.mean(errors))


def evaluate_metrics(dataset, model, n_samples=100, seed=0):
    """Full report over a dataset; deterministic given the seed."""
    _require_answers(dataset)
    return MetricReport(
        njnll=njnll(dataset, model),
        mnll=mnll(dataset, model),
        crps=crps(dataset, model, n_samples, np.random.default_rng(seed)),
        mse=mse_robust(dataset, model, n_samples, np.random.default_rng(seed + 1)),
        n_instances=len(dataset),
        n_queries=int(sum(inst.n_queries for inst in dataset)),
    )


def write_per_query_csv(dataset, model, path, n_samples=100, seed=0):
    """Optional per-query dump for plotting."""
    rng = np.random.default_rng(seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series_id", "t", "channel", "answer",
                         "marginal_nll", "crps", "robust_mean"])
        for inst in dataset:
            samples = model.sample(inst, n_samples, rng)
            marginals = model.marginal_log_densities(inst)
            for k, q in enumerate(inst.queries):
                writer.writerow([
                    inst.series_id, repr(q.t), q.c, repr(float(inst.answers[k])),
                    repr(-float(marginals[k])),
                    repr(crps_from_samples(samples[:, k], inst.answers[k])),
                    repr(robust_mean(samples[:, k])),
                ])
