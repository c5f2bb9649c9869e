"""IMTS data model: observation/query triples, lexicographic query sorting
with a 2x2 criterion matrix, permutation helpers, and JSONL persistence.

A series instance bundles past observations ``(t, c, o)``, future queries
``(t, c)`` and (when known) the answer vector.  Channels are 0-based both on
disk and in memory; all internal math is index-agnostic.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataFormatError, ShapeError, ValidationError


@dataclass(frozen=True)
class Observation:
    t: float
    c: int
    o: float


@dataclass(frozen=True)
class Query:
    t: float
    c: int


@dataclass
class SeriesInstance:
    """One forecasting case: observations, queries and optional answers."""

    series_id: str
    n_channels: int
    observations: list[Observation]
    queries: list[Query]
    answers: Optional[np.ndarray] = None

    @property
    def n_obs(self):
        return len(self.observations)

    @property
    def n_queries(self):
        return len(self.queries)


def validate_instance(inst: SeriesInstance):
    """Check instance invariants; raises ValidationError naming the series."""
    sid = inst.series_id
    if inst.n_queries < 1:
        raise ValidationError(f"series {sid!r}: at least one query required")
    if inst.n_obs < 1:
        raise ValidationError(f"series {sid!r}: at least one observation required")
    triples = {(ob.t, ob.c, ob.o) for ob in inst.observations}
    if len(triples) != inst.n_obs:
        raise ValidationError(f"series {sid!r}: duplicate observation triple")
    pairs = {(q.t, q.c) for q in inst.queries}
    if len(pairs) != inst.n_queries:
        raise ValidationError(f"series {sid!r}: duplicate query pair")
    for ob in inst.observations:
        if not 0 <= ob.c < inst.n_channels:
            raise ValidationError(
                f"series {sid!r}: observation channel {ob.c} outside [0, {inst.n_channels})"
            )
    for q in inst.queries:
        if not 0 <= q.c < inst.n_channels:
            raise ValidationError(
                f"series {sid!r}: query channel {q.c} outside [0, {inst.n_channels})"
            )
    max_obs_t = max(ob.t for ob in inst.observations)
    min_qry_t = min(q.t for q in inst.queries)
    if min_qry_t <= max_obs_t:
        raise ValidationError(
            f"series {sid!r}: earliest query time {min_qry_t} is not beyond "
            f"latest observation time {max_obs_t}"
        )
    if inst.answers is not None and len(inst.answers) != inst.n_queries:
        raise ValidationError(
            f"series {sid!r}: {len(inst.answers)} answers for {inst.n_queries} queries"
        )


# ---------------------------------------------------------------------------
# sorting


@dataclass(frozen=True)
class SortCriterion:
    """2x2 matrix applied to (t, c) rows before the lexicographic argsort.

    The identity sorts by time then channel; swapping the columns sorts by
    channel then time; negating the first column sorts time descending.
    Only linear criteria are supported (channel-relabeling sorts are not).
    """

    matrix: tuple = ((1.0, 0.0), (0.0, 1.0))

    def as_array(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (2, 2):
            raise ShapeError(f"sort criterion must be 2x2, got {m.shape}")
        return m

    @staticmethod
    def time_then_channel():
        return SortCriterion()

    @staticmethod
    def channel_then_time():
        return SortCriterion(((0.0, 1.0), (1.0, 0.0)))


def argsort_queries(queries: Sequence[Query], criterion: SortCriterion = SortCriterion()):
    """Stable lexicographic argsort of transformed (t, c) query rows.

    Returns 0-based positions: ``perm[i]`` is the original index of the
    i-th query in sorted order.  Exact ties keep original order and emit a
    warning (a degenerate criterion can collapse distinct queries).
    """
    rows = np.array([[q.t, q.c] for q in queries], dtype=np.float64)
    transformed = rows @ criterion.as_array()
    if len(queries) > 1:
        uniq = np.unique(transformed, axis=0)
        if uniq.shape[0] != transformed.shape[0]:
            warnings.warn(
                "sort criterion maps distinct queries to equal rows; "
                "falling back to original order for ties",
                stacklevel=2,
            )
    # last lexsort key is the primary one
    return np.lexsort((transformed[:, 1], transformed[:, 0]))


def apply_permutation(values, perm):
    """Reorder a vector or the rows of a matrix by ``perm``."""
    values = np.asarray(values)
    perm = np.asarray(perm)
    if values.shape[0] != perm.shape[0]:
        raise ShapeError(
            f"apply_permutation: length {values.shape[0]} vs permutation {perm.shape[0]}"
        )
    return values[perm]


def invert_permutation(perm):
    perm = np.asarray(perm)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.shape[0])
    return inverse


# ---------------------------------------------------------------------------
# JSONL persistence
#
# One series per line:
#   {"id": str, "C": int, "obs": [[t, c, o], ...], "qry": [[t, c], ...],
#    "ans": [y, ...]}
# "ans" may be omitted at inference time.  Channel indices are 0-based.


def _instance_to_record(inst: SeriesInstance):
    rec = {
        "id": inst.series_id,
        "C": inst.n_channels,
        "obs": [[ob.t, ob.c, ob.o] for ob in inst.observations],
        "qry": [[q.t, q.c] for q in inst.queries],
    }
    if inst.answers is not None:
        rec["ans"] = [float(y) for y in inst.answers]
    return rec


def _record_to_instance(rec, line_no):
    def fail(msg):
        raise DataFormatError(f"line {line_no}: {msg}")

    if not isinstance(rec, dict):
        fail("expected a JSON object")
    for key in ("id", "C", "obs", "qry"):
        if key not in rec:
            fail(f"missing key {key!r}")
    if not isinstance(rec["id"], str):
        fail('"id" must be a string')
    if not isinstance(rec["C"], int) or rec["C"] < 1:
        fail('"C" must be a positive integer')
    obs = []
    for item in rec["obs"]:
        if not (isinstance(item, list) and len(item) == 3):
            fail(f'"obs" entries must be [t, c, o], got {item!r}')
        t, c, o = item
        if not isinstance(c, int):
            fail(f"observation channel must be an integer, got {c!r}")
        obs.append(Observation(float(t), c, float(o)))
    qry = []
    for item in rec["qry"]:
        if not (isinstance(item, list) and len(item) == 2):
            fail(f'"qry" entries must be [t, c], got {item!r}')
        t, c = item
        if not isinstance(c, int):
            fail(f"query channel must be an integer, got {c!r}")
        qry.append(Query(float(t), c))
    answers = None
    if "ans" in rec:
        if not isinstance(rec["ans"], list):
            fail('"ans" must be a list')
        answers = np.array([float(y) for y in rec["ans"]], dtype=np.float64)
    return SeriesInstance(rec["id"], rec["C"], obs, qry, answers)


def save_jsonl(dataset: Sequence[SeriesInstance], path):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in dataset:
            fh.write(json.dumps(_instance_to_record(inst)) + "\n")


def load_jsonl(path):
    """Load and validate a dataset; errors carry the offending line number."""
    dataset = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"line {line_no}: invalid JSON: {exc}") from None
            inst = _record_to_instance(rec, line_no)
            try:
                validate_instance(inst)
            except ValidationError as exc:
                raise DataFormatError(f"line {line_no}: {exc}") from None
            dataset.append(inst)
    return dataset
