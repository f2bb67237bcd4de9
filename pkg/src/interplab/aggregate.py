"""Normalization by the matching bilingual reference, aggregation over seeds
(and pairs/tasks), per-coordinate variance profiles, and surface flatness.

Normalization is per seed: each record is divided by the bilingual-model
record of the same (pair, task, seed, eval_side) group. On the 1D path the
reference sits at alpha = 1; on the 2D plane at (0, 0). Confidence intervals
use a two-sided Student-t over the sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import (
    DegenerateReferenceError,
    EmptyGroupError,
    IncompleteGridError,
    InsufficientSeedsError,
    MissingReferenceError,
)
from .grid import EvaluationRecord

SCOPES = ("pooled", "per_pair", "per_task")


@dataclass(frozen=True)
class AggregateRecord:
    """Normalized mean / variance / CI half-width at one grid coordinate."""

    kind: str
    alpha1: float
    alpha2: float | None
    eval_side: str
    group: str  # "pooled", "pair=a-b" or "task=t"
    n: int
    mean_norm: float
    var_norm: float
    ci95_half_width: float


@dataclass(frozen=True)
class VariancePoint:
    """Per-coordinate sample variance of normalized values, split by side."""

    alpha1: float
    alpha2: float | None
    var_source: float
    var_target: float


def _is_reference(r: EvaluationRecord) -> bool:
    if r.kind == "one_d":
        return r.alpha1 == 1.0
    return r.alpha1 == 0.0 and r.alpha2 == 0.0


def normalize_by_reference(records: Sequence[EvaluationRecord]) -> list[EvaluationRecord]:
    """Divide every value by its group's bilingual reference value.

    Groups are (kind, pair, task, seed, eval_side). Reference records map to
    exactly 1.0. Order of the input is preserved.
    """
    refs: dict[tuple, float] = {}
    for r in records:
        if _is_reference(r):
            refs[(r.kind, r.pair, r.task, r.seed, r.eval_side)] = r.value
    out: list[EvaluationRecord] = []
    for r in records:
        key = (r.kind, r.pair, r.task, r.seed, r.eval_side)
        if key not in refs:
            raise MissingReferenceError(
                f"no bilingual reference record for kind={r.kind} pair={r.pair} "
                f"task={r.task} seed={r.seed} side={r.eval_side}"
            )
        ref = refs[key]
        if ref <= 0.0:
            raise DegenerateReferenceError(
                f"reference value {ref!r} for pair={r.pair} seed={r.seed} "
                f"side={r.eval_side} is not positive"
            )
        out.append(r.with_normalized(r.value / ref))
    return out


def _group_tag(r: EvaluationRecord, scope: str) -> str:
    if scope == "per_pair":
        return f"pair={r.pair[0]}-{r.pair[1]}"
    if scope == "per_task":
        return f"task={r.task}"
    return "pooled"


def _mean_var_ci(values: list[float]) -> tuple[int, float, float, float]:
    # Fixed sort order before accumulation keeps the reduction
    # permutation-invariant at the bit level.
    vals = np.array(sorted(values), dtype=np.float64)
    n = len(vals)
    mean = float(vals.mean())
    if n == 1:
        return 1, mean, 0.0, 0.0
    var = float(vals.var(ddof=1))
    half = float(stats.t.ppf(0.975, n - 1)) * math.sqrt(var / n)
    return n, mean, var, half


def aggregate_records(
    records: Sequence[EvaluationRecord],
    scope: str = "pooled",
) -> list[AggregateRecord]:
    """Mean, unbiased variance and t-based 95% CI per (coordinate, side, group).

    Every record must already carry a normalized value; each record counts as
    one sample, so the pooled scope mixes seeds, pairs and tasks.
    """
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    if len(records) == 0:
        raise EmptyGroupError("no records to aggregate")
    groups: dict[tuple, list[float]] = {}
    for r in records:
        if r.normalized is None:
            raise ValueError(
                "records must be normalized before aggregation "
                f"(missing at alpha1={r.alpha1!r}, seed={r.seed})"
            )
        key = (r.kind, r.alpha1, r.alpha2, r.eval_side, _group_tag(r, scope))
        groups.setdefault(key, []).append(r.normalized)
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2] if k[2] is not None else 0.0, k[3], k[4])):
        kind, alpha1, alpha2, side, tag = key
        n, mean, var, half = _mean_var_ci(groups[key])
        out.append(
            AggregateRecord(
                kind=kind, alpha1=alpha1, alpha2=alpha2, eval_side=side, group=tag,
                n=n, mean_norm=mean, var_norm=var, ci95_half_width=half,
            )
        )
    return out


def variance_profile(records: Sequence[EvaluationRecord]) -> list[VariancePoint]:
    """Sample variance of normalized values per coordinate, per eval side.

    Needs at least two samples on each side of every coordinate.
    """
    groups: dict[tuple, dict[str, list[float]]] = {}
    for r in records:
        if r.normalized is None:
            raise ValueError("records must be normalized before a variance profile")
        coord = (r.kind, r.alpha1, r.alpha2)
        groups.setdefault(coord, {"source": [], "target": []})[r.eval_side].append(r.normalized)
    out = []
    for coord in sorted(groups, key=lambda c: (c[0], c[1], c[2] if c[2] is not None else 0.0)):
        sides = groups[coord]
        for side in ("source", "target"):
            if len(sides[side]) < 2:
                raise InsufficientSeedsError(
                    f"coordinate {coord[1:]} has {len(sides[side])} {side} sample(s), need >= 2"
                )
        var_s = float(np.array(sorted(sides["source"]), dtype=np.float64).var(ddof=1))
        var_t = float(np.array(sorted(sides["target"]), dtype=np.float64).var(ddof=1))
        out.append(VariancePoint(alpha1=coord[1], alpha2=coord[2], var_source=var_s, var_target=var_t))
    return out


def flatness_score_grid(values) -> float:
    """Mean absolute difference over horizontally and vertically adjacent cells."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"need a 2D value grid, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("grid values must be finite")
    diffs = []
    if m.shape[0] > 1:
        diffs.append(np.abs(np.diff(m, axis=0)).ravel())
    if m.shape[1] > 1:
        diffs.append(np.abs(np.diff(m, axis=1)).ravel())
    if not diffs:
        raise ValueError("grid has no adjacent cell pairs")
    cat = np.concatenate(diffs)
    return float(cat.sum() / cat.size)


def surface_matrix(
    aggregates: Sequence[AggregateRecord],
) -> tuple[list[float], list[float], np.ndarray]:
    """Arrange 2D aggregates into (alpha1 axis, alpha2 axis, mean matrix).

    The matrix is indexed [i, j] = mean_norm at (alpha1s[i], alpha2s[j]).
    Raises IncompleteGridError on missing or duplicated cells, or if the
    records mix sides or groups.
    """
    cells: dict[tuple[float, float], float] = {}
    sides = set()
    groups = set()
    for a in aggregates:
        if a.kind != "two_d" or a.alpha2 is None:
            raise IncompleteGridError("surface requires two_d aggregate records")
        key = (a.alpha1, a.alpha2)
        if key in cells:
            raise IncompleteGridError(f"duplicate cell at {key}")
        cells[key] = a.mean_norm
        sides.add(a.eval_side)
        groups.add(a.group)
    if len(sides) > 1 or len(groups) > 1:
        raise IncompleteGridError(
            f"surface mixes sides {sorted(sides)} / groups {sorted(groups)}; filter first"
        )
    if not cells:
        raise IncompleteGridError("no aggregate records given")
    alpha1s = sorted({k[0] for k in cells})
    alpha2s = sorted({k[1] for k in cells})
    matrix = np.empty((len(alpha1s), len(alpha2s)), dtype=np.float64)
    for i, a1 in enumerate(alpha1s):
        for j, a2 in enumerate(alpha2s):
            if (a1, a2) not in cells:
                raise IncompleteGridError(f"missing cell at ({a1}, {a2})")
            matrix[i, j] = cells[(a1, a2)]
    return alpha1s, alpha2s, matrix


def flatness_score(aggregates: Sequence[AggregateRecord]) -> float:
    """Flatness of a complete rectangular 2D aggregate surface (0 = constant)."""
    _, _, matrix = surface_matrix(aggregates)
    return flatness_score_grid(matrix)
