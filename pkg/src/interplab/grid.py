"""Mixing-coefficient grids, grid evaluation through a pluggable evaluator,
and a content-addressed result cache.

The default 1D grid is the 21-point base sequence -0.5, -0.4, ..., 1.5 plus
12 extra refinement points near the endpoints (33 points total). The default
2D grid is the 21 x 21 Cartesian product of the base sequence with itself.
Grid values are canonicalized (rounded to 12 decimals) so that 0.0 and 1.0
are exact and records echo coordinates bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .errors import EvaluationError
from .interp import compute_delta, lerp_pair, plane_point
from .tensor_store import ALL, ParameterSet, SubsetFilter, validate_compatibility

# Extra 1D refinement points near alpha 0 and 1.
DEFAULT_EXTRA_POINTS = (
    0.025, 0.05, 0.075, 0.125, 0.15, 0.175,
    0.825, 0.85, 0.875, 0.925, 0.95, 0.975,
)

_DUP_TOL = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Arithmetic base sequence [lo, lo+step, ..., hi] plus optional 1D extras."""

    kind: str = "one_d"  # "one_d" or "two_d"
    base_step: float = 0.1
    lo: float = -0.5
    hi: float = 1.5
    extra_points: tuple[float, ...] = DEFAULT_EXTRA_POINTS

    def __post_init__(self):
        if self.kind not in ("one_d", "two_d"):
            raise ValueError(f"kind must be 'one_d' or 'two_d', got {self.kind!r}")
        if not (self.lo < self.hi):
            raise ValueError(f"lo must be < hi, got {self.lo} >= {self.hi}")
        if not (self.base_step > 0):
            raise ValueError(f"base_step must be positive, got {self.base_step}")
        extras = tuple(sorted(float(x) for x in self.extra_points))
        for x in extras:
            if not (self.lo - _DUP_TOL <= x <= self.hi + _DUP_TOL):
                raise ValueError(f"extra point {x} outside [{self.lo}, {self.hi}]")
        object.__setattr__(self, "extra_points", extras)

    @staticmethod
    def from_dict(d: dict) -> "GridSpec":
        known = {"kind", "base_step", "lo", "hi", "extra_points"}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown grid fields: {sorted(bad)}")
        if "extra_points" in d:
            d = dict(d, extra_points=tuple(d["extra_points"]))
        return GridSpec(**d)


def _base_points(spec: GridSpec) -> list[float]:
    n = math.floor((spec.hi - spec.lo) / spec.base_step + _DUP_TOL) + 1
    return [round(spec.lo + i * spec.base_step, 12) for i in range(n)]


def build_grid_1d(spec: GridSpec = GridSpec()) -> list[float]:
    """Sorted union of the base sequence and the extra points, deduplicated.

    When an extra point falls within 1e-9 of a base point, the base value is
    kept so references (alpha exactly 0.0 / 1.0) stay exact.
    """
    points = _base_points(spec)
    for x in spec.extra_points:
        x = round(float(x), 12)
        if all(abs(x - p) > _DUP_TOL for p in points):
            points.append(x)
    return sorted(points)


def build_grid_2d(spec: GridSpec = GridSpec(kind="two_d")) -> list[tuple[float, float]]:
    """Cartesian product of the base sequence with itself, row-major (alpha1 outer)."""
    base = _base_points(spec)
    return [(a1, a2) for a1 in base for a2 in base]


@dataclass(frozen=True)
class EvaluationRecord:
    """One metric measurement at one grid coordinate."""

    kind: str  # "one_d" or "two_d"
    alpha1: float
    alpha2: float | None
    seed: int
    pair: tuple[str, str]  # (source-language tag, target-language tag)
    task: str
    eval_side: str  # "source" or "target"
    metric: str
    value: float
    normalized: float | None = None

    def __post_init__(self):
        if self.kind not in ("one_d", "two_d"):
            raise ValueError(f"kind must be 'one_d' or 'two_d', got {self.kind!r}")
        if (self.alpha2 is not None) != (self.kind == "two_d"):
            raise ValueError("alpha2 must be present iff kind == 'two_d'")
        if self.eval_side not in ("source", "target"):
            raise ValueError(f"eval_side must be 'source' or 'target', got {self.eval_side!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"metric value must be finite, got {self.value!r}")

    def with_normalized(self, normalized: float) -> "EvaluationRecord":
        return replace(self, normalized=normalized)


@dataclass(frozen=True)
class EvaluatorBinding:
    """Deterministic metric function plus the two dev-set handles it consumes."""

    evaluate: Callable[[ParameterSet, object], float]
    source_dev: object
    target_dev: object
    metric: str = "acc"
    source_id: str = "source-dev"
    target_id: str = "target-dev"


def cache_key(
    endpoint_ids: Sequence[str],
    coefficients: Sequence[float],
    filter_mode: str,
    dataset_id: str,
) -> str:
    """Stable key for one (model point, dataset) evaluation.

    Coefficients are keyed by exact value (repr), so values differing by
    1e-12 get distinct keys.
    """
    text = "|".join(
        ["v1", ",".join(endpoint_ids), ",".join(repr(float(c)) for c in coefficients),
         filter_mode, dataset_id]
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ResultCache:
    """One JSON file per cache key under a directory; corrupt entries are recomputed."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> float | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            doc = json.loads(path.read_text("utf-8"))
            value = doc["value"]
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError("non-finite cached value")
            return float(value)
        except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError):
            warnings.warn(f"corrupt cache entry {path.name}, recomputing", stacklevel=2)
            return None

    def put(self, key: str, value: float) -> None:
        self._path(key).write_text(json.dumps({"key": key, "value": value}), "utf-8")


def _evaluate_point(
    model: ParameterSet,
    binding: EvaluatorBinding,
    endpoint_ids: tuple[str, ...],
    coefficients: tuple[float, ...],
    filter_mode: str,
    cache: ResultCache | None,
) -> dict[str, float]:
    """Evaluate one model on both dev sets, via the cache when one is given."""
    out: dict[str, float] = {}
    for side, dev, dataset_id in (
        ("source", binding.source_dev, binding.source_id),
        ("target", binding.target_dev, binding.target_id),
    ):
        key = cache_key(endpoint_ids, coefficients, filter_mode, dataset_id)
        value = cache.get(key) if cache is not None else None
        if value is None:
            try:
                value = float(binding.evaluate(model, dev))
            except Exception as e:
                coords = ", ".join(repr(c) for c in coefficients)
                raise EvaluationError(f"evaluator failed at ({coords}) on {side}: {e}") from e
            if not math.isfinite(value):
                coords = ", ".join(repr(c) for c in coefficients)
                raise EvaluationError(f"evaluator returned non-finite value at ({coords})")
            if cache is not None:
                cache.put(key, value)
        out[side] = value
    return out


def evaluate_grid_1d(
    theta0: ParameterSet,
    theta1: ParameterSet,
    grid: Sequence[float],
    binding: EvaluatorBinding,
    filt: SubsetFilter = ALL,
    pair: tuple[str, str] = ("src", "tgt"),
    task: str = "task",
    seed: int = 0,
    cache: ResultCache | None = None,
) -> list[EvaluationRecord]:
    """Interpolate theta0 -> theta1 over the grid and evaluate both sides.

    Emits two records per grid point (eval_side source/target), sorted by
    (alpha1, eval_side). Records echo the grid coordinates bit-exactly.
    """
    if len(grid) == 0:
        raise ValueError("grid must be non-empty")
    validate_compatibility(theta0, theta1)
    ids = (theta0.content_digest(), theta1.content_digest())
    records: list[EvaluationRecord] = []
    for alpha in grid:
        alpha = float(alpha)
        model = lerp_pair(theta0, theta1, alpha, filt)
        values = _evaluate_point(model, binding, ids, (alpha,), filt.mode, cache)
        for side in ("source", "target"):
            records.append(
                EvaluationRecord(
                    kind="one_d", alpha1=alpha, alpha2=None, seed=seed, pair=pair,
                    task=task, eval_side=side, metric=binding.metric, value=values[side],
                )
            )
    records.sort(key=lambda r: (r.alpha1, r.eval_side))
    return records


def evaluate_grid_2d(
    theta_bi: ParameterSet,
    theta_src: ParameterSet,
    theta_tgt: ParameterSet,
    grid: Sequence[tuple[float, float]],
    binding: EvaluatorBinding,
    filt: SubsetFilter = ALL,
    pair: tuple[str, str] = ("src", "tgt"),
    task: str = "task",
    seed: int = 0,
    cache: ResultCache | None = None,
) -> list[EvaluationRecord]:
    """Evaluate the plane theta_bi + a1 * (src - bi) + a2 * (tgt - bi) over the grid."""
    if len(grid) == 0:
        raise ValueError("grid must be non-empty")
    validate_compatibility(theta_bi, theta_src)
    validate_compatibility(theta_bi, theta_tgt)
    d_src = compute_delta(theta_src, theta_bi, filt)
    d_tgt = compute_delta(theta_tgt, theta_bi, filt)
    ids = (theta_bi.content_digest(), theta_src.content_digest(), theta_tgt.content_digest())
    records: list[EvaluationRecord] = []
    for alpha1, alpha2 in grid:
        alpha1, alpha2 = float(alpha1), float(alpha2)
        model = plane_point(theta_bi, d_src, d_tgt, alpha1, alpha2)
        values = _evaluate_point(model, binding, ids, (alpha1, alpha2), filt.mode, cache)
        for side in ("source", "target"):
            records.append(
                EvaluationRecord(
                    kind="two_d", alpha1=alpha1, alpha2=alpha2, seed=seed, pair=pair,
                    task=task, eval_side=side, metric=binding.metric, value=values[side],
                )
            )
    records.sort(key=lambda r: (r.alpha1, r.alpha2, r.eval_side))
    return records
