"""Weight-space arithmetic: 1D interpolation, delta directions and the 2D
plane they span, direction diagnostics, and encoder-analogy arithmetic.

All elementwise arithmetic accumulates in float64 and stores float32.
Endpoint coefficients (alpha 0/1, the plane origin) return the stored
tensors bit-exactly rather than recomputing them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DegenerateDirectionError, MissingTensorError, ShapeMismatchError
from .tensor_store import ALL, ParameterSet, SubsetFilter, validate_compatibility


class Delta:
    """Named direction in parameter space: theta_a - theta_ref per tensor.

    Same naming schema as ParameterSet; values are float32, read-only.
    """

    __slots__ = ("_tensors",)

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        store: dict[str, np.ndarray] = {}
        for name in sorted(tensors):
            arr = np.asarray(tensors[name])
            if not (arr.dtype == np.float32 and arr.flags.c_contiguous and not arr.flags.writeable):
                arr = np.array(arr, dtype=np.float32, order="C")
                arr.flags.writeable = False
            store[name] = arr
        self._tensors = store

    def names(self) -> list[str]:
        return list(self._tensors)

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def items(self):
        return self._tensors.items()

    def __repr__(self):
        return f"Delta({len(self)} tensors)"


@dataclass(frozen=True)
class DirectionDiagnostics:
    """Global L2 norms, their ratio, and the angle between two deltas."""

    norm_a: float
    norm_b: float
    norm_ratio: float
    angle_deg: float


def _check_names_shapes(a, b) -> None:
    names_a, names_b = set(a.names()), set(b.names())
    if names_a != names_b:
        raise MissingTensorError(sorted(names_a - names_b), sorted(names_b - names_a))
    for name in a.names():
        if a[name].shape != b[name].shape:
            raise ShapeMismatchError(name, a[name].shape, b[name].shape)


def _require_finite(**coeffs: float) -> None:
    for label, c in coeffs.items():
        if not math.isfinite(c):
            raise ValueError(f"{label} must be finite, got {c!r}")


def lerp_pair(
    theta0: ParameterSet,
    theta1: ParameterSet,
    alpha: float,
    filt: SubsetFilter = ALL,
) -> ParameterSet:
    """alpha * theta1 + (1 - alpha) * theta0 on filtered tensors.

    Unselected tensors are copied from theta0 (theta0 supplies the frozen
    part). alpha outside [0, 1] extrapolates. alpha 0 and 1 reproduce the
    endpoints bit-exactly.
    """
    validate_compatibility(theta0, theta1)
    alpha = float(alpha)
    _require_finite(alpha=alpha)
    out: dict[str, np.ndarray] = {}
    for name in theta0.names():
        if not filt.matches(name):
            out[name] = theta0[name]
        elif alpha == 0.0:
            out[name] = theta0[name]
        elif alpha == 1.0:
            out[name] = theta1[name]
        else:
            a64 = theta0[name].astype(np.float64)
            b64 = theta1[name].astype(np.float64)
            out[name] = (alpha * b64 + (1.0 - alpha) * a64).astype(np.float32)
    meta = {
        "alpha": repr(alpha),
        "endpoint0": theta0.content_digest(),
        "endpoint1": theta1.content_digest(),
        "subset": filt.mode,
    }
    return ParameterSet(out, meta)


def compute_delta(
    theta_a: ParameterSet,
    theta_ref: ParameterSet,
    filt: SubsetFilter = ALL,
    normalize: bool = False,
) -> Delta:
    """theta_a - theta_ref on filtered tensors; unselected tensors become zeros.

    With normalize=True the whole delta is divided by its global L2 norm
    (off by default; the directions this toolkit compares have similar norms).
    """
    validate_compatibility(theta_a, theta_ref)
    out: dict[str, np.ndarray] = {}
    for name in theta_a.names():
        if filt.matches(name):
            d = theta_a[name].astype(np.float64) - theta_ref[name].astype(np.float64)
        else:
            d = np.zeros(theta_a[name].shape, dtype=np.float64)
        out[name] = d
    if normalize:
        sq = sum(float(np.dot(d.ravel(), d.ravel())) for d in out.values())
        norm = math.sqrt(sq)
        if norm == 0.0:
            raise DegenerateDirectionError("cannot normalize a zero delta")
        out = {name: d / norm for name, d in out.items()}
    return Delta({name: d.astype(np.float32) for name, d in out.items()})


def plane_point(
    theta_ref: ParameterSet,
    d_src: Delta,
    d_tgt: Delta,
    alpha1: float,
    alpha2: float,
) -> ParameterSet:
    """theta_ref + alpha1 * d_src + alpha2 * d_tgt; (0, 0) is theta_ref bit-exactly."""
    _check_names_shapes(theta_ref, d_src)
    _check_names_shapes(theta_ref, d_tgt)
    alpha1, alpha2 = float(alpha1), float(alpha2)
    _require_finite(alpha1=alpha1, alpha2=alpha2)
    out: dict[str, np.ndarray] = {}
    for name in theta_ref.names():
        if alpha1 == 0.0 and alpha2 == 0.0:
            out[name] = theta_ref[name]
        else:
            acc = theta_ref[name].astype(np.float64)
            acc = acc + alpha1 * d_src[name].astype(np.float64)
            acc = acc + alpha2 * d_tgt[name].astype(np.float64)
            out[name] = acc.astype(np.float32)
    meta = {
        "alpha1": repr(alpha1),
        "alpha2": repr(alpha2),
        "reference": theta_ref.content_digest(),
    }
    return ParameterSet(out, meta)


def direction_diagnostics(
    d_src: Delta,
    d_tgt: Delta,
    filt: SubsetFilter = ALL,
) -> DirectionDiagnostics:
    """Global norms, norm ratio and angle (degrees) between two deltas.

    Accumulates in float64. Raises DegenerateDirectionError if either delta
    is empty or zero under the filter.
    """
    _check_names_shapes(d_src, d_tgt)
    a_parts = [d_src[n].reshape(-1).astype(np.float64) for n in d_src.names() if filt.matches(n)]
    b_parts = [d_tgt[n].reshape(-1).astype(np.float64) for n in d_tgt.names() if filt.matches(n)]
    if not a_parts or sum(p.size for p in a_parts) == 0:
        raise DegenerateDirectionError(f"no tensors selected by filter {filt.mode!r}")
    a = np.concatenate(a_parts)
    b = np.concatenate(b_parts)
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateDirectionError("zero-norm delta, angle undefined")
    cos = float(np.dot(a, b)) / (norm_a * norm_b)
    cos = min(1.0, max(-1.0, cos))
    return DirectionDiagnostics(
        norm_a=norm_a,
        norm_b=norm_b,
        norm_ratio=norm_a / norm_b,
        angle_deg=math.degrees(math.acos(cos)),
    )


def model_analogy(
    theta_c: ParameterSet,
    theta_b: ParameterSet,
    theta_a: ParameterSet,
) -> ParameterSet:
    """Encoder arithmetic C + (B - A); every non-encoder tensor is reused from C.

    theta_b == theta_a returns theta_c unchanged (bit-exact, meta included).
    """
    validate_compatibility(theta_c, theta_b)
    validate_compatibility(theta_c, theta_a)
    if theta_b.same_tensors(theta_a):
        return theta_c
    out: dict[str, np.ndarray] = {}
    for name in theta_c.names():
        if name.startswith("encoder."):
            shift = theta_b[name].astype(np.float64) - theta_a[name].astype(np.float64)
            out[name] = (theta_c[name].astype(np.float64) + shift).astype(np.float32)
        else:
            out[name] = theta_c[name]
    return ParameterSet(out, theta_c.meta)
