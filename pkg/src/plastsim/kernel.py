"""Gaussian attraction kernel: direct evaluation and truncated expansions.

The field of a weighted source set is u(t) = sum_j w_j * exp(-|t-s_j|^2/delta)
with delta = sigma^2.  Two truncated series approximate it per box pair:

* source-centered (Hermite): u(t) ~= sum_a A_a * h(a, (t-sC)/sqrt(delta)),
  A_a = (1/a!) * sum_j w_j * ((s_j-sC)/sqrt(delta))^a
* target-centered (Taylor): u(t) ~= sum_b B_b * ((t-tC)/sqrt(delta))^b,
  B_b = ((-1)^|b|/b!) * sum_j w_j * h(b, (tC-s_j)/sqrt(delta))

where a, b are multi-indices bounded by a fixed cutoff and h is the product
of one-dimensional Hermite functions h_n(x) = (-1)^n d^n/dx^n exp(-x^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

MultiIndex = tuple[int, int, int]

DEFAULT_CUTOFF: MultiIndex = (3, 3, 3)


def multi_index_abs(alpha: MultiIndex) -> int:
    return alpha[0] + alpha[1] + alpha[2]


def multi_index_factorial(alpha: MultiIndex) -> int:
    return math.factorial(alpha[0]) * math.factorial(alpha[1]) * math.factorial(alpha[2])


def multi_index_power(t, alpha: MultiIndex) -> float:
    x, y, z = t
    return x ** alpha[0] * y ** alpha[1] * z ** alpha[2]


def multi_index_ops(alpha: MultiIndex, t) -> tuple[int, int, float]:
    """(|alpha|, alpha!, t^alpha) in one call."""
    return multi_index_abs(alpha), multi_index_factorial(alpha), multi_index_power(t, alpha)


def hermite_values(order: int, x: np.ndarray) -> np.ndarray:
    """Table of h_0..h_order at each point of x, shape (order+1,) + x.shape.

    Three-term recurrence: h_{n+1}(x) = 2x*h_n(x) - 2n*h_{n-1}(x) with
    h_0(x) = exp(-x^2) and h_1(x) = 2x*exp(-x^2).
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((order + 1,) + x.shape)
    out[0] = np.exp(-x * x)
    if order >= 1:
        out[1] = 2.0 * x * out[0]
    for n in range(1, order):
        out[n + 1] = 2.0 * x * out[n] - 2.0 * n * out[n - 1]
    return out


def hermite_h(alpha: MultiIndex, t) -> float:
    """h(alpha, t) = product over dimensions of h_{alpha_i}(t_i)."""
    result = 1.0
    for n, coord in zip(alpha, t):
        result *= float(hermite_values(n, np.asarray(coord))[n])
    return result


@dataclass(frozen=True)
class KernelParams:
    """Kernel width, series cutoff, and the exponent-denominator convention.

    The attraction exponent divides by delta = sigma^2 by default; the
    "sigma" convention (divide by sigma itself) is selectable for
    sensitivity checks.
    """

    sigma: float = 750.0
    cutoff: MultiIndex = DEFAULT_CUTOFF
    exponent: Literal["sigma_squared", "sigma"] = "sigma_squared"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if any(c < 0 for c in self.cutoff):
            raise ValueError("cutoff components must be non-negative")
        if self.exponent not in ("sigma_squared", "sigma"):
            raise ValueError(f"unknown exponent convention: {self.exponent!r}")

    @property
    def delta(self) -> float:
        return self.sigma * self.sigma if self.exponent == "sigma_squared" else self.sigma


@dataclass
class PointSet:
    """Weighted source points; weights are vacant-element counts."""

    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.positions) != len(self.weights):
            raise ValueError("positions and weights must have equal length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")

    def __len__(self) -> int:
        return len(self.weights)

    def centroid(self) -> np.ndarray:
        total = self.weights.sum()
        if total == 0:
            raise ValueError("centroid undefined for zero total weight")
        return (self.weights[:, None] * self.positions).sum(axis=0) / total


@dataclass
class ExpansionCoefficients:
    """Dense coefficient block over the cutoff cuboid for one box."""

    kind: Literal["hermite", "taylor"]
    center: np.ndarray
    cutoff: MultiIndex
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        expected = tuple(c + 1 for c in self.cutoff)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.center)):
            raise ValueError("center must be finite")


def direct_field(sources: PointSet, targets: np.ndarray, params: KernelParams) -> np.ndarray:
    """Exact field sum over all (target, source) pairs; O(M*N)."""
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    diff = targets[:, None, :] - sources.positions[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    return np.exp(-d2 / params.delta) @ sources.weights


def _factorial_block(cutoff: MultiIndex) -> np.ndarray:
    fa = [np.array([math.factorial(k) for k in range(c + 1)], dtype=np.float64)
          for c in cutoff]
    return fa[0][:, None, None] * fa[1][None, :, None] * fa[2][None, None, :]


def _power_tables(offsets: np.ndarray, cutoff: MultiIndex) -> list[np.ndarray]:
    return [np.power(offsets[:, i][:, None], np.arange(cutoff[i] + 1)[None, :])
            for i in range(3)]


def hermite_expand(sources: PointSet, s_c: np.ndarray, params: KernelParams) -> ExpansionCoefficients:
    """Source-centered coefficients A over the cutoff cuboid; O(k*M)."""
    if len(sources) == 0:
        raise ValueError("cannot expand an empty source set")
    cutoff = params.cutoff
    s_c = np.asarray(s_c, dtype=np.float64)
    scaled = (sources.positions - s_c) / math.sqrt(params.delta)
    p0, p1, p2 = _power_tables(scaled, cutoff)
    values = np.einsum("ja,jb,jc,j->abc", p0, p1, p2, sources.weights)
    values /= _factorial_block(cutoff)
    return ExpansionCoefficients("hermite", s_c, cutoff, values)


def hermite_evaluate(coeffs: ExpansionCoefficients, targets: np.ndarray,
                     params: KernelParams) -> np.ndarray:
    """Truncated Hermite-series field at each target; O(k*N)."""
    if coeffs.kind != "hermite":
        raise ValueError("expected hermite coefficients")
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    scaled = (targets - coeffs.center) / math.sqrt(params.delta)
    tables = [hermite_values(coeffs.cutoff[i], scaled[:, i]) for i in range(3)]
    return np.einsum("abc,ai,bi,ci->i", coeffs.values, *tables)


def taylor_expand(sources: PointSet, t_c: np.ndarray, params: KernelParams) -> ExpansionCoefficients:
    """Target-centered coefficients B over the cutoff cuboid; O(k*M)."""
    if len(sources) == 0:
        raise ValueError("cannot expand an empty source set")
    cutoff = params.cutoff
    t_c = np.asarray(t_c, dtype=np.float64)
    scaled = (t_c - sources.positions) / math.sqrt(params.delta)
    tables = [hermite_values(cutoff[i], scaled[:, i]) for i in range(3)]
    values = np.einsum("aj,bj,cj,j->abc", *tables, sources.weights)
    signs = np.fromfunction(lambda a, b, c: (-1.0) ** (a + b + c),
                            tuple(c + 1 for c in cutoff))
    values *= signs / _factorial_block(cutoff)
    return ExpansionCoefficients("taylor", t_c, cutoff, values)


def taylor_evaluate(coeffs: ExpansionCoefficients, targets: np.ndarray,
                    params: KernelParams) -> np.ndarray:
    """Truncated polynomial field at each target; O(k*N)."""
    if coeffs.kind != "taylor":
        raise ValueError("expected taylor coefficients")
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    scaled = (targets - coeffs.center) / math.sqrt(params.delta)
    p0, p1, p2 = _power_tables(scaled, coeffs.cutoff)
    return np.einsum("abc,ia,ib,ic->i", coeffs.values, p0, p1, p2)
