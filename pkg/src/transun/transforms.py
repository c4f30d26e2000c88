"""Bijective target transforms and their inverses.

Each transform maps a nonnegative target into a space where squared-error
regression converges better on skewed data.  The curvature of the inverse
map decides the sign of the retransformation bias (Jensen's inequality):
a convex inverse makes the naive back-transformed mean an underestimate,
a concave inverse an overestimate, an affine inverse is bias-free.

Kind names (``identity``, ``linear``, ``log1p``, ``sqrt``, ``square``,
``arctan``) are the exact strings accepted in harness configs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["TargetTransform", "TransformDomainError", "TRANSFORM_KINDS", "make_transform"]

TRANSFORM_KINDS = ("identity", "linear", "log1p", "sqrt", "square", "arctan")

_ARCTAN_CEIL = math.pi / 2 - 1e-9


class TransformDomainError(ValueError):
    """Input outside the transform's domain or range."""


@dataclass(frozen=True)
class TargetTransform:
    """A bijective map T with its inverse and validity domain.

    ``square`` is restricted to y >= 0 to stay invertible; ``arctan``
    likewise, with outputs in [0, pi/2).  ``linear`` scales by ``slope``
    (nonzero; 0.5 is the conventional choice).
    """

    kind: str
    slope: float = 0.5

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "linear" and self.slope == 0.0:
            raise ValueError("linear transform requires a nonzero slope")

    @property
    def label(self) -> str:
        if self.kind == "linear":
            return f"linear({self.slope:g})"
        return self.kind

    # -- forward map --------------------------------------------------------

    def in_domain(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if self.kind in ("identity", "linear"):
            return np.isfinite(y)
        return np.isfinite(y) & (y >= 0.0)

    def apply(self, y: float) -> float:
        return float(self.apply_array(np.asarray([y], dtype=np.float64))[0])

    def apply_array(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        bad = ~self.in_domain(y)
        if np.any(bad):
            v = y[np.argmax(bad)] if y.ndim else y
            raise TransformDomainError(f"{self.label}: value {v!r} outside transform domain")
        if self.kind == "identity":
            return y + 0.0
        if self.kind == "linear":
            return self.slope * y
        if self.kind == "log1p":
            return np.log1p(y)
        if self.kind == "sqrt":
            return np.sqrt(y)
        if self.kind == "square":
            return y * y
        return np.arctan(y)

    # -- inverse map ---------------------------------------------------------

    def in_range(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if self.kind in ("identity", "linear"):
            return np.isfinite(u)
        if self.kind == "arctan":
            return np.isfinite(u) & (u >= 0.0) & (u < _ARCTAN_CEIL)
        return np.isfinite(u) & (u >= 0.0)

    def invert(self, u: float) -> float:
        return float(self.invert_array(np.asarray([u], dtype=np.float64))[0])

    def invert_array(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        bad = ~self.in_range(u)
        if np.any(bad):
            v = u[np.argmax(bad)] if u.ndim else u
            raise TransformDomainError(f"{self.label}: value {v!r} outside transform range")
        return self._invert_unchecked(u)

    def _invert_unchecked(self, u: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return u + 0.0
        if self.kind == "linear":
            return u / self.slope
        if self.kind == "log1p":
            return np.expm1(u)
        if self.kind == "sqrt":
            return u * u
        if self.kind == "square":
            return np.sqrt(u)
        return np.tan(u)

    def safe_invert_array(self, u: np.ndarray) -> np.ndarray:
        """Inverse with the argument clamped into the transform's range.

        Training can momentarily push the point branch outside the nominal
        range (e.g. a negative value under the square transform before the
        first few steps land); the back-transform used inside bias targets
        and predictions must stay finite there, so out-of-range arguments
        are clamped to the nearest valid value.
        """
        u = np.asarray(u, dtype=np.float64)
        if self.kind in ("identity", "linear", "log1p"):
            return self._invert_unchecked(u)
        if self.kind == "sqrt":
            return u * u
        if self.kind == "square":
            return np.sqrt(np.maximum(u, 0.0))
        return np.tan(np.clip(u, 0.0, _ARCTAN_CEIL))

    # -- curvature -----------------------------------------------------------

    def convexity_of_inverse(self) -> str:
        """Curvature class of the inverse on the transform's range.

        Returns ``convex``, ``concave``, or ``affine``; convex predicts
        underestimation of the naive back-transformed mean, concave
        overestimation, affine no bias.
        """
        if self.kind in ("identity", "linear"):
            return "affine"
        if self.kind == "square":
            return "concave"  # inverse is sqrt
        return "convex"  # expm1, u^2 on u>=0, tan on [0, pi/2)

    # -- tape emission ---------------------------------------------------------

    def emit_invert(self, tape, node: int) -> int | None:
        """Emit the (range-clamped) inverse onto a tape; None when the
        inverse is not expressible with the tape primitives (arctan)."""
        if self.kind == "identity":
            return node
        if self.kind == "linear":
            return tape.div(node, tape.const(self.slope))
        if self.kind == "log1p":
            return tape.add(tape.exp(node), tape.const(-1.0))
        if self.kind == "sqrt":
            return tape.square(node)
        if self.kind == "square":
            return tape.sqrt(tape.max(node, tape.const(0.0)))
        return None


def make_transform(kind: str, slope: float = 0.5) -> TargetTransform:
    return TargetTransform(kind=kind, slope=slope)
