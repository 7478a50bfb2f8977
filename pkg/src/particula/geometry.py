"""Axis-aligned boxes and periodic image helpers shared across modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [low, high) per axis."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=np.float64))
        high = np.atleast_1d(np.asarray(self.high, dtype=np.float64))
        if low.shape != high.shape or low.ndim != 1:
            raise ValueError("box low/high must be 1-D arrays of equal length")
        if np.any(high <= low):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def ndim(self) -> int:
        return self.low.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return self.high - self.low

    def contains(self, x: np.ndarray) -> np.ndarray:
        """Half-open membership test; x is (n, d) or (d,)."""
        x = np.asarray(x, dtype=np.float64)
        return np.all((x >= self.low) & (x < self.high), axis=-1)

    def wrap(self, x: np.ndarray, periodic) -> np.ndarray:
        """Wrap coordinates into [low, high) on periodic axes. Returns a copy."""
        x = np.array(x, dtype=np.float64, copy=True)
        per = np.asarray(periodic, dtype=bool)
        L = self.lengths
        for a in np.flatnonzero(per):
            x[..., a] = self.low[a] + np.mod(x[..., a] - self.low[a], L[a])
            # mod can return L for inputs an ulp below a period boundary
            x[..., a] = np.where(x[..., a] >= self.high[a], self.low[a], x[..., a])
        return x

    def min_image(self, dx: np.ndarray, periodic) -> np.ndarray:
        """Minimum-image displacement for separations already in (-L, L)."""
        dx = np.array(dx, dtype=np.float64, copy=True)
        per = np.asarray(periodic, dtype=bool)
        L = self.lengths
        for a in np.flatnonzero(per):
            dx[..., a] -= L[a] * np.round(dx[..., a] / L[a])
        return dx


def cube(length: float, ndim: int = 3) -> Box:
    return Box(np.zeros(ndim), np.full(ndim, float(length)))
