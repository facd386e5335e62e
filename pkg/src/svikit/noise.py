"""Reproducible Wiener increments on dyadic grids.

Every Gaussian draw is addressed by ``(seed, member, level, channel)`` plus its
position within the level, via a Philox stream keyed on that tuple.  Level 0
holds ``W(b) - W(a)``; level ``l`` adds one Brownian-bridge midpoint per
interval of level ``l - 1``.  Because draws are addressed rather than
consumed sequentially, refining a path never perturbs the increments it
already has, which is what coupled coarse/fine studies need.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange

__all__ = [
    "BrownianPath",
    "sample_path",
    "refine",
    "increment",
    "coarsen",
    "ensemble_increments",
    "uniform_increments",
    "NoiseAudit",
]


def _normals(seed: int, member: int, level: int, channel: int, n: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(member), int(level), int(channel)))
    return np.random.Generator(np.random.Philox(ss)).standard_normal(n)


@dataclass(frozen=True)
class BrownianPath:
    seed: int
    horizon: tuple[float, float]
    levels: int
    channels: int
    increments: np.ndarray = field(repr=False)  # (channels, 2**levels)
    endpoint: np.ndarray = field(repr=False)  # W(b) - W(a) per channel
    member: int = 0

    def __post_init__(self):
        self.increments.setflags(write=False)
        self.endpoint.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return 1 << self.levels

    @property
    def h(self) -> float:
        a, b = self.horizon
        return (b - a) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        a, _ = self.horizon
        return a + self.h * np.arange(self.n_steps + 1)

    def steps(self) -> np.ndarray:
        """Increments laid out as (n_steps, channels), one row per step."""
        return np.ascontiguousarray(self.increments.T)

    def to_csv(self, path) -> None:
        """Dump ``(t, channel, increment)`` rows; ``t`` is the left endpoint."""
        t = self.times[:-1]
        with open(path, "w", newline="") as fh:
            fh.write(
                f"# seed={self.seed} member={self.member} horizon={self.horizon[0]!r},{self.horizon[1]!r} "
                f"levels={self.levels} channels={self.channels}\n"
            )
            w = csv.writer(fh)
            w.writerow(["t", "channel", "increment"])
            for j in range(self.channels):
                for k in range(self.n_steps):
                    w.writerow([repr(float(t[k])), j, repr(float(self.increments[j, k]))])

    def to_bytes(self) -> bytes:
        """Flat little-endian float64 dump of the increments, channel-major."""
        return self.increments.astype("<f8").tobytes()


def _bridge(parent: np.ndarray, z: np.ndarray, dt_parent: float) -> np.ndarray:
    # left child ~ N(parent/2, dt_parent/4); right child closes the interval exactly
    left = 0.5 * parent + 0.5 * np.sqrt(dt_parent) * z
    out = np.empty(2 * parent.size)
    out[0::2] = left
    out[1::2] = parent - left
    return out


def sample_path(seed: int, horizon=(0.0, 1.0), levels: int = 0, channels: int = 1, member: int = 0) -> BrownianPath:
    if levels < 0:
        raise ValueError("levels must be >= 0")
    if channels < 1:
        raise ValueError("channels must be >= 1")
    a, b = float(horizon[0]), float(horizon[1])
    if not b > a:
        raise ValueError("horizon must satisfy b > a")
    incs = np.empty((channels, 1 << levels))
    end = np.empty(channels)
    for j in range(channels):
        w = np.sqrt(b - a) * _normals(seed, member, 0, j, 1)
        end[j] = w[0]
        dt = b - a
        for lev in range(1, levels + 1):
            w = _bridge(w, _normals(seed, member, lev, j, w.size), dt)
            dt *= 0.5
        incs[j] = w
    return BrownianPath(int(seed), (a, b), int(levels), int(channels), incs, end, int(member))


def refine(path: BrownianPath) -> BrownianPath:
    """One more dyadic level; existing increments become sums of children."""
    lev = path.levels + 1
    incs = np.empty((path.channels, 1 << lev))
    for j in range(path.channels):
        z = _normals(path.seed, path.member, lev, j, path.n_steps)
        incs[j] = _bridge(path.increments[j], z, path.h)
    return BrownianPath(path.seed, path.horizon, lev, path.channels, incs, path.endpoint.copy(), path.member)


def increment(path: BrownianPath, k: int, channel: int) -> float:
    if not 0 <= k < path.n_steps:
        raise IndexOutOfRange(f"step index {k} outside [0, {path.n_steps})")
    if not 0 <= channel < path.channels:
        raise IndexOutOfRange(f"channel {channel} outside [0, {path.channels})")
    return float(path.increments[channel, k])


def coarsen(increments: np.ndarray, factor: int, axis: int = -1) -> np.ndarray:
    """Sum consecutive blocks of ``factor`` increments along ``axis``."""
    x = np.moveaxis(np.asarray(increments), axis, -1)
    n = x.shape[-1]
    if factor < 1 or n % factor:
        raise ValueError(f"cannot coarsen {n} steps by {factor}")
    out = x.reshape(*x.shape[:-1], n // factor, factor).sum(axis=-1)
    return np.moveaxis(out, -1, axis)


def ensemble_increments(seed: int, paths: int, horizon=(0.0, 1.0), levels: int = 0, channels: int = 1) -> np.ndarray:
    """Stacked increments of ``paths`` members, shaped (n_steps, paths, channels)."""
    out = np.empty((1 << levels, paths, channels))
    for i in range(paths):
        out[:, i, :] = sample_path(seed, horizon, levels, channels, member=i).increments.T
    return out


def uniform_increments(seed: int, member: int, n_steps: int, channels: int, h: float) -> np.ndarray:
    """N(0, h) increments on a uniform grid of any length, shaped (n_steps, channels).

    Used where the step count is not a power of two; keyed like dyadic paths
    but on a separate stream family so the two never alias.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(member), 0x5EED))
    rng = np.random.Generator(np.random.Philox(ss))
    return np.sqrt(h) * rng.standard_normal((n_steps, channels))


class NoiseAudit:
    """Running digest of the increments a stepper consumed, in order."""

    def __init__(self):
        self._h = hashlib.sha256()
        self.count = 0

    def record(self, dB) -> None:
        arr = np.ascontiguousarray(np.asarray(dB, dtype="<f8"))
        self._h.update(arr.tobytes())
        self.count += 1

    def hexdigest(self) -> str:
        return self._h.hexdigest()
