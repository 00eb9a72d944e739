"""Grids, integer level sets, piecewise-constant controls and their switching
representations.

Level indices are 0-based throughout: ``kappa[j] == l`` means the control takes
the value ``levels.values[l]`` on cell ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np


@dataclass(frozen=True)
class LevelSet:
    """Admissible integer control values, strictly increasing."""

    values: tuple[int, ...]

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if any(int(v) != v for v in self.values):
            raise ValueError("control levels must be integers")
        if len(vals) < 2:
            raise ValueError("need at least two control levels")
        if any(a >= b for a, b in zip(vals, vals[1:])):
            raise ValueError(f"levels must be strictly increasing, got {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def range(cls, lo: int, hi: int) -> "LevelSet":
        """All integers ``lo..hi`` inclusive."""
        return cls(tuple(range(lo, hi + 1)))

    @property
    def d(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.int64)

    def index_of(self, value: int) -> int:
        try:
            return self.values.index(int(value))
        except ValueError:
            raise ValueError(f"{value} is not a control level of {self.values}") from None


@dataclass(frozen=True)
class UniformGrid:
    t_start: float
    t_end: float
    n: int

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError("grid needs t_start < t_end")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("grid needs n >= 1 cells")
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "n", int(self.n))

    @property
    def length(self) -> float:
        return self.t_end - self.t_start

    @property
    def dt(self) -> float:
        return self.length / self.n

    def points(self) -> np.ndarray:
        """The n+1 grid points t_0 < ... < t_n."""
        return self.t_start + self.dt * np.arange(self.n + 1)

    def midpoints(self) -> np.ndarray:
        return self.t_start + self.dt * (np.arange(self.n) + 0.5)

    def refine(self, factor: int) -> "UniformGrid":
        return UniformGrid(self.t_start, self.t_end, self.n * factor)


@dataclass(frozen=True, eq=False)
class GridControl:
    """Piecewise-constant control on a uniform grid, stored as level indices."""

    grid: UniformGrid
    levels: LevelSet
    kappa: np.ndarray

    def __post_init__(self):
        kappa = np.array(self.kappa, dtype=np.int64).reshape(-1)
        if kappa.size != self.grid.n:
            raise ValueError(f"kappa has {kappa.size} entries, grid has {self.grid.n} cells")
        if kappa.size and (kappa.min() < 0 or kappa.max() >= self.levels.d):
            raise ValueError("level index out of range")
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)

    @classmethod
    def from_values(cls, grid: UniformGrid, levels: LevelSet, values) -> "GridControl":
        values = np.asarray(values)
        lv = levels.array
        idx = np.searchsorted(lv, values)
        idx = np.clip(idx, 0, levels.d - 1)
        if not np.array_equal(lv[idx], values):
            raise ValueError("values are not all control levels")
        return cls(grid, levels, idx)

    @classmethod
    def constant(cls, grid: UniformGrid, levels: LevelSet, index: int) -> "GridControl":
        return cls(grid, levels, np.full(grid.n, index, dtype=np.int64))

    @property
    def values(self) -> np.ndarray:
        """Cell values as floats."""
        return self.levels.array[self.kappa].astype(float)

    def __eq__(self, other):
        if not isinstance(other, GridControl):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.levels == other.levels
            and np.array_equal(self.kappa, other.kappa)
        )

    __hash__ = None

    def __repr__(self):
        return f"GridControl(n={self.grid.n}, levels={self.levels.values}, tv={tv_discrete(self)})"

    def to_dict(self) -> dict:
        return {
            "t_start": self.grid.t_start,
            "t_end": self.grid.t_end,
            "n": self.grid.n,
            "levels": list(self.levels.values),
            "kappa": [int(k) for k in self.kappa],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridControl":
        grid = UniformGrid(data["t_start"], data["t_end"], data["n"])
        return cls(grid, LevelSet(tuple(data["levels"])), np.asarray(data["kappa"], dtype=np.int64))


def total_variation(values) -> float:
    """Sum of absolute jumps of a sequence of cell values."""
    values = np.asarray(values, dtype=float)
    return float(np.abs(np.diff(values)).sum())


def tv_discrete(u: GridControl) -> float:
    return float(np.abs(np.diff(u.levels.array[u.kappa])).sum())


def _check_compatible(u: GridControl, w: GridControl):
    if u.grid != w.grid:
        raise ValueError(f"grid mismatch: {u.grid} vs {w.grid}")
    if u.levels != w.levels:
        raise ValueError("level set mismatch")


def distances(u: GridControl, w: GridControl) -> tuple[float, float]:
    """Return ``(||u - w||_L1, ||u - w||_L2^2)``."""
    _check_compatible(u, w)
    diff = np.abs(u.levels.array[u.kappa] - w.levels.array[w.kappa])
    dt = u.grid.dt
    return float(dt * diff.sum()), float(dt * (diff * diff).sum())


def prolong(u: GridControl, factor: int) -> GridControl:
    """Represent the same function on a grid refined by an integer factor."""
    if int(factor) != factor or factor < 1:
        raise ValueError("refinement factor must be a positive integer")
    return GridControl(u.grid.refine(int(factor)), u.levels, np.repeat(u.kappa, int(factor)))


def random_switching_control(
    grid: UniformGrid,
    levels: LevelSet,
    num_switches: int,
    seed=None,
    allow_equal_segments: bool = False,
) -> GridControl:
    """Random start control switching at ``num_switches`` distinct interior grid points.

    Segment levels are drawn uniformly. Unless ``allow_equal_segments`` is set,
    each segment level is drawn from the levels different from its predecessor,
    so the realized switch count is exact.
    """
    if num_switches < 0 or num_switches >= grid.n:
        raise ValueError(f"num_switches must lie in [0, n-1], got {num_switches} for n={grid.n}")
    rng = np.random.default_rng(seed)
    points = np.sort(rng.choice(np.arange(1, grid.n), size=num_switches, replace=False))
    segment = np.empty(num_switches + 1, dtype=np.int64)
    segment[0] = rng.integers(levels.d)
    for i in range(1, num_switches + 1):
        if allow_equal_segments:
            segment[i] = rng.integers(levels.d)
        else:
            k = rng.integers(levels.d - 1)
            segment[i] = k if k < segment[i - 1] else k + 1
    lengths = np.diff(np.concatenate(([0], points, [grid.n])))
    return GridControl(grid, levels, np.repeat(segment, lengths))


@dataclass(frozen=True)
class SwitchingSignature:
    """Switching-time description of a piecewise-constant control.

    ``switch_times[j]`` separates segment ``j`` from segment ``j + 1``; the
    jump there is ``jump_heights[j]``. ``up_jumps``/``down_jumps`` hold the
    (0-based) switch indices of jumps skipping at least one level; they are
    only populated for the minimal kind.
    """

    kind: Literal["minimal", "full"]
    t_start: float
    t_end: float
    switch_times: tuple[float, ...]
    level_indices: tuple[int, ...]
    levels: LevelSet
    up_jumps: frozenset = field(default_factory=frozenset)
    down_jumps: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if len(self.level_indices) != len(self.switch_times) + 1:
            raise ValueError("need exactly one more segment than switch times")
        t = (self.t_start, *self.switch_times, self.t_end)
        if self.kind == "minimal":
            if any(a >= b for a, b in zip(t, t[1:])):
                raise ValueError("minimal signature needs strictly increasing switch times")
            if any(a == b for a, b in zip(self.level_indices, self.level_indices[1:])):
                raise ValueError("minimal signature needs distinct consecutive levels")
        elif self.kind == "full":
            if any(a > b for a, b in zip(t, t[1:])) or (
                self.switch_times and not (t[0] < t[1] and t[-2] < t[-1])
            ):
                raise ValueError("full signature needs nondecreasing interior switch times")
            k = self.level_indices
            if any(abs(a - b) != 1 for a, b in zip(k, k[1:])):
                raise ValueError("full signature needs unit index steps")
            s = self.switch_times
            if any(s[j] == s[j + 1] and k[j] == k[j + 2] for j in range(len(s) - 1)):
                raise ValueError("full signature switches back and forth at a single time")
        else:
            raise ValueError(f"unknown signature kind {self.kind!r}")

    @property
    def segment_values(self) -> np.ndarray:
        return self.levels.array[list(self.level_indices)].astype(float)

    @property
    def jump_heights(self) -> np.ndarray:
        return np.diff(self.segment_values)

    @property
    def tv(self) -> float:
        return float(np.abs(self.jump_heights).sum())

    def to_grid_control(self, grid: UniformGrid) -> GridControl:
        """Sample the signature on a grid; exact when switches lie on grid points."""
        if (grid.t_start, grid.t_end) != (self.t_start, self.t_end):
            raise ValueError("grid does not cover the signature's time interval")
        seg = np.searchsorted(np.asarray(self.switch_times, dtype=float), grid.midpoints(), side="right")
        return GridControl(grid, self.levels, np.asarray(self.level_indices, dtype=np.int64)[seg])


def _switch_cells(u: GridControl) -> np.ndarray:
    """Cell indices j such that u changes value between cell j-1 and cell j."""
    return np.flatnonzero(np.diff(u.kappa)) + 1


def minimal_representation(u: GridControl) -> SwitchingSignature:
    cells = _switch_cells(u)
    times = tuple(float(u.grid.t_start + c * u.grid.dt) for c in cells)
    kappa = [int(u.kappa[0]), *(int(u.kappa[c]) for c in cells)]
    up = frozenset(j for j in range(len(cells)) if kappa[j + 1] > kappa[j] + 1)
    down = frozenset(j for j in range(len(cells)) if kappa[j + 1] < kappa[j] - 1)
    return SwitchingSignature("minimal", u.grid.t_start, u.grid.t_end, times, tuple(kappa), u.levels, up, down)


def full_from_minimal(sig: SwitchingSignature) -> SwitchingSignature:
    """Resolve every multi-level jump into repeated unit steps."""
    if sig.kind != "minimal":
        raise ValueError("expected a minimal signature")
    times: list[float] = []
    kappa = [sig.level_indices[0]]
    for t, k in zip(sig.switch_times, sig.level_indices[1:]):
        step = 1 if k > kappa[-1] else -1
        while kappa[-1] != k:
            kappa.append(kappa[-1] + step)
            times.append(t)
    return SwitchingSignature("full", sig.t_start, sig.t_end, tuple(times), tuple(kappa), sig.levels)


def full_representation(u: GridControl) -> SwitchingSignature:
    return full_from_minimal(minimal_representation(u))


def signature(
    kind: Literal["minimal", "full"],
    t_end: float,
    switch_times: Sequence[float],
    level_indices: Sequence[int],
    levels: LevelSet,
    t_start: float = 0.0,
) -> SwitchingSignature:
    """Build a signature from user data; jump sets are derived for the minimal kind."""
    kappa = tuple(int(k) for k in level_indices)
    up = down = frozenset()
    if kind == "minimal":
        up = frozenset(j for j in range(len(kappa) - 1) if kappa[j + 1] > kappa[j] + 1)
        down = frozenset(j for j in range(len(kappa) - 1) if kappa[j + 1] < kappa[j] - 1)
    return SwitchingSignature(kind, float(t_start), float(t_end), tuple(float(t) for t in switch_times), kappa, levels, up, down)
