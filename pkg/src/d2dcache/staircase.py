"""Multiplier staircases and their intersection with a preference line.

Both trade-off analyses (reward vs. aggregate memory on the provider side,
memory vs. off-peak price on the user side) reduce to the same geometry: a
non-increasing step function r(Z) giving the marginal per-byte value of the
Z-th cached byte, intersected with an increasing line through the origin.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class StaircaseLevel:
    """One horizontal run: marginal value ``level`` on bytes [z_lo, z_hi)."""

    z_lo: float
    z_hi: float
    level: float


@dataclass(frozen=True)
class TradeoffResult:
    """A multiplier staircase and its intersection with a preference line."""

    staircase: tuple[StaircaseLevel, ...]
    z_star: float
    r_star: float


def staircase_from_drops(drops: list[tuple[float, float]]) -> list[StaircaseLevel]:
    """Build r(Z) from (per-byte value, byte width) pairs.

    The most valuable bytes come first; widths at equal value merge. The
    implied level past the final breakpoint is 0.
    """
    by_value: dict[float, float] = {}
    for value, width in drops:
        if width > 0.0:
            by_value[value] = by_value.get(value, 0.0) + width
    levels = []
    z = 0.0
    for value in sorted(by_value, reverse=True):
        levels.append(StaircaseLevel(z, z + by_value[value], value))
        z += by_value[value]
    return levels


def intersect_staircase(levels: list[StaircaseLevel], slope: float) -> tuple[float, float]:
    """Meet the increasing line r = slope*Z with a descending staircase.

    Walks from Z = 0 and returns the first point where the line reaches the
    staircase: on a horizontal run the true crossing (level/slope, level); on
    a vertical step (the run's right end) the line's value there, which is
    the binding preference at a memory breakpoint. A crossing on a horizontal
    run is a valid operating point because the level is exactly the
    multiplier at which the marginal copy breaks even, so fractional caching
    makes every Z in the run consistent. The level past the last run is 0, so
    a flat-enough line lands on the full-memory endpoint. An empty staircase
    returns (0, 0).
    """
    for i, lev in enumerate(levels):
        if slope > 0.0 and lev.level > 0.0:
            z_cross = lev.level / slope
            if lev.z_lo <= z_cross < lev.z_hi:
                return z_cross, lev.level
        z_step = lev.z_hi
        line_r = slope * z_step
        below = levels[i + 1].level if i + 1 < len(levels) else 0.0
        if below <= line_r <= lev.level:
            return z_step, line_r
    return 0.0, 0.0
