"""Half-open interval lists on the real line.

An interval list is a sequence of ``(start, end)`` pairs.  A *normalized*
list is sorted, has positive-length members, and no two members touch or
overlap.
"""
from __future__ import annotations

from typing import Iterable, Sequence

Span = tuple[float, float]


def normalize(spans: Iterable[Span]) -> list[Span]:
    """Sort, drop empty spans and merge overlapping or abutting ones."""
    items = sorted((float(a), float(b)) for a, b in spans if b > a)
    merged: list[Span] = []
    for a, b in items:
        if merged and a <= merged[-1][1]:
            if b > merged[-1][1]:
                merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged


def total_length(spans: Iterable[Span]) -> float:
    return float(sum(b - a for a, b in spans))


def intersect(p: Sequence[Span], g: Sequence[Span]) -> list[Span]:
    """Intersection of two normalized lists (two-pointer sweep)."""
    out: list[Span] = []
    i = j = 0
    while i < len(p) and j < len(g):
        a = max(p[i][0], g[j][0])
        b = min(p[i][1], g[j][1])
        if b > a:
            out.append((a, b))
        if p[i][1] < g[j][1]:
            i += 1
        else:
            j += 1
    return out


def intersection_length(p: Sequence[Span], g: Sequence[Span]) -> float:
    return total_length(intersect(p, g))


def is_normalized(spans: Sequence[Span]) -> bool:
    for k, (a, b) in enumerate(spans):
        if not b > a:
            return False
        if k and a <= spans[k - 1][1]:
            return False
    return True
