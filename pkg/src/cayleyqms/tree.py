"""Geometry of the semi-infinite Cayley tree.

Vertices are integer paths from the root; the root is the empty path.
Everything here is a pure function on immutable values.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import total_ordering
from typing import Iterator, Sequence


@total_ordering
@dataclass(frozen=True)
class SiteCoord:
    """A vertex of the order-``k`` tree, given by its path from the root."""

    path: tuple[int, ...]
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"tree order must be >= 1, got {self.k}")
        object.__setattr__(self, "path", tuple(int(i) for i in self.path))
        for i in self.path:
            if not 1 <= i <= self.k:
                raise ValueError(f"path entry {i} outside [1, {self.k}]")

    @property
    def level(self) -> int:
        return len(self.path)

    @property
    def parent(self) -> SiteCoord | None:
        if not self.path:
            return None
        return SiteCoord(self.path[:-1], self.k)

    def child(self, i: int) -> SiteCoord:
        return SiteCoord(self.path + (i,), self.k)

    def sort_key(self) -> tuple:
        return (len(self.path), self.path)

    def __lt__(self, other: SiteCoord) -> bool:
        if not isinstance(other, SiteCoord):
            return NotImplemented
        return self.sort_key() < other.sort_key()

    def label(self) -> str:
        """Dotted string form; the root is the empty string."""
        return ".".join(str(i) for i in self.path)

    @classmethod
    def from_label(cls, text: str, k: int) -> SiteCoord:
        text = text.strip()
        if not text:
            return cls((), k)
        return cls(tuple(int(t) for t in text.split(".")), k)

    def __repr__(self) -> str:
        return f"SiteCoord({self.path!r}, k={self.k})"


def root(k: int) -> SiteCoord:
    return SiteCoord((), k)


@dataclass(frozen=True)
class Level:
    n: int
    vertices: tuple[SiteCoord, ...]

    def __len__(self) -> int:
        return len(self.vertices)

    def __iter__(self) -> Iterator[SiteCoord]:
        return iter(self.vertices)


def enumerate_level(k: int, n: int) -> Level:
    """All ``k**n`` vertices at distance ``n`` from the root, lexicographically."""
    if k < 1:
        raise ValueError(f"tree order must be >= 1, got {k}")
    if n < 0:
        raise ValueError(f"level must be >= 0, got {n}")
    verts = tuple(SiteCoord(p, k) for p in itertools.product(range(1, k + 1), repeat=n))
    return Level(n, verts)


def iter_levels(k: int, depth: int) -> Iterator[Level]:
    """Levels ``W_0 .. W_depth``, generated lazily."""
    for n in range(depth + 1):
        yield enumerate_level(k, n)


def ball(k: int, n: int) -> tuple[SiteCoord, ...]:
    """Sites of the volume Λ_n in canonical order (level ascending, then lexicographic)."""
    return tuple(x for lev in iter_levels(k, n) for x in lev)


def levels_between(k: int, lo: int, hi: int) -> tuple[SiteCoord, ...]:
    """Sites of ``W_lo ∪ ... ∪ W_hi`` in canonical order."""
    return tuple(x for n in range(lo, hi + 1) for x in enumerate_level(k, n))


def direct_successors(x: SiteCoord, reverse: bool = False) -> tuple[SiteCoord, ...]:
    kids = tuple(x.child(i) for i in range(1, x.k + 1))
    return kids[::-1] if reverse else kids


def _check_same_order(*xs: SiteCoord) -> None:
    orders = {x.k for x in xs}
    if len(orders) != 1:
        raise ValueError(f"mismatched tree orders {sorted(orders)}")


def common_prefix_length(a: Sequence[int], b: Sequence[int]) -> int:
    m = 0
    for u, v in zip(a, b):
        if u != v:
            break
        m += 1
    return m


def distance(x: SiteCoord, y: SiteCoord) -> int:
    _check_same_order(x, y)
    return x.level + y.level - 2 * common_prefix_length(x.path, y.path)


def is_ternary(x: SiteCoord, z: SiteCoord, y: SiteCoord) -> bool:
    """True iff ``x`` and ``y`` are distinct direct successors of ``z``."""
    _check_same_order(x, z, y)
    succ = set(direct_successors(z))
    return x != y and x in succ and y in succ


def edges(k: int, n: int) -> list[tuple[SiteCoord, SiteCoord]]:
    """Parent-child edges inside Λ_n."""
    return [(x.parent, x) for x in ball(k, n) if x.parent is not None]


def sort_sites(sites) -> tuple[SiteCoord, ...]:
    return tuple(sorted(sites))
