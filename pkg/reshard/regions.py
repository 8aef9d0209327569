"""
Region algebra over the Virtual Parameter Space.

A RegionSet holds per-tensor axis-aligned boxes (half-open intervals per axis)
and flat half-open intervals over the global offset space. Every RegionSet is
kept in canonical form, so two sets covering the same elements compare equal:

  - flat intervals are merged with `portion` and stored sorted and disjoint
  - boxes of one tensor are decomposed into slabs along axis 0, adjacent slabs
    with equal (recursively canonical) cross-sections merged

Each RegionSet is bound to a VPS by its `space` fingerprint; combining sets of
different spaces raises RegionError.
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import portion as P

from .errors import RegionError

Interval = Tuple[int, int]
Box = Tuple[Interval, ...]


def _atoms(interval: P.Interval) -> Tuple[Interval, ...]:
    if interval.empty:
        return ()
    out = []
    for atom in interval:
        lo = atom.lower if atom.left == P.CLOSED else atom.lower + 1
        hi = atom.upper if atom.right == P.OPEN else atom.upper + 1
        if lo < hi:
            out.append((lo, hi))
    return tuple(out)


def _to_portion(intervals: Iterable[Interval]) -> P.Interval:
    merged = P.empty()
    for lo, hi in intervals:
        if lo < hi:
            merged |= P.closedopen(lo, hi)
    return merged


def merge_intervals(intervals: Iterable[Interval]) -> Tuple[Interval, ...]:
    return _atoms(_to_portion(intervals))


def box_numel(box: Box) -> int:
    return math.prod(hi - lo for lo, hi in box)


def _box_and(a: Box, b: Box) -> Optional[Box]:
    out = tuple((max(alo, blo), min(ahi, bhi)) for (alo, ahi), (blo, bhi) in zip(a, b))
    if all(lo < hi for lo, hi in out):
        return out
    return None


def _box_minus(a: Box, b: Box) -> List[Box]:
    if _box_and(a, b) is None:
        return [a]
    pieces = []
    core = list(a)
    for axis, ((alo, ahi), (blo, bhi)) in enumerate(zip(a, b)):
        if alo < blo:
            pieces.append(tuple(core[:axis] + [(alo, blo)] + core[axis + 1:]))
        if bhi < ahi:
            pieces.append(tuple(core[:axis] + [(bhi, ahi)] + core[axis + 1:]))
        core[axis] = (max(alo, blo), min(ahi, bhi))
    return pieces


def canonical_boxes(boxes: Iterable[Box]) -> Tuple[Box, ...]:
    """Canonical disjoint decomposition of a union of same-rank boxes."""
    boxes = [b for b in boxes if all(lo < hi for lo, hi in b)]
    if not boxes:
        return ()
    if len(boxes[0]) == 1:
        return tuple((iv,) for iv in merge_intervals(b[0] for b in boxes))
    cuts = sorted({v for b in boxes for v in b[0]})
    slabs: List[Tuple[int, int, Tuple[Box, ...]]] = []
    for lo, hi in zip(cuts, cuts[1:]):
        cross = canonical_boxes([b[1:] for b in boxes if b[0][0] <= lo and hi <= b[0][1]])
        if not cross:
            continue
        if slabs and slabs[-1][1] == lo and slabs[-1][2] == cross:
            slabs[-1] = (slabs[-1][0], hi, cross)
        else:
            slabs.append((lo, hi, cross))
    return tuple(((lo, hi),) + rest for lo, hi, cross in slabs for rest in cross)


def format_box(box: Box) -> str:
    return "[" + ",".join(f"{lo}:{hi}" for lo, hi in box) + "]"


def format_flat(interval: Interval) -> str:
    return f"flat[{interval[0]}:{interval[1]}]"


@dataclass(frozen=True)
class RegionSet:
    space: str
    boxes: Tuple[Tuple[str, Tuple[Box, ...]], ...] = ()
    flat: Tuple[Interval, ...] = ()

    @classmethod
    def empty(cls, space: str) -> "RegionSet":
        return cls(space)

    @classmethod
    def from_boxes(cls, space: str, boxes: Mapping[str, Iterable[Box]], flat: Iterable[Interval] = ()) -> "RegionSet":
        canon = []
        for tensor_id in sorted(boxes):
            parts = canonical_boxes(boxes[tensor_id])
            if parts:
                canon.append((tensor_id, parts))
        return cls(space, tuple(canon), merge_intervals(flat))

    @classmethod
    def from_flat(cls, space: str, intervals: Iterable[Interval]) -> "RegionSet":
        return cls(space, (), merge_intervals(intervals))

    @property
    def is_empty(self) -> bool:
        return not self.boxes and not self.flat

    def box_map(self) -> Dict[str, Tuple[Box, ...]]:
        return dict(self.boxes)

    def tensor_ids(self) -> Tuple[str, ...]:
        return tuple(tid for tid, _ in self.boxes)

    def box_numel(self) -> int:
        return sum(box_numel(b) for _, parts in self.boxes for b in parts)

    def flat_numel(self) -> int:
        return sum(hi - lo for lo, hi in self.flat)

    @property
    def numel(self) -> int:
        return self.box_numel() + self.flat_numel()

    def _check(self, other: "RegionSet") -> None:
        if self.space != other.space:
            raise RegionError(f"mismatched VPS binding: {self.space} vs {other.space}")

    def union(self, other: "RegionSet") -> "RegionSet":
        self._check(other)
        merged: Dict[str, List[Box]] = {}
        for tid, parts in self.boxes + other.boxes:
            merged.setdefault(tid, []).extend(parts)
        return RegionSet.from_boxes(self.space, merged, self.flat + other.flat)

    def intersect(self, other: "RegionSet") -> "RegionSet":
        self._check(other)
        theirs = other.box_map()
        merged: Dict[str, List[Box]] = {}
        for tid, parts in self.boxes:
            for a in parts:
                for b in theirs.get(tid, ()):
                    hit = _box_and(a, b)
                    if hit is not None:
                        merged.setdefault(tid, []).append(hit)
        flat = _atoms(_to_portion(self.flat) & _to_portion(other.flat))
        return RegionSet.from_boxes(self.space, merged, flat)

    def diff(self, other: "RegionSet") -> "RegionSet":
        self._check(other)
        theirs = other.box_map()
        merged: Dict[str, List[Box]] = {}
        for tid, parts in self.boxes:
            remaining = list(parts)
            for b in theirs.get(tid, ()):
                remaining = [piece for a in remaining for piece in _box_minus(a, b)]
            merged[tid] = remaining
        flat = _atoms(_to_portion(self.flat) - _to_portion(other.flat))
        return RegionSet.from_boxes(self.space, merged, flat)

    __or__ = union
    __and__ = intersect
    __sub__ = diff

    def only(self, tensor_id: str) -> "RegionSet":
        return RegionSet(self.space, tuple((tid, parts) for tid, parts in self.boxes if tid == tensor_id), ())

    def sort_key(self) -> Tuple:
        return (tuple((tid, parts) for tid, parts in self.boxes), self.flat)

    def render(self) -> str:
        """Text form; a single-tensor, single-box region renders as `[lo:hi,...]`."""
        parts = [format_box(b) for _, boxes in self.boxes for b in boxes]
        parts += [format_flat(iv) for iv in self.flat]
        return "+".join(parts) if parts else "{}"

    def describe(self) -> str:
        parts = [f"{tid}{format_box(b)}" for tid, boxes in self.boxes for b in boxes]
        parts += [format_flat(iv) for iv in self.flat]
        return " ".join(parts) if parts else "{}"


def region_intersect(a: RegionSet, b: RegionSet) -> RegionSet:
    return a.intersect(b)


def region_diff(a: RegionSet, b: RegionSet) -> RegionSet:
    return a.diff(b)


def region_union(a: RegionSet, b: RegionSet) -> RegionSet:
    return a.union(b)


def union_all(space: str, regions: Sequence[RegionSet]) -> RegionSet:
    out = RegionSet.empty(space)
    for region in regions:
        out = out | region
    return out
