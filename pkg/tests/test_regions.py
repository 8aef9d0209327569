import itertools
import random

import pytest

from reshard.errors import RegionError
from reshard.regions import RegionSet, canonical_boxes, merge_intervals, union_all


def boxes(**tensors):
    return RegionSet.from_boxes("s", tensors)


def test_merge_intervals_joins_adjacent_and_overlapping():
    assert merge_intervals([(5, 8), (0, 2), (2, 4), (7, 10)]) == ((0, 4), (5, 10))


def test_canonical_boxes_is_order_independent():
    a = canonical_boxes([((0, 2), (0, 4)), ((2, 4), (0, 4))])
    b = canonical_boxes([((2, 4), (0, 4)), ((0, 2), (0, 4))])
    assert a == b
    assert sum((hi - lo) * (h2 - l2) for (lo, hi), (l2, h2) in a) == 16


def test_intersect_diff_union_on_boxes():
    full = boxes(w=[((0, 4), (0, 2))])
    top = boxes(w=[((0, 2), (0, 2))])
    bottom = full - top
    assert bottom == boxes(w=[((2, 4), (0, 2))])
    assert (top & bottom).is_empty
    assert top | bottom == full
    assert (full & top).numel == 4


def test_diff_leaves_l_shape():
    full = boxes(w=[((0, 4), (0, 4))])
    corner = boxes(w=[((0, 2), (0, 2))])
    rest = full - corner
    assert rest.numel == 12
    assert (rest & corner).is_empty
    assert rest | corner == full


def test_flat_algebra():
    a = RegionSet.from_flat("s", [(0, 10)])
    b = RegionSet.from_flat("s", [(5, 15)])
    assert (a & b).flat == ((5, 10),)
    assert (a - b).flat == ((0, 5),)
    assert (a | b).flat == ((0, 15),)


def test_union_all_and_empty():
    parts = [RegionSet.from_flat("s", [(i, i + 1)]) for i in range(4)]
    assert union_all("s", parts).flat == ((0, 4),)
    assert union_all("s", []).is_empty


def test_tensors_do_not_mix():
    a = boxes(w=[((0, 2),)])
    b = boxes(v=[((0, 2),)])
    assert (a & b).is_empty
    assert (a | b).tensor_ids() == ("v", "w")


def test_mismatched_space_raises():
    with pytest.raises(RegionError, match="mismatched VPS binding"):
        RegionSet.from_flat("a", [(0, 1)]) | RegionSet.from_flat("b", [(0, 1)])


def test_render():
    assert boxes(w=[((1, 2), (0, 2))]).render() == "[1:2,0:2]"
    assert RegionSet.from_flat("s", [(8, 10)]).render() == "flat[8:10]"
    assert RegionSet.empty("s").render() == "{}"


SHAPE = (6, 5)


def _random_region(rng):
    tensors = {}
    for tid in rng.sample(["w", "v"], rng.randint(1, 2)):
        tensors[tid] = []
        for _ in range(rng.randint(1, 3)):
            box = []
            for extent in SHAPE:
                lo = rng.randrange(extent)
                box.append((lo, rng.randint(lo + 1, extent)))
            tensors[tid].append(tuple(box))
    flat = []
    for _ in range(rng.randint(0, 3)):
        lo = rng.randrange(40)
        flat.append((lo, rng.randint(lo + 1, 40)))
    return RegionSet.from_boxes("s", tensors, flat)


def cells(region):
    """Every element of a region, enumerated one by one."""
    out = set()
    for tid, parts in region.boxes:
        for box in parts:
            out.update((tid,) + c for c in itertools.product(*(range(lo, hi) for lo, hi in box)))
    for lo, hi in region.flat:
        out.update(("flat", i) for i in range(lo, hi))
    return out


def test_algebra_matches_element_membership():
    rng = random.Random(11)
    for _ in range(200):
        a, b = _random_region(rng), _random_region(rng)
        ca, cb = cells(a), cells(b)
        assert cells(a & b) == ca & cb
        assert cells(a - b) == ca - cb
        assert cells(a | b) == ca | cb
        for result in (a & b, a - b, a | b):
            assert result.numel == len(cells(result))
        assert (a - b) | (b - a) | (a & b) == a | b
