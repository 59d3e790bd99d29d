import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvgl.dataset import (
    DatasetError,
    GridSpec,
    PlaceClass,
    PlaceClassSet,
    assign_class,
    build_split,
    load_split,
    sample_place_classes,
    save_split,
)
from cvgl.geometry import Pose, VisibilityCone
from cvgl.synthworld import generate_world, render, render_sweep, sample_pose_sweep


def classes_at(*points):
    return PlaceClassSet(tuple(PlaceClass(i, p, i, (i, 0, 0)) for i, p in enumerate(points)))


def oracle_class(camera, rep_points, hfov=math.pi / 2, max_range=10.0):
    """Cone and nearest rule via dot products, no angle wrapping."""
    x, y, h = camera
    fwd = np.array([math.cos(h), math.sin(h)])
    best = None
    for i, (px, py) in enumerate(rep_points):
        d = np.array([px - x, py - y])
        dist = float(np.linalg.norm(d))
        if dist > max_range:
            continue
        if dist > 0 and float(d @ fwd) / dist < math.cos(hfov / 2):
            continue
        if best is None or dist < best[0]:
            best = (dist, i)
    return None if best is None else best[1]


@pytest.fixture(scope="module")
def pool():
    world = generate_world(11)
    return render_sweep(world, sample_pose_sweep(world, 60, 2, clearance=0.5))


def test_assign_single_visible_class():
    assert assign_class((0, 0, 0), classes_at((3, 0), (-3, 0))) == 0


def test_assign_prefers_nearest():
    assert assign_class((0, 0, 0), classes_at((5, 0), (2, 0.5))) == 1


def test_assign_none_visible():
    assert assign_class((0, 0, 0), classes_at((-2, 0), (0, 4))) is None


def test_assign_tie_goes_to_lower_index():
    assert assign_class((0, 0, 0), classes_at((2, 1), (2, -1))) == 0


@settings(max_examples=300)
@given(st.lists(st.tuples(st.floats(-12, 12), st.floats(-12, 12)), min_size=1, max_size=8),
       st.floats(-12, 12), st.floats(-12, 12), st.floats(-math.pi, math.pi))
def test_assign_matches_oracle(points, x, y, h):
    cone = VisibilityCone()
    for px, py in points:  # stay off the cone boundary where rounding decides
        d = math.hypot(px - x, py - y)
        if 0 < d <= 1e-9:
            return
        if d > 1e-9:
            cosang = ((px - x) * math.cos(h) + (py - y) * math.sin(h)) / d
            if abs(cosang - math.cos(cone.hfov / 2)) < 1e-9 or abs(d - cone.max_range) < 1e-9:
                return
    dists = sorted(math.hypot(px - x, py - y) for px, py in points)
    if any(b - a < 1e-12 for a, b in zip(dists, dists[1:])):
        return
    assert assign_class((x, y, h), classes_at(*points), cone) == oracle_class((x, y, h), points)


def test_one_cell_pool_is_infeasible():
    world = generate_world(3)
    frames = [render(world, Pose.from_planar(1.2 + 0.1 * i, 1.2, 0.1)) for i in range(4)]
    for i, f in enumerate(frames):
        f.frame_id = i
    with pytest.raises(DatasetError):
        sample_place_classes(frames, 2)
    one = sample_place_classes(frames, 1, seed=4)
    assert len(one) == 1
    assert assign_class(frames[one.classes[0].training_frame].pose.planar(), one) == 0


def test_grid_uniqueness_over_seeds(pool):
    for seed in range(100):
        cs = sample_place_classes(pool, 8, seed=seed)
        assert cs.grid_unique()
        assert len({c.training_frame for c in cs.classes}) == 8


def test_rep_point_inside_training_cone(pool):
    cone = VisibilityCone()
    by_id = {f.frame_id: f for f in pool}
    for c in sample_place_classes(pool, 10, seed=3).classes:
        f = by_id[c.training_frame]
        assert oracle_class(f.pose.planar(), [c.rep_point]) == 0
        x, y, _ = f.pose.planar()
        assert math.hypot(c.rep_point[0] - x, c.rep_point[1] - y) < cone.max_range


def test_hardness_mode_respects_grid(pool):
    cs = sample_place_classes(pool, 5, seed=1, hardness=True)
    assert cs.grid_unique() and len(cs) == 5


def test_split_partition_and_determinism(pool):
    cs = sample_place_classes(pool, 6, seed=5)
    split = build_split(pool, cs)
    ids = [t[0] for t in split.train] + [t[0] for t in split.test] + split.excluded
    assert sorted(ids) == sorted(f.frame_id for f in pool)
    assert [c for _, c in split.train] == list(range(6))
    again = build_split(pool, sample_place_classes(pool, 6, seed=5))
    assert (again.train, again.test, again.excluded) == (split.train, split.test, split.excluded)


def test_training_only_pool_has_empty_test(pool, caplog):
    cs = sample_place_classes(pool, 4, seed=0)
    training = [f for f in pool if f.frame_id in {c.training_frame for c in cs.classes}]
    with caplog.at_level(logging.WARNING):
        split = build_split(training, cs)
    assert split.test == [] and split.excluded == [] and len(split.train) == 4
    assert "no test frames" in caplog.text


def test_split_manifest_round_trip(tmp_path, pool):
    cs = sample_place_classes(pool, 5, GridSpec(cell=3.0), seed=2)
    split = build_split(pool, cs)
    save_split(tmp_path / "split.json", cs, split, VisibilityCone())
    cs2, split2, cone2 = load_split(tmp_path / "split.json")
    assert cs2 == cs and cone2 == VisibilityCone()
    assert (split2.train, split2.test, split2.excluded) == (split.train, split.test, split.excluded)


def test_benchmark_split_matches_oracle(full_bench):
    rep = full_bench.classes.rep_points
    by_id = full_bench.by_id
    assert len(full_bench.frames) == 400 and len(full_bench.classes) == 20
    for fid, c in full_bench.split.test:
        assert oracle_class(by_id[fid].pose.planar(), rep) == c
    for fid in full_bench.split.excluded:
        assert oracle_class(by_id[fid].pose.planar(), rep) is None
