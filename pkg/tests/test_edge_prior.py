import numpy as np
import pytest

from pdmvs.config import RunConfig
from pdmvs.edge_prior import (
    LABEL_EDGE,
    LABEL_UNASSIGNED,
    DegenerateFitError,
    RegionMap,
    RegionRecord,
    _roberts_magnitude,
    build_region_prior,
    dilate_merge,
    erode_regions,
    filter_anchors_by_region,
    filter_boundary_pixels,
    fit_all_regions,
    fit_plane_ransac,
    label_regions,
    normalize_mono_depth,
    plane_similarity,
    roberts_edges,
)


# ---------------------------------------------------------------- edges


def test_roberts_magnitude_oracle():
    img = np.array(
        [[0.0, 0.0, 0.0],
         [0.0, 1.0, 0.0],
         [0.0, 0.0, 0.0]]
    )
    mag = _roberts_magnitude(img)
    # manual 2x2 stencil: d1 = I(y,x) - I(y+1,x+1), d2 = I(y+1,x) - I(y,x+1)
    assert mag[0, 0] == pytest.approx(np.hypot(0.0 - 1.0, 0.0 - 0.0))
    assert mag[1, 1] == pytest.approx(np.hypot(1.0 - 0.0, 0.0 - 0.0))
    assert mag[0, 1] == pytest.approx(np.hypot(0.0 - 0.0, 1.0 - 0.0))


def test_roberts_border_replication():
    # a vertical step one pixel from the right border must stay an edge
    # all the way down the last row, or regions leak around the line
    img = np.zeros((6, 6))
    img[:, 3:] = 1.0
    mag = _roberts_magnitude(img)
    assert (mag[:, 2] > 0).all()
    assert mag[-1, 2] == mag[-2, 2]
    assert mag[2, -1] == mag[2, -2]


def test_roberts_edges_combines_image_and_depth():
    cfg = RunConfig()
    img = np.zeros((8, 8))
    depth = np.zeros((8, 8))
    img[:, 4:] = 1.0          # image step at col 3
    depth[4:, :] = 0.5        # depth step at row 3
    em = roberts_edges(depth, img, cfg)
    assert em.flags[1, 3] and em.flags[6, 3]    # image edge
    assert em.flags[3, 1] and em.flags[3, 6]    # depth edge
    assert not em.flags[1, 1]


def test_roberts_edges_shape_mismatch():
    with pytest.raises(ValueError, match="dimensions"):
        roberts_edges(np.zeros((4, 4)), np.zeros((4, 5)))


def test_normalize_mono_depth():
    d = np.array([[2.0, 4.0], [6.0, 2.0]])
    n = normalize_mono_depth(d)
    assert n.min() == 0.0 and n.max() == 1.0
    assert np.allclose(normalize_mono_depth(np.full((3, 3), 7.0)), 0.5)


def test_label_regions_connectivity_and_eta():
    flags = np.zeros((12, 12), dtype=bool)
    flags[:, 5] = True          # vertical edge wall
    flags[8, 6:] = True         # split the right side
    em = roberts_edges(np.zeros((12, 12)), np.zeros((12, 12)))
    em.flags[:] = flags
    cfg = RunConfig(eta=20)
    rm = label_regions(em, cfg)
    # left block 12x5=60 and upper-right 8x6=48 are regions; the
    # lower-right 3x6=18 block is below eta
    labels = {rm.labels[0, 0], rm.labels[0, 8]}
    assert labels == {0, 1}
    assert rm.labels[10, 8] == LABEL_UNASSIGNED
    assert (rm.labels[:, 5] == LABEL_EDGE).all()
    assert rm.records[0].pixel_count in (48, 60)


# ---------------------------------------------------------------- RANSAC


def test_ransac_recovers_plane_with_outliers(rng):
    n_true = np.array([0.3, -0.2, 0.93])
    n_true = n_true / np.linalg.norm(n_true)
    d_true = -0.4
    pts = rng.uniform(0, 1, size=(400, 3))
    # project points onto the plane n.p + d = 0
    pts -= (pts @ n_true + d_true)[:, None] * n_true
    outliers = rng.uniform(-2, 2, size=(80, 3))
    cloud = np.vstack([pts, outliers])
    n, d, ratio = fit_plane_ransac(cloud, 256, 0.01, rng)
    assert abs(float(n @ n_true)) > 0.9999
    assert abs(d - d_true * np.sign(n @ n_true)) < 1e-3
    assert 0.75 <= ratio <= 0.9     # 400 of 480 points are inliers


def test_ransac_normal_orientation(rng):
    pts = rng.uniform(0, 1, size=(50, 3))
    pts[:, 2] = 0.7
    n, d, ratio = fit_plane_ransac(pts, 64, 0.01, rng)
    assert n[2] > 0                  # canonical orientation
    assert ratio == 1.0
    assert abs(d + 0.7) < 1e-9


def test_ransac_degenerate_inputs(rng):
    with pytest.raises(DegenerateFitError):
        fit_plane_ransac(np.zeros((2, 3)), 16, 0.01, rng)
    t = np.linspace(0, 1, 30)
    collinear = np.column_stack([t, 2 * t, -t])
    with pytest.raises(DegenerateFitError):
        fit_plane_ransac(collinear, 16, 0.01, rng)


# ------------------------------------------------------------ similarity


def test_plane_similarity_examples():
    n = np.array([0.0, 0.0, 1.0])
    assert plane_similarity((n, 0.3), (n, 0.3)) == pytest.approx(1.0)
    assert plane_similarity((n, 0.0), (n, 1.5)) == pytest.approx(2.0)
    assert plane_similarity((n, 0.3), (-n, 0.3)) == pytest.approx(-1.0)
    # clamped offset term
    assert plane_similarity((n, 0.0), (n, 0.4)) == pytest.approx(1.4)
    # penalty variant subtracts the clamped offset difference
    assert plane_similarity((n, 0.0), (n, 0.4), depth_penalty=True) == (
        pytest.approx(0.6)
    )


# ------------------------------------------------------- erosion / merge


def _dumbbell_map():
    """Two 24x24 squares joined by a thin neck, over a wedge depth map
    whose halves are differently slanted planes."""
    h, w = 64, 64
    labels = np.full((h, w), LABEL_EDGE, dtype=np.int32)
    labels[4:28, 4:28] = 0
    labels[4:28, 36:60] = 0
    labels[14:18, 28:36] = 0
    u = (np.arange(w) / w)[None, :].repeat(h, axis=0)
    depth = np.where(u < 0.5, 0.5 - 2.0 * (u - 0.5), 0.5 + 2.0 * (u - 0.5))
    rm = RegionMap(labels, {0: RegionRecord(0, int((labels == 0).sum()))})
    return rm, depth


def test_erosion_splits_dumbbell(rng):
    cfg = RunConfig(eta=50)
    rm, depth = _dumbbell_map()
    fit_all_regions(rm, depth, cfg, rng)
    merged_ratio = rm.records[0].inlier_ratio
    assert merged_ratio < 0.8        # single plane fits the wedge badly
    erode_regions(rm, depth, cfg, rng)
    assert len(rm.records) == 2
    ids = sorted(rm.records)
    ra, rb = (rm.records[i] for i in ids)
    # split condition holds post-hoc
    sim = plane_similarity((ra.normal, ra.offset), (rb.normal, rb.offset))
    assert sim <= cfg.sigma
    assert (ra.inlier_ratio + rb.inlier_ratio) / (2 * merged_ratio) >= cfg.gamma
    # each square belongs to one sub-region
    assert rm.labels[16, 16] != rm.labels[16, 48]
    assert (rm.labels[4:28, 4:28] == rm.labels[16, 16]).all()
    assert (rm.labels[4:28, 36:60] == rm.labels[16, 48]).all()


def test_erosion_keeps_well_planarized_region(rng):
    cfg = RunConfig(eta=50)
    rm, _ = _dumbbell_map()
    depth = np.full((64, 64), 0.4)   # one consistent plane: no split
    fit_all_regions(rm, depth, cfg, rng)
    erode_regions(rm, depth, cfg, rng)
    assert len(rm.records) == 1


def test_dilate_merge_coplanar(rng):
    cfg = RunConfig(eta=20)
    labels = np.full((16, 32), LABEL_EDGE, dtype=np.int32)
    labels[2:14, 2:15] = 0
    labels[2:14, 16:30] = 1          # 1 px separating wall at col 15
    depth = np.full((16, 32), 0.6)
    rm = RegionMap(labels, {0: RegionRecord(0, 156), 1: RegionRecord(1, 168)})
    fit_all_regions(rm, depth, cfg, rng)
    dilate_merge(rm, depth, cfg, rng)
    assert sorted(rm.records) == [0]
    assert (rm.labels[2:14, 16:30] == 0).all()


def test_dilate_merge_rejects_dissimilar(rng):
    cfg = RunConfig(eta=20)
    labels = np.full((16, 32), LABEL_EDGE, dtype=np.int32)
    labels[2:14, 2:15] = 0
    labels[2:14, 17:30] = 1
    u = (np.arange(32) / 32)[None, :].repeat(16, axis=0)
    # steeply opposite slopes -> similarity below the merge gate
    depth = np.where(u < 0.5, 0.5 - 3.0 * (u - 0.5), 0.5 + 3.0 * (u - 0.5))
    rm = RegionMap(labels, {0: RegionRecord(0, 156), 1: RegionRecord(1, 156)})
    fit_all_regions(rm, depth, cfg, rng)
    dilate_merge(rm, depth, cfg, rng)
    assert sorted(rm.records) == [0, 1]


# ------------------------------------------------------- boundary filter


def test_boundary_filter_absorbs_on_plane_pixels(rng):
    cfg = RunConfig(eta=20, delta=0.05)
    labels = np.full((10, 10), LABEL_EDGE, dtype=np.int32)
    labels[:, :4] = 0
    depth = np.full((10, 10), 0.3)
    depth[:, 7:] = 0.9               # far off the region plane
    rm = RegionMap(labels, {0: RegionRecord(0, 40)})
    fit_all_regions(rm, depth, cfg, rng)
    filter_boundary_pixels(rm, depth, cfg)
    # on-plane edge pixels are absorbed column by column
    assert (rm.labels[:, 4:7] == 0).all()
    # pixels beyond delta stay boundary
    assert (rm.labels[:, 7:] == LABEL_EDGE).all()
    assert rm.records[0].pixel_count == 70


def test_boundary_filter_prefers_closer_plane(rng):
    cfg = RunConfig(eta=10, delta=0.5)
    labels = np.full((8, 9), LABEL_EDGE, dtype=np.int32)
    labels[:, :4] = 0
    labels[:, 5:] = 1
    depth = np.zeros((8, 9))
    depth[:, :4] = 0.2
    depth[:, 5:] = 0.4
    depth[:, 4] = 0.25               # boundary column: closer to plane 0
    rm = RegionMap(labels, {0: RegionRecord(0, 32), 1: RegionRecord(1, 32)})
    fit_all_regions(rm, depth, cfg, rng)
    filter_boundary_pixels(rm, depth, cfg)
    assert (rm.labels[:, 4] == 0).all()


def test_filter_anchors_by_region():
    labels = np.zeros((6, 6), dtype=np.int32)
    labels[:, 3:] = 1
    labels[0, 0] = LABEL_EDGE
    rm = RegionMap(labels, {})
    # anchors are (x, y) pixel coordinates
    anchors = [(1, 1), (4, 4), (2, 5)]
    assert filter_anchors_by_region((1, 2), anchors, rm) == [(1, 1), (2, 5)]
    assert filter_anchors_by_region((4, 1), anchors, rm) == [(4, 4)]
    # pixels without a region keep all anchors
    assert filter_anchors_by_region((0, 0), anchors, rm) == anchors


# ------------------------------------------------------- full prior on a scene


def test_region_prior_two_plane_scene(small_lscene):
    s = small_lscene
    cfg = RunConfig(d_min=s.d_min, d_max=s.d_max)
    mono = s.mono_depths()[0]
    rm = build_region_prior(mono, s.images[0], cfg, seed=0)
    # the scene resolves into exactly two large planar regions covering
    # the whole view
    sizes = sorted((r.pixel_count for r in rm.records.values()), reverse=True)
    assert len(sizes) == 2
    assert (rm.labels < 0).sum() == 0
    h, w = rm.labels.shape
    assert min(sizes) > 0.4 * h * w
    # their planes are dissimilar (this is what justified the split)
    ra, rb = (rm.records[i] for i in sorted(rm.records))
    sim = plane_similarity((ra.normal, ra.offset), (rb.normal, rb.offset))
    assert sim <= cfg.sigma
