import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangeseg.errors import ConfigError, ShapeError, StateError
from rangeseg.kitti_io import PointCloud
from rangeseg.postprocess import KnnParams, TemporalWindow, knn_clean, temporal_filter, temporal_smooth
from rangeseg.projection import SensorGeometry, build_range_image, unproject_labels

from .conftest import SMALL_GEOM, random_cloud

GEOM = SensorGeometry.from_degrees(8, 4, 3.0, 25.0)


def at_pixel(u, v, r, g=GEOM):
    az = np.pi * (1 - 2 * (u + 0.5) / g.width)
    el = (1 - (v + 0.5) / g.height) * g.fov - g.fov_up
    return [r * np.cos(el) * np.cos(az), r * np.cos(el) * np.sin(az), r * np.sin(el), 0.0]


def shadow_fixture():
    # wall at 20 m across three pixels, a pole at 5 m in front of the middle one
    pts = [at_pixel(3, 1, 20.0), at_pixel(4, 1, 5.0), at_pixel(4, 1, 20.0), at_pixel(5, 1, 20.0)]
    img = build_range_image(PointCloud(np.array(pts, np.float32)), GEOM)
    labels = np.zeros(img.shape, int)
    labels[1, 3], labels[1, 4], labels[1, 5] = 2, 1, 2
    return img, labels


def test_shadow_fixture_corrected():
    img, labels = shadow_fixture()
    assert unproject_labels(labels, img).tolist() == [2, 1, 1, 2]
    out = knn_clean(labels, img, KnnParams(k=3, window=3, sigma=1.0, cutoff=1.0))
    assert out.tolist() == [2, 1, 2, 2]


def test_knn_no_candidates_falls_back():
    img, labels = shadow_fixture()
    # cutoff below every range gap except self: each point votes with itself only,
    # the shadowed point has no valid pixel at its own range -> fallback
    out = knn_clean(labels, img, KnnParams(k=3, window=1, cutoff=0.5))
    assert out.tolist() == [2, 1, 1, 2]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_knn_constant_labels_identity(seed):
    rng = np.random.default_rng(seed)
    img = build_range_image(PointCloud(random_cloud(rng, 300)), SMALL_GEOM)
    labels = np.full(img.shape, 7)
    assert (knn_clean(labels, img) == 7).all()


def test_knn_window_one_cutoff_large_is_unprojection(rng):
    img = build_range_image(PointCloud(random_cloud(rng, 500)), SMALL_GEOM)
    labels = rng.integers(0, 5, img.shape)
    out = knn_clean(labels, img, KnnParams(k=1, window=1, cutoff=1e9))
    assert np.array_equal(out, unproject_labels(labels, img))


def test_knn_params_and_shapes():
    with pytest.raises(ConfigError):
        KnnParams(window=4)
    with pytest.raises(ConfigError):
        KnnParams(k=0)
    img, labels = shadow_fixture()
    with pytest.raises(ShapeError):
        knn_clean(labels[:2], img)


def test_temporal_window_one_identity(rng):
    seq = [rng.normal(size=(4, 3)) for _ in range(5)]
    out = temporal_smooth(seq, 0, 0)
    assert all(np.array_equal(a, b) for a, b in zip(out, seq))


def test_temporal_constant_mean(rng):
    z = rng.normal(size=(4, 3))
    out = temporal_smooth([z] * 6, 2, 1)
    assert all(np.allclose(o, z) for o in out)
    probs = temporal_smooth([z] * 3, 1, 1, space="probs")
    # log of softmax: same argmax and same softmax
    e = np.exp(z - z.max(1, keepdims=True))
    assert np.allclose(np.exp(probs[1]), e / e.sum(1, keepdims=True))


def test_temporal_clipped_edges():
    seq = [np.full((1, 2), float(t)) for t in range(4)]
    out = temporal_smooth(seq, 1, 1)
    assert [o[0, 0] for o in out] == [0.5, 1.0, 2.0, 2.5]


def test_temporal_window_buffer():
    w = TemporalWindow(1, 0)
    with pytest.raises(StateError):
        temporal_filter(w)
    for t in range(3):
        w.push(np.full((1, 1), t))
    assert len(w) == 2 and temporal_filter(w)[0, 0] == 1.5
    with pytest.raises(ConfigError):
        TemporalWindow(-1, 0)
