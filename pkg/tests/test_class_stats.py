import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangeseg.class_stats import (
    ClassStats,
    StatsAccumulator,
    accumulate_frame,
    finalize,
    long_tail_split,
    published_stats,
    stats_from_counts,
)
from rangeseg.errors import ConfigError, EmptyDatasetError
from rangeseg.kitti_io import PointCloud, load_class_config

from .conftest import labeled_frame


def test_accumulate_counts(classes):
    # car instances 1,1,2 ; road ; ignore
    sem = np.array([1, 1, 1, 9, 0])
    inst = np.array([1, 1, 2, 0, 0])
    acc = accumulate_frame(StatsAccumulator.empty(19), PointCloud(np.zeros((5, 4)), sem, inst), classes)
    assert acc.points[1] == 3 and acc.points[9] == 1 and acc.points[0] == 0
    assert acc.sem[1] == 1 and acc.ins[1] == 2
    assert acc.sem[9] == 1 and acc.ins[9] == 1
    assert acc.frames == 1


def test_hand_alpha(classes):
    f = np.zeros(20)
    f[1:] = 1 / 19
    s = stats_from_counts(f, np.ones(20, int), np.ones(20, int), classes)
    assert s.alpha[1] == pytest.approx(1 / (1 / 19 + 1e-3))
    assert np.allclose(s.w_sem[1:], 1.0)


def test_beta_forced_for_stuff(classes):
    s = published_stats(classes)
    assert s.beta[9] == 1.0
    assert s.beta[1] == pytest.approx(168431 / 17784)


def test_weights_normalized(classes):
    s = published_stats(classes)
    assert s.w_sem[1:].max() == 1.0 and s.w_pan[1:].max() == 1.0
    assert classes.names[int(np.argmax(s.w_sem))] == "motorcyclist"
    assert classes.names[int(np.argmax(s.w_pan))] == "bicycle"


def test_long_tail_threshold_edges(classes):
    s = published_stats(classes)
    assert not long_tail_split(s, 1.0, "semantic").any()
    assert long_tail_split(s, 0.0, "semantic")[1:].all()
    assert not long_tail_split(s, 0.0)[0]


def test_unknown_task(classes):
    with pytest.raises(ConfigError):
        published_stats(classes).weights("instance")


def test_finalize_empty(classes):
    with pytest.raises(EmptyDatasetError):
        finalize(StatsAccumulator.empty(19), classes)


def test_stats_document_round_trip(tmp_path, classes):
    s = published_stats(classes)
    s.save(tmp_path / "s.yaml")
    t = ClassStats.load(tmp_path / "s.yaml", classes)
    assert np.allclose(s.alpha, t.alpha) and np.allclose(s.w_pan, t.w_pan)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(0, 6))
def test_merge_associative(seed, cut1, cut2):
    cfg = load_class_config()
    rng = np.random.default_rng(seed)
    frames = [labeled_frame(rng, 200) for _ in range(6)]
    one = StatsAccumulator.empty(19)
    for fr in frames:
        one = accumulate_frame(one, fr, cfg)
    a, b = sorted((cut1, cut2))

    def shard(fs):
        acc = StatsAccumulator.empty(19)
        for fr in fs:
            acc = accumulate_frame(acc, fr, cfg)
        return acc

    x, y, z = shard(frames[:a]), shard(frames[a:b]), shard(frames[b:])
    assert x.merge(y).merge(z) == one
    assert x.merge(y.merge(z)) == one
