import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rangeseg.errors import FixtureError, ShapeError
from rangeseg.head import (
    bilinear_upsample,
    decoder_forward,
    deep_a_predictions,
    deep_b_logits,
    dupsample,
    fid_decode,
    forward,
    init_params,
    load_params,
    panoptic_inference,
    predict_masks,
    save_params,
    semantic_inference,
)
from rangeseg.head.attention import attention_weights
from rangeseg.head.model import check_params
from rangeseg.head.pixel_decoder import pixel_shuffle, pixel_unshuffle
from rangeseg.losses import sigmoid, softmax

from .conftest import small_head_config


@pytest.fixture(scope="module")
def head():
    cfg = small_head_config()
    return cfg, init_params(cfg, np.random.default_rng(0))


def test_attention_rows_sum_to_one(rng):
    a = attention_weights(rng.normal(size=(5, 16)), rng.normal(size=(7, 16)), 4)
    assert a.shape == (4, 5, 7)
    assert np.allclose(a.sum(-1), 1.0)


def test_bilinear_ramp():
    # linear ramp along width: interior samples stay on the line
    x = np.arange(4, dtype=float)[None, None, :].repeat(2, axis=1)
    up = bilinear_upsample(x, 2)
    assert up.shape == (1, 4, 8)
    want = np.clip((np.arange(8) + 0.5) / 2 - 0.5, 0, 3)
    assert np.allclose(up[0, 0], want)
    assert np.array_equal(bilinear_upsample(x, 1), x)


def test_bilinear_constant(rng):
    x = np.full((3, 2, 5), 2.5)
    assert np.allclose(bilinear_upsample(x, 4), 2.5)


def test_dupsample_index_oracle(rng):
    c, cp, s, h, w = 3, 2, 2, 3, 4
    feat = rng.normal(size=(c, h, w))
    weight = rng.normal(size=(cp * s * s, c))
    out = dupsample(feat, weight, s)
    assert out.shape == (cp, h * s, w * s)
    for o in range(cp):
        for y in range(h * s):
            for x in range(w * s):
                ch = o * s * s + (y % s) * s + (x % s)
                assert out[o, y, x] == pytest.approx(weight[ch] @ feat[:, y // s, x // s])


def test_pixel_shuffle_inverse(rng):
    x = rng.normal(size=(8, 3, 5))
    assert np.array_equal(pixel_unshuffle(pixel_shuffle(x, 2), 2), x)


def test_predict_masks_loop(rng):
    e = rng.normal(size=(3, 4))
    p = rng.normal(size=(4, 2, 3))
    m = predict_masks(e, p)
    for q in range(3):
        for y in range(2):
            for x in range(3):
                assert m[q, y, x] == pytest.approx(sum(e[q, c] * p[c, y, x] for c in range(4)))
    with pytest.raises(ShapeError):
        predict_masks(e, p[:3])


def semantic_oracle(cls_logits, mask_logits):
    q, kp1 = cls_logits.shape
    _, h, w = mask_logits.shape
    probs = softmax(cls_logits)
    out = np.zeros((h, w), int)
    for y in range(h):
        for x in range(w):
            scores = [sum(probs[i, c] * sigmoid(mask_logits[i, y, x]) for i in range(q)) for c in range(kp1 - 1)]
            out[y, x] = int(np.argmax(scores))
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_semantic_inference_oracle(seed):
    rng = np.random.default_rng(seed)
    q, k = int(rng.integers(1, 5)), int(rng.integers(1, 4))
    cl = rng.normal(size=(q, k + 1))
    ml = rng.normal(size=(q, 4, 4))
    assert np.array_equal(semantic_inference(cl, ml), semantic_oracle(cl, ml))


def test_semantic_permutation_invariant(rng):
    cl, ml = rng.normal(size=(5, 4)), rng.normal(size=(5, 3, 3))
    perm = rng.permutation(5)
    assert np.array_equal(semantic_inference(cl, ml), semantic_inference(cl[perm], ml[perm]))


def test_decoder_permutation_equivariant(head, rng):
    cfg, params = head
    d = cfg.decoder
    x = rng.normal(size=(d.num_queries, d.embed_dim))
    mem = rng.normal(size=(12, cfg.feat_channels))
    perm = rng.permutation(d.num_queries)
    a = decoder_forward(x, mem, d, params)
    b = decoder_forward(x[perm], mem, d, params)
    assert np.allclose(a.class_logits[perm], b.class_logits)
    assert np.allclose(a.mask_embeddings[perm], b.mask_embeddings)


def test_deep_supervision_counts(head, rng):
    cfg, params = head
    tensor = rng.normal(size=(16, 32, 5))
    out = forward(tensor, params, cfg, deep_a=True)
    assert len(out.pixel.taps) == 3
    aux = deep_b_logits(out.pixel, params)
    assert len(aux) == 3 and all(a.shape == (16, 32, cfg.num_classes) for a in aux)
    preds = deep_a_predictions(out.queries, out.pixel.final)
    assert len(preds) == cfg.decoder.num_layers
    assert out.mask_logits.shape == (cfg.decoder.num_queries, 16, 32)
    assert out.queries.class_logits.shape == (cfg.decoder.num_queries, cfg.num_classes + 1)


def test_fid_linear_without_activation(rng):
    cfg = small_head_config(upsample="interpolation")
    params = init_params(cfg, rng)
    f = cfg.feat_channels
    feats = [rng.normal(size=(f, 8 // s, 16 // s)) for s in (1, 1, 2, 4, 8)]
    other = [rng.normal(size=x.shape) for x in feats]
    a = fid_decode(feats, params, "interpolation", activation=False).final
    b = fid_decode(other, params, "interpolation", activation=False).final
    c = fid_decode([x + y for x, y in zip(feats, other)], params, "interpolation", activation=False).final
    assert np.allclose(a + b, c)
    with pytest.raises(ShapeError):
        fid_decode(feats[:4], params)


def test_forward_requires_multiple_of_8(head):
    cfg, params = head
    with pytest.raises(FixtureError):
        forward(np.zeros((12, 32, 5)), params, cfg)


def test_fixture_round_trip(tmp_path, head):
    cfg, params = head
    save_params(tmp_path / "p.rspt", params)
    back = load_params(tmp_path / "p.rspt")
    assert back.keys() == params.keys()
    assert all(np.array_equal(back[k], params[k]) for k in params)
    check_params(back, cfg)


def test_fixture_errors(tmp_path, head):
    cfg, params = head
    (tmp_path / "junk").write_bytes(b"nope")
    with pytest.raises(FixtureError):
        load_params(tmp_path / "junk")
    save_params(tmp_path / "p.rspt", params)
    data = (tmp_path / "p.rspt").read_bytes()
    (tmp_path / "t.rspt").write_bytes(data[:-10])
    with pytest.raises(FixtureError):
        load_params(tmp_path / "t.rspt")
    bad = dict(params)
    bad["decoder.query_feat"] = bad["decoder.query_feat"][:, :3]
    with pytest.raises(FixtureError, match="query_feat"):
        check_params(bad, cfg)


# -- panoptic merge, hand-traced on 3x3 ---------------------------------------

BIG = 10.0
THING = np.array([True, False])  # column 0 thing, column 1 stuff


def _cls(col, ncols=3):
    z = np.full(ncols, -BIG)
    z[col] = BIG
    return z


def _mask(rows):
    return np.where(np.array(rows, bool), BIG, -BIG)


def test_panoptic_two_things():
    cl = np.stack([_cls(0), _cls(0)])
    ml = np.stack([_mask([[1, 1, 0], [1, 1, 0], [0, 0, 0]]), _mask([[0, 0, 0], [0, 0, 1], [0, 1, 1]])])
    pan = panoptic_inference(cl, ml, THING)
    assert [s["id"] for s in pan.segment_info] == [1, 2]
    assert pan.segments.tolist() == [[1, 1, 0], [1, 1, 2], [0, 2, 2]]
    assert pan.classes[2, 0] == -1
    assert len(np.unique(pan.segments[pan.segments > 0])) == 2


def test_panoptic_stuff_merges_by_class():
    cl = np.stack([_cls(1), _cls(1)])
    ml = np.stack([_mask([[1, 1, 1], [0, 0, 0], [0, 0, 0]]), _mask([[0, 0, 0], [1, 1, 1], [0, 0, 0]])])
    pan = panoptic_inference(cl, ml, THING)
    assert len(pan.segment_info) == 1 and pan.segment_info[0]["queries"] == [0, 1]
    assert pan.segments.tolist() == [[1, 1, 1], [1, 1, 1], [0, 0, 0]]
    assert (pan.instance_ids() == 0).all()


def test_panoptic_discards_occluded_query():
    # query 1 covers 4 pixels but is beaten on 3 of them by the stronger query 0
    cl = np.stack([_cls(0), np.array([0.0, -BIG, -BIG]) + _cls(0) * 0.2])
    strong = _mask([[1, 1, 1], [1, 1, 1], [0, 0, 0]])
    weak = np.where(np.array([[0, 1, 1], [0, 0, 1], [0, 0, 1]], bool), 1.0, -BIG)
    pan = panoptic_inference(cl, np.stack([strong, weak]), THING, object_threshold=0.5)
    assert [s["queries"] for s in pan.segment_info] == [[0]]
    assert pan.segments.tolist() == [[1, 1, 1], [1, 1, 1], [0, 0, 0]]


def test_panoptic_drops_no_object_and_low_score():
    cl = np.stack([_cls(2), np.zeros(3)])
    ml = np.stack([_mask(np.ones((3, 3))), _mask(np.ones((3, 3)))])
    pan = panoptic_inference(cl, ml, THING)
    assert pan.segment_info == [] and (pan.classes == -1).all() and (pan.segments == 0).all()
