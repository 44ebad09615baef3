import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptcount.core import threshold_map
from promptcount.errors import ConfigError, EmptyExemplar, ShapeError
from promptcount.similarity import (
    background_mask,
    background_similarity,
    foreground_similarity,
    masked_embedding,
    mean_similarity,
    raw_similarity,
    similarity_set,
)

from .conftest import label_image, paint
from .oracles import eq4_loop, minmax

# literal-loop oracle output for C=1 features [[1,2],[3,4]] and mask [[1,1],[0,0]]
EQ4_RAW = [[1.5, 3.0], [4.5, 6.0]]
EQ4_NORM = [[0.0, 1 / 3], [2 / 3, 1.0]]


class TestMaskedEmbedding:
    def test_all_ones_is_identity(self):
        f = np.random.default_rng(0).normal(size=(3, 4, 5))
        m = masked_embedding(f, np.ones((4, 5), bool))
        np.testing.assert_array_equal(m.values, f)
        assert m.k == 20

    def test_elementwise(self):
        m = masked_embedding(np.array([[[2.0, 3.0], [4.0, 5.0]]]), [[1, 0], [0, 1]])
        np.testing.assert_array_equal(m.values, [[[2, 0], [0, 5]]])
        assert m.k == 2

    def test_empty_mask(self):
        with pytest.raises(EmptyExemplar):
            masked_embedding(np.ones((1, 2, 2)), np.zeros((2, 2), bool))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            masked_embedding(np.ones((1, 2, 2)), np.ones((3, 2), bool))


class TestForegroundSimilarity:
    def test_frozen_oracle_values(self):
        feats = [[[1.0, 2.0], [3.0, 4.0]]]
        mask = [[1, 1], [0, 0]]
        # the frozen values are what the oracle produces
        assert eq4_loop(feats, mask) == EQ4_RAW
        f = np.array(feats)
        me = masked_embedding(f, mask)
        np.testing.assert_allclose(raw_similarity(f, me), EQ4_RAW, atol=1e-12)
        np.testing.assert_allclose(foreground_similarity(f, me), EQ4_NORM, atol=1e-12)

    def test_uniform_features_give_zero_map(self):
        f = np.broadcast_to(np.array([0.3, -1.0, 2.0])[:, None, None], (3, 4, 4)).copy()
        me = masked_embedding(f, np.eye(4, dtype=bool))
        raw = raw_similarity(f, me)
        np.testing.assert_allclose(raw, np.full((4, 4), 0.09 + 1 + 4))
        assert (foreground_similarity(f, me) == 0).all()

    def test_mock_scene_is_indicator(self, mock):
        labels = paint((10, 12), [(1, 1, 1, 3, 3), (17, 6, 5, 9, 8), (2, 8, 0, 10, 2)])
        emb = mock.encode(label_image(labels))
        me = masked_embedding(emb, labels == 1)
        raw = raw_similarity(emb, me)
        oracle = np.array(eq4_loop(emb.values.tolist(), (labels == 1).astype(int).tolist()))
        np.testing.assert_array_equal(raw, oracle)
        # labels 1 and 17 share the one-hot feature, label 2 does not
        np.testing.assert_array_equal(raw, np.isin(labels, [1, 17]).astype(float))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_literal_loop(self, seed):
        rng = np.random.default_rng(seed)
        c, h, w = rng.integers(1, 4), rng.integers(1, 6), rng.integers(1, 6)
        f = rng.normal(size=(c, h, w))
        mask = rng.random((h, w)) < 0.5
        mask.flat[rng.integers(h * w)] = True
        raw = raw_similarity(f, masked_embedding(f, mask))
        oracle = eq4_loop(f.tolist(), mask.astype(int).tolist())
        np.testing.assert_allclose(raw, oracle, atol=1e-9)
        np.testing.assert_allclose(foreground_similarity(f, masked_embedding(f, mask)),
                                   minmax(oracle), atol=1e-9)


class TestMeanSimilarity:
    def test_single(self):
        m = np.array([[0.1, 0.7]])
        np.testing.assert_array_equal(mean_similarity([m]), m)

    def test_average(self):
        np.testing.assert_array_equal(mean_similarity([[[0, 1]], [[1, 0]]]), [[0.5, 0.5]])

    def test_copies(self):
        m = np.random.default_rng(2).random((3, 3))
        np.testing.assert_allclose(mean_similarity([m] * 5), m, atol=1e-15)

    def test_empty(self):
        with pytest.raises(ConfigError):
            mean_similarity([])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mean_similarity([np.zeros((2, 2)), np.zeros((2, 3))])


class TestBackground:
    def test_mask_polarity(self):
        np.testing.assert_array_equal(background_mask([[0.1, 0.9]], 0.35), [[True, False]])

    def test_zero_threshold_is_empty(self):
        assert not background_mask(np.random.default_rng(0).random((4, 4)), 0.0).any()

    def test_all_zero_map_is_all_background(self):
        assert background_mask(np.zeros((3, 3)), 0.35).all()

    def test_bad_threshold(self):
        with pytest.raises(ConfigError):
            background_mask(np.zeros((2, 2)), 1.2)

    def test_uniform_embedding(self):
        f = np.ones((2, 3, 3))
        bsim, empty = background_similarity(f, np.ones((3, 3), bool))
        assert (bsim == 0).all() and not empty

    def test_mock_background_indicator(self, mock):
        labels = paint((9, 9), [(1, 1, 1, 3, 3), (17, 5, 5, 7, 8)])
        emb = mock.encode(label_image(labels))
        bmask = labels == 0
        bsim, empty = background_similarity(emb, bmask)
        oracle = np.array(eq4_loop(emb.values.tolist(), bmask.astype(int).tolist()))
        np.testing.assert_array_equal(oracle, bmask.astype(float))
        np.testing.assert_array_equal(bsim, oracle)
        assert not empty

    def test_empty_background_flagged(self):
        bsim, empty = background_similarity(np.ones((1, 2, 2)), np.zeros((2, 2), bool))
        assert empty and (bsim == 0).all()

    @given(st.integers(0, 2**31 - 1), st.floats(0, 1))
    def test_complement_of_threshold(self, seed, t):
        m = np.random.default_rng(seed).random((5, 6))
        np.testing.assert_array_equal(background_mask(m, t), ~threshold_map(m, t))


def _random_case(rng):
    c, h, w = rng.integers(1, 6), rng.integers(2, 8), rng.integers(2, 8)
    f = rng.normal(size=(c, h, w))
    masks = []
    for _ in range(rng.integers(1, 5)):
        m = rng.random((h, w)) < 0.4
        m.flat[rng.integers(h * w)] = True
        masks.append(m)
    return f, masks


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    f, masks = _random_case(rng)
    perm = rng.permutation(len(masks))
    a = similarity_set(f, masks, 0.35)
    b = similarity_set(f, [masks[i] for i in perm], 0.35)
    for j, i in enumerate(perm):
        np.testing.assert_array_equal(b.fsims[j], a.fsims[i])
    np.testing.assert_allclose(mean_similarity(b.fsims), mean_similarity(a.fsims), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_scale_covariance(seed, s):
    rng = np.random.default_rng(seed)
    f, masks = _random_case(rng)
    me, me_s = masked_embedding(f, masks[0]), masked_embedding(s * f, masks[0])
    raw, raw_s = raw_similarity(f, me), raw_similarity(s * f, me_s)
    np.testing.assert_allclose(raw_s, s * s * raw, rtol=1e-9, atol=1e-9 * s * s)
    norm, norm_s = foreground_similarity(f, me), foreground_similarity(s * f, me_s)
    np.testing.assert_allclose(norm_s, norm, atol=1e-7)
    # the argmax cell survives scaling (up to exact or rounding-level ties)
    assert raw.flat[np.argmax(raw_s)] >= raw.max() - 1e-9 * max(1.0, abs(raw.max()))
