import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from distill_inpaint.masking import (TABLE_BUCKETS, TRAIN_BUCKETS, apply_mask, build_mask_pyramid,
                                     generate_irregular_mask, load_mask_pgm, mask_ratio, save_mask_pgm)
from distill_inpaint.tensor import ShapeError


class TestGenerator:
    @pytest.mark.parametrize("bucket", TABLE_BUCKETS)
    def test_ratio_in_bucket_over_100_seeds(self, bucket):
        for seed in range(100):
            r = mask_ratio(generate_irregular_mask(seed, 32, 32, bucket))
            assert bucket[0] <= r <= bucket[1], (seed, r)

    @pytest.mark.parametrize("bucket", TRAIN_BUCKETS)
    def test_training_buckets(self, bucket):
        for seed in range(10):
            r = mask_ratio(generate_irregular_mask([7, seed], 32, 32, bucket))
            assert bucket[0] <= r <= bucket[1]

    def test_deterministic(self):
        a = generate_irregular_mask(5, 32, 48, (0.3, 0.4))
        b = generate_irregular_mask(5, 32, 48, (0.3, 0.4))
        np.testing.assert_array_equal(a, b)
        assert a.dtype == np.uint8 and set(np.unique(a)) <= {0, 1}

    def test_seeds_differ(self):
        assert not np.array_equal(generate_irregular_mask(1, 32, 32), generate_irregular_mask(2, 32, 32))

    @pytest.mark.parametrize("bucket", [(0.2, 0.1), (0.5, 0.7), (-0.1, 0.1)])
    def test_infeasible_bucket(self, bucket):
        with pytest.raises(ValueError):
            generate_irregular_mask(0, 32, 32, bucket)


class TestRatio:
    def test_counts(self):
        m = np.zeros((8, 8), np.uint8)
        assert mask_ratio(m) == 0.0
        m.reshape(-1)[:16] = 1
        assert mask_ratio(m) == 0.25
        assert mask_ratio(np.ones((8, 8))) == 1.0


class TestPyramid:
    def test_all_ones_and_zeros(self):
        for v in (0, 1):
            pyr = build_mask_pyramid(np.full((16, 16), v, np.uint8), 3)
            assert [lv.shape for lv in pyr.levels] == [(8, 8), (4, 4), (2, 2)]
            assert all(np.all(lv == v) for lv in pyr.levels)

    def test_single_hole(self):
        m = np.zeros((4, 4), np.uint8)
        m[2, 1] = 1
        pyr = build_mask_pyramid(m, 2)
        np.testing.assert_array_equal(pyr[0], [[0, 0], [1, 0]])
        np.testing.assert_array_equal(pyr[1], [[1]])

    def test_not_divisible(self):
        with pytest.raises(ValueError):
            build_mask_pyramid(np.zeros((12, 12)), 3)

    def test_batched(self):
        m = np.zeros((3, 8, 8), np.uint8)
        m[1, 0, 0] = 1
        pyr = build_mask_pyramid(m, 2)
        assert pyr[1].shape == (3, 2, 2)
        assert pyr[1].sum() == 1 and pyr[1][1, 0, 0] == 1

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.uint8, (16, 16), elements=st.integers(0, 1)), st.integers(1, 4))
    def test_max_pool_property(self, m, levels):
        pyr = build_mask_pyramid(m, levels)
        prev = m
        for lv in pyr.levels:
            h, w = lv.shape
            for i in range(h):
                for j in range(w):
                    assert lv[i, j] == prev[2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
            prev = lv


class TestApplyMask:
    def test_zero_and_full(self, rng):
        img = rng.random((3, 4, 4)).astype(np.float32)
        np.testing.assert_array_equal(apply_mask(img, np.zeros((4, 4))).data, img)
        np.testing.assert_array_equal(apply_mask(img, np.ones((4, 4))).data, 0)

    def test_checkerboard_fill(self, rng):
        img = rng.random((3, 4, 4)).astype(np.float32)
        m = (np.add.outer(np.arange(4), np.arange(4)) % 2).astype(np.uint8)
        out = apply_mask(img, m, fill=1.0).data
        want = np.where(m[None] == 1, 1.0, img)
        np.testing.assert_array_equal(out, want)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.uint8, (6, 6), elements=st.integers(0, 1)), st.floats(0, 1))
    def test_idempotent(self, m, fill):
        img = np.linspace(0, 1, 3 * 36, dtype=np.float32).reshape(3, 6, 6)
        once = apply_mask(img, m, fill).data
        np.testing.assert_array_equal(apply_mask(once, m, fill).data, once)

    def test_size_mismatch(self):
        with pytest.raises(ShapeError):
            apply_mask(np.zeros((3, 4, 4), np.float32), np.zeros((5, 4)))


class TestPgm:
    def test_round_trip(self, tmp_path):
        m = generate_irregular_mask(3, 32, 32, (0.3, 0.4))
        save_mask_pgm(tmp_path / "m.pgm", m)
        np.testing.assert_array_equal(load_mask_pgm(tmp_path / "m.pgm"), m)

    def test_threshold(self, tmp_path):
        from distill_inpaint import netpbm
        netpbm.write(tmp_path / "g.pgm", np.array([[0, 127, 128, 255]], np.uint8))
        np.testing.assert_array_equal(load_mask_pgm(tmp_path / "g.pgm"), [[0, 0, 1, 1]])
