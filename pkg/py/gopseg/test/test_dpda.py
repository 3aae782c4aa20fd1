"""
Test the dual-path dual-attention fusion.
"""
import unittest

import numpy as np

from gopseg.utils import ShapeError

from gopseg.numerics import (Tensor, get_default_dtype, set_default_dtype,
                             tsum, mul, backward, gradient_check)

from gopseg.encoders import FeaturePyramid

from gopseg.dpda import (DenseBlock, DualAttentionPath, fuse_paths,
                         TemporalStage, frame_order, DualPathDualAttention)


def _random_pyramid(rng, n, widths, hw, same_rows=False):
    levels = list()
    for c, scale in zip((widths[2], widths[1], widths[0]), (16, 8, 4)):
        shape = (1 if same_rows else n, c, hw // scale, hw // scale)
        arr = rng.standard_normal(shape)
        if same_rows:
            arr = np.repeat(arr, n, axis=0)
        levels.append(Tensor(arr))
    return FeaturePyramid(*levels)


def _slice_pyramid(pyr, sl):
    return FeaturePyramid(*[Tensor(lev.data[sl]) for lev in pyr.levels()])


class TestDpda(unittest.TestCase):

    def setUp(self):
        self.old_dtype = get_default_dtype()
        set_default_dtype(np.float64)
        self.rng = np.random.default_rng(99)

    def tearDown(self):
        set_default_dtype(self.old_dtype)

    def test_dense_block(self):
        block = DenseBlock(6, 5, np.random.default_rng(0), growth=8)
        self.assertEqual(block.layer_inputs(), [6, 14, 22, 30])
        self.assertEqual(block.project.weight.shape, (5, 38, 1, 1))
        out = block(Tensor(self.rng.standard_normal((6, 4, 4))))
        self.assertEqual(out.shape, (5, 4, 4))
        out = block(Tensor(self.rng.standard_normal((3, 6, 4, 4))))
        self.assertEqual(out.shape, (3, 5, 4, 4))
        with self.assertRaises(ShapeError):
            block(Tensor(np.zeros((5, 4, 4))))

    def test_path_gates(self):
        path = DualAttentionPath(4, 3, 2, np.random.default_rng(1), growth=4)
        x_i = Tensor(self.rng.standard_normal((2, 4, 4, 4)))
        x_p = Tensor(self.rng.standard_normal((2, 3, 4, 4)))
        raw = Tensor(self.rng.standard_normal((2, 2, 4, 4)))
        out, att_c, att_s = path(x_i, x_p, raw, return_gates=True)
        self.assertEqual(out.shape, (2, 3, 4, 4))
        self.assertEqual(att_c.shape, (2, 3))
        self.assertEqual(att_s.shape, (2, 4, 4))
        np.testing.assert_allclose(att_c.data.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(att_s.data.sum(axis=(1, 2)), 1.0,
                                   atol=1e-12)
        self.assertTrue(np.all(att_c.data >= 0.0))
        self.assertTrue(np.all(att_s.data >= 0.0))

        y = path.fuse_modality_pair(path.project_i(x_i), x_p, raw)
        self.assertEqual(y.shape, (2, 3, 4, 4))
        with self.assertRaises(ShapeError):
            path.fuse_modality_pair(path.project_i(x_i), x_p,
                                    Tensor(np.zeros((2, 2, 2, 2))))

    def test_uniform_gates(self):
        path = DualAttentionPath(4, 3, 2, np.random.default_rng(2), growth=4)

        # A spatially constant map gives uniform spatial attention for any
        # weights.
        y = Tensor(np.broadcast_to(self.rng.standard_normal((3, 1, 1)),
                                   (3, 5, 5)).copy())
        att = path.spatial_attention(y)
        np.testing.assert_allclose(att.data, 1.0 / 25.0, rtol=1e-10)

        # With a neutral channel map the channel attention is uniform.
        path.channel.weight.data[...] = 0.0
        path.channel.bias.data[...] = 0.0
        att = path.channel_attention(Tensor(np.full((3, 5, 5), 0.7)))
        np.testing.assert_allclose(att.data, 1.0 / 3.0, rtol=1e-12)

        # Both gates uniform: the output is the projected I-frame plus x_p.
        path.spatial.weight.data[...] = 0.0
        path.spatial.bias.data[...] = 0.0
        x_i = Tensor(self.rng.standard_normal((4, 4, 4)))
        x_p = Tensor(self.rng.standard_normal((3, 4, 4)))
        raw = Tensor(self.rng.standard_normal((2, 4, 4)))
        out = path(x_i, x_p, raw)
        np.testing.assert_allclose(
            out.data, path.project_i(x_i).data + x_p.data, rtol=1e-10,
            atol=1e-12)

        # Without the I-frame projection the path passes x_p through.
        path.project_i.weight.data[...] = 0.0
        path.project_i.bias.data[...] = 0.0
        out = path(x_i, x_p, raw)
        np.testing.assert_array_equal(out.data, x_p.data)

    def test_fuse_paths(self):
        f_m = Tensor(self.rng.standard_normal((2, 3, 4, 4)))
        f_r = Tensor(self.rng.standard_normal((2, 3, 4, 4)))
        zero = Tensor(np.zeros((2, 3, 4, 4)))
        np.testing.assert_array_equal(fuse_paths(f_m, zero).data, f_m.data)
        np.testing.assert_array_equal(fuse_paths(f_m, f_r).data,
                                      fuse_paths(f_r, f_m).data)
        with self.assertRaises(ShapeError):
            fuse_paths(f_m, Tensor(np.zeros((2, 3, 2, 2))))

        a = Tensor(f_m.data.copy(), requires_grad=True)
        b = Tensor(f_r.data.copy(), requires_grad=True)
        backward(tsum(fuse_paths(a, b)))
        np.testing.assert_array_equal(a.grad, 1.0)
        np.testing.assert_array_equal(b.grad, 1.0)

    def test_path_gradient(self):
        path = DualAttentionPath(3, 2, 2, np.random.default_rng(3), growth=2)
        x_i, x_p, raw = [Tensor(self.rng.standard_normal(s), requires_grad=True)
                         for s in ((2, 3, 4, 4), (2, 2, 4, 4), (2, 2, 4, 4))]
        r = self.rng.standard_normal((2, 2, 4, 4))

        def fn():
            return tsum(mul(path(x_i, x_p, raw), r))

        leaves = [x_i, x_p, raw, path.channel.weight, path.spatial.weight,
                  path.dense.layers[0].weight, path.project_i.weight]
        err = gradient_check(fn, leaves, max_entries=4)
        self.assertLessEqual(err, 1.0e-4)

    def test_temporal(self):
        stage = TemporalStage(4, np.random.default_rng(4))
        self.assertEqual(stage.extents(6), [6, 3, 2, 1, 1])
        self.assertEqual(stage.extents(8), [8, 4, 2, 1, 1])
        self.assertEqual(stage.extents(36), [36, 18, 9, 5, 3])

        frames = Tensor(self.rng.standard_normal((6, 4, 3, 3)))
        clip = stage(frames)
        self.assertEqual(clip.shape, (4, 3, 3))

        # A temporally constant clip has the features of a single frame.
        one = self.rng.standard_normal((1, 4, 3, 3))
        const = stage(Tensor(np.repeat(one, 6, axis=0)))
        np.testing.assert_allclose(const.data, stage(Tensor(one)).data,
                                   rtol=1e-10, atol=1e-12)

        small = TemporalStage(2, np.random.default_rng(5))
        x = Tensor(self.rng.standard_normal((3, 2, 2, 2)), requires_grad=True)
        r = self.rng.standard_normal((2, 2, 2))
        err = gradient_check(lambda: tsum(mul(small(x), r)),
                             [x, small.layers[0].weight, small.layers[3].bias])
        self.assertLessEqual(err, 1.0e-4)

    def test_frame_order(self):
        np.testing.assert_array_equal(frame_order(2, 3),
                                      [0, 2, 3, 4, 1, 5, 6, 7])
        np.testing.assert_array_equal(frame_order(1, 2), [0, 1, 2])

    def _desk_inputs(self, n_gops, gop_size, zero_p=False):
        hw = 64
        n_p = n_gops * gop_size
        ipyr = _random_pyramid(self.rng, n_gops, (32, 64, 128), hw)
        mpyr = _random_pyramid(self.rng, n_p, (16, 32, 64), hw,
                               same_rows=zero_p)
        rpyr = _random_pyramid(self.rng, n_p, (16, 32, 64), hw,
                               same_rows=zero_p)
        if zero_p:
            raw_m = np.zeros((n_p, 2, hw, hw))
            raw_r = np.zeros((n_p, 3, hw, hw))
        else:
            raw_m = self.rng.standard_normal((n_p, 2, hw, hw))
            raw_r = self.rng.standard_normal((n_p, 3, hw, hw))
        return ipyr, mpyr, rpyr, raw_m, raw_r

    def test_clip_shapes(self):
        dpda = DualPathDualAttention((32, 64, 128), (16, 32, 64),
                                     np.random.default_rng(6))
        self.assertEqual(dpda.c_v, 128)
        ipyr, mpyr, rpyr, raw_m, raw_r = self._desk_inputs(2, 3)
        out = dpda(ipyr, mpyr, rpyr, raw_m, raw_r, 2, 3)
        self.assertEqual(out.per_frame.shape, (8, 256, 4, 4))
        self.assertEqual(out.frames.shape, (8, 128, 4, 4))
        self.assertEqual(out.mid.shape, (8, 64, 8, 8))
        self.assertEqual(out.large.shape, (8, 32, 16, 16))
        self.assertEqual(out.clip.shape, (128, 4, 4))
        for f in range(8):
            np.testing.assert_array_equal(out.per_frame.data[f, 128:],
                                          out.clip.data)

        with self.assertRaises(ShapeError):
            dpda(ipyr, mpyr, rpyr, raw_m, raw_r, 2, 2)

    def test_static_gop(self):
        # Identical P-frame inputs within each GoP give identical features.
        dpda = DualPathDualAttention((8, 8, 8), (4, 4, 4),
                                     np.random.default_rng(7), growth=4)
        ipyr, mpyr, rpyr, raw_m, raw_r = self._desk_inputs(2, 3, zero_p=True)
        ipyr = FeaturePyramid(*[Tensor(lev.data[:, :8]) for lev in
                                ipyr.levels()])
        mpyr = FeaturePyramid(*[Tensor(lev.data[:, :4]) for lev in
                                mpyr.levels()])
        rpyr = FeaturePyramid(*[Tensor(lev.data[:, :4]) for lev in
                                rpyr.levels()])
        out = dpda(ipyr, mpyr, rpyr, raw_m, raw_r, 2, 3)
        for first in (1, 5):
            for f in range(first + 1, first + 3):
                np.testing.assert_allclose(out.frames.data[f],
                                           out.frames.data[first],
                                           rtol=1e-10, atol=1e-12)
                np.testing.assert_allclose(out.large.data[f],
                                           out.large.data[first],
                                           rtol=1e-10, atol=1e-12)
        self.assertFalse(np.allclose(out.frames.data[1], out.frames.data[5]))

    def test_gop_isolation(self):
        # Frame features of a GoP depend only on that GoP.
        dpda = DualPathDualAttention((8, 8, 8), (4, 4, 4),
                                     np.random.default_rng(8), growth=4)
        hw = 32
        ipyr = _random_pyramid(self.rng, 2, (8, 8, 8), hw)
        mpyr = _random_pyramid(self.rng, 4, (4, 4, 4), hw)
        rpyr = _random_pyramid(self.rng, 4, (4, 4, 4), hw)
        raw_m = self.rng.standard_normal((4, 2, hw, hw))
        raw_r = self.rng.standard_normal((4, 3, hw, hw))
        full = dpda(ipyr, mpyr, rpyr, raw_m, raw_r, 2, 2)
        for g in range(2):
            part = dpda(_slice_pyramid(ipyr, slice(g, g + 1)),
                        _slice_pyramid(mpyr, slice(2 * g, 2 * g + 2)),
                        _slice_pyramid(rpyr, slice(2 * g, 2 * g + 2)),
                        raw_m[2 * g:2 * g + 2], raw_r[2 * g:2 * g + 2], 1, 2)
            for lev in ("frames", "mid", "large"):
                np.testing.assert_allclose(
                    getattr(part, lev).data,
                    getattr(full, lev).data[3 * g:3 * g + 3],
                    rtol=1e-10, atol=1e-12)


def test_suite():
    """Allows testing of only this module with the command::

        python setup.py test -m <modulename>
    """
    return unittest.defaultTestLoader.loadTestsFromName(__name__)
