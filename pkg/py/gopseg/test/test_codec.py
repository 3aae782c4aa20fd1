"""
Test block motion search, compensation and GoP encoding.
"""
import unittest

import numpy as np

from gopseg.utils import ShapeError, DataError

from gopseg.codec import (PFrame, GoP, search_order, block_motion_search,
                          motion_compensate, encode_clip, reconstruct_pframe,
                          decode_frames)

from gopseg.synthetic import GenConfig, generate_synthetic_clip

from .simulate import sim_gen_config, sim_raw_frames


def brute_force_search(ref, cur, block, radius):
    h, w = cur.shape[:2]
    cands = sorted([(dy, dx) for dy in range(-radius, radius + 1)
                    for dx in range(-radius, radius + 1)],
                   key=lambda d: (abs(d[0]) + abs(d[1]), d[0], d[1]))
    out = np.zeros((h // block, w // block, 2), dtype=np.int64)
    for by in range(h // block):
        for bx in range(w // block):
            best = None
            for dy, dx in cands:
                sad = 0
                for y in range(by * block, (by + 1) * block):
                    for x in range(bx * block, (bx + 1) * block):
                        ry = min(max(y + dy, 0), h - 1)
                        rx = min(max(x + dx, 0), w - 1)
                        sad += abs(int(cur[y, x]) - int(ref[ry, rx]))
                if best is None or sad < best:
                    best = sad
                    out[by, bx] = (dy, dx)
    return out


class TestCodec(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(2024)

    def tearDown(self):
        pass

    def test_search_order(self):
        order = search_order(1)
        self.assertEqual(len(order), 9)
        self.assertEqual(order[0], (0, 0))
        self.assertEqual(order[1:5], [(-1, 0), (0, -1), (0, 1), (1, 0)])

    def test_zero_motion(self):
        img = self.rng.integers(0, 256, size=(32, 32, 3)).astype(np.uint8)
        motion = block_motion_search(img, img, 8, 3)
        self.assertEqual(motion.shape, (4, 4, 2))
        self.assertTrue(np.all(motion == 0))

    def test_translation(self):
        ref = self.rng.integers(0, 256, size=(32, 32, 3)).astype(np.uint8)
        h, w = ref.shape[:2]
        ys = np.clip(np.arange(h) + 2, 0, h - 1)
        xs = np.clip(np.arange(w) + 3, 0, w - 1)
        cur = ref[ys][:, xs]
        motion = block_motion_search(ref, cur, 8, 4)
        # Blocks away from the bottom and right borders see a pure shift.
        interior = motion[:-1, :-1].reshape(-1, 2)
        self.assertTrue(np.all(interior == (2, 3)))

    def test_brute_force(self):
        for trial in range(3):
            # Few gray levels so that ties between candidates are common.
            ref = self.rng.integers(0, 3, size=(16, 16)).astype(np.uint8)
            cur = self.rng.integers(0, 3, size=(16, 16)).astype(np.uint8)
            fast = block_motion_search(ref, cur, 4, 2)
            slow = brute_force_search(ref, cur, 4, 2)
            np.testing.assert_array_equal(fast, slow)

    def test_search_errors(self):
        img = np.zeros((20, 16, 3), dtype=np.uint8)
        with self.assertRaises(ShapeError):
            block_motion_search(img, img, 8, 1)
        with self.assertRaises(ShapeError):
            block_motion_search(img, img[:16], 8, 1)

    def test_compensate(self):
        iframe = self.rng.integers(0, 256, size=(16, 24, 3)).astype(np.uint8)
        zero = np.zeros((2, 3, 2), dtype=np.int16)
        np.testing.assert_array_equal(motion_compensate(iframe, zero, 8),
                                      iframe)

        right = np.zeros((2, 3, 2), dtype=np.int16)
        right[..., 1] = 8
        pred = motion_compensate(iframe, right, 8)
        np.testing.assert_array_equal(pred[:, :-8], iframe[:, 8:])
        for x in range(16, 24):
            np.testing.assert_array_equal(pred[:, x], iframe[:, -1])

        motion = self.rng.integers(-3, 4, size=(2, 3, 2)).astype(np.int16)
        pred = motion_compensate(iframe, motion, 8)
        for y in range(16):
            for x in range(24):
                dy, dx = motion[y // 8, x // 8]
                sy = min(max(y + dy, 0), 15)
                sx = min(max(x + dx, 0), 23)
                np.testing.assert_array_equal(pred[y, x], iframe[sy, sx])

        with self.assertRaises(ShapeError):
            motion_compensate(iframe, np.zeros((3, 3, 2)), 8)

    def test_static_clip(self):
        frame = self.rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8)
        frames = np.stack([frame] * 6)
        gops = encode_clip(frames, 2, 8, 2)
        self.assertEqual(len(gops), 2)
        for g in gops:
            self.assertEqual(g.K, 2)
            self.assertEqual(g.n_frames, 3)
            for pf in g.pframes:
                self.assertTrue(np.all(pf.motion == 0))
                self.assertTrue(np.all(pf.residual == 0))
                self.assertEqual(pf.block, 8)
                self.assertEqual(pf.motion_field().shape, (16, 16, 2))

        with self.assertRaises(ShapeError):
            encode_clip(frames[:5], 2, 8, 2)

    def test_reconstruct(self):
        iframe = self.rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8)
        pf = PFrame(np.zeros((2, 2, 2)), np.zeros((16, 16, 3)))
        gop = GoP(iframe, [pf])
        np.testing.assert_array_equal(reconstruct_pframe(gop, 1), iframe)
        with self.assertRaises(DataError):
            reconstruct_pframe(gop, 0)
        with self.assertRaises(DataError):
            reconstruct_pframe(gop, 2)

    def test_round_trip(self):
        cfg = sim_gen_config()
        for seed in range(50):
            sample = generate_synthetic_clip(seed, cfg)
            raw = sim_raw_frames(seed, cfg)
            np.testing.assert_array_equal(decode_frames(sample.gops), raw)

        cfg = GenConfig()
        for seed in range(3):
            sample = generate_synthetic_clip(seed, cfg)
            raw = sim_raw_frames(seed, cfg)
            self.assertEqual(raw.shape, (8, 64, 64, 3))
            for t, g in enumerate(sample.gops):
                for k in range(1, g.K + 1):
                    np.testing.assert_array_equal(
                        reconstruct_pframe(g, k), raw[t * (g.K + 1) + k])

    def test_residual_energy(self):
        cfg = GenConfig()
        res_total = 0
        diff_total = 0
        for seed in range(5):
            sample = generate_synthetic_clip(seed, cfg)
            raw = sim_raw_frames(seed, cfg).astype(np.int64)
            for t, g in enumerate(sample.gops):
                base = t * (g.K + 1)
                for k, pf in enumerate(g.pframes, start=1):
                    res = int(np.abs(pf.residual).sum())
                    diff = int(np.abs(raw[base + k] - raw[base]).sum())
                    self.assertLessEqual(res, diff)
                    res_total += res
                    diff_total += diff
        self.assertLess(res_total, diff_total)


def test_suite():
    """Allows testing of only this module with the command::

        python setup.py test -m <modulename>
    """
    return unittest.defaultTestLoader.loadTestsFromName(__name__)
