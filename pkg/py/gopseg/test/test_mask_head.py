"""
Test mask generation, query assignment and the losses.
"""
import unittest

import numpy as np

from gopseg.utils import ShapeError

from gopseg.numerics import (Tensor, get_default_dtype, set_default_dtype,
                             tsum, mul, add, backward, log_softmax,
                             gradient_check)

from gopseg.mask_head import (KernelSet, KernelGenerator, generate_kernels,
                              coarse_masks, MatchingHead, matching_scores,
                              binary_iou_table, assign_best_query, loss_lr,
                              dice_loss, loss_hr, total_loss, MaskRefiner,
                              select_coarse, refine_masks, inference_select)


def _bce(x, t):
    return np.logaddexp(0.0, -x) * t + np.logaddexp(0.0, x) * (1.0 - t)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestMaskHead(unittest.TestCase):

    def setUp(self):
        self.old_dtype = get_default_dtype()
        set_default_dtype(np.float64)
        self.rng = np.random.default_rng(77)

    def tearDown(self):
        set_default_dtype(self.old_dtype)

    def _refiner_inputs(self, requires_grad=False):
        shapes = [(2, 1, 2, 2), (2, 4, 2, 2), (2, 3, 4, 4), (2, 2, 8, 8)]
        return [Tensor(self.rng.standard_normal(s),
                       requires_grad=requires_grad) for s in shapes]

    def test_kernels(self):
        gen = KernelGenerator(8, np.random.default_rng(0))
        f_q = Tensor(self.rng.standard_normal((3, 8)))
        ks = generate_kernels(gen, f_q)
        self.assertEqual(ks.weights.shape, (3, 8))
        self.assertEqual(ks.biases.shape, (3,))

        same = Tensor(np.tile(self.rng.standard_normal((1, 8)), (3, 1)))
        ks = gen(same)
        np.testing.assert_allclose(ks.weights.data[1], ks.weights.data[0],
                                   rtol=1e-12)
        np.testing.assert_allclose(ks.biases.data[2], ks.biases.data[0],
                                   rtol=1e-12)

        f_q = Tensor(self.rng.standard_normal((3, 8)), requires_grad=True)
        f_lv = Tensor(self.rng.standard_normal((2, 8, 2, 2)),
                      requires_grad=True)
        r = self.rng.standard_normal((3, 2, 2, 2))
        err = gradient_check(
            lambda: tsum(mul(coarse_masks(gen(f_q), f_lv), r)),
            [f_q, f_lv, gen.fc1.weight, gen.fc2.weight, gen.fc2.bias],
            max_entries=6)
        self.assertLessEqual(err, 1.0e-5)

    def test_coarse_masks(self):
        f_lv = Tensor(self.rng.standard_normal((2, 3, 2, 2)))
        ks = KernelSet(Tensor(np.zeros((2, 3))), Tensor([0.5, -1.5]))
        out = coarse_masks(ks, f_lv)
        self.assertEqual(out.shape, (2, 2, 2, 2))
        np.testing.assert_array_equal(out.data[0], 0.5)
        np.testing.assert_array_equal(out.data[1], -1.5)

        onehot = np.zeros((3, 3))
        onehot[np.arange(3), [2, 0, 1]] = 1.0
        out = coarse_masks(KernelSet(Tensor(onehot), Tensor(np.zeros(3))),
                           f_lv)
        for q, c in enumerate([2, 0, 1]):
            np.testing.assert_array_equal(out.data[q], f_lv.data[:, c])

        w = self.rng.standard_normal((2, 3))
        b = self.rng.standard_normal(2)
        out = coarse_masks(KernelSet(Tensor(w), Tensor(b)), f_lv)
        for q in range(2):
            for t in range(2):
                for y in range(2):
                    for x in range(2):
                        val = sum(w[q, c] * f_lv.data[t, c, y, x]
                                  for c in range(3)) + b[q]
                        self.assertAlmostEqual(out.data[q, t, y, x], val,
                                               places=12)

        with self.assertRaises(ShapeError):
            coarse_masks(KernelSet(Tensor(np.zeros((2, 4))),
                                   Tensor(np.zeros(2))), f_lv)

    def test_matching(self):
        head = MatchingHead(4, np.random.default_rng(1))
        f_q = Tensor(self.rng.standard_normal((5, 4)))
        f_vl = Tensor(self.rng.standard_normal(4))
        scores, log_scores = head(f_q, f_vl)
        self.assertEqual(scores.shape, (5,))
        self.assertAlmostEqual(float(scores.data.sum()), 1.0, places=12)
        np.testing.assert_allclose(np.exp(log_scores.data), scores.data,
                                   rtol=1e-12)

        w = head.fc.weight.data[0]
        logits = f_q.data @ w[:4] + f_vl.data @ w[4:] + head.fc.bias.data[0]
        self.assertEqual(int(np.argmax(scores.data)), int(np.argmax(logits)))
        np.testing.assert_allclose(head.logits(f_q, f_vl).data, logits,
                                   rtol=1e-12)

        single = matching_scores(head, Tensor(f_q.data[:1]), f_vl)
        self.assertEqual(single.data[0], 1.0)

        with self.assertRaises(ShapeError):
            head(f_q, Tensor(np.zeros(3)))

        f_q = Tensor(f_q.data.copy(), requires_grad=True)
        f_vl = Tensor(f_vl.data.copy(), requires_grad=True)
        r = self.rng.standard_normal(5)
        err = gradient_check(
            lambda: tsum(mul(head(f_q, f_vl)[1], r)),
            [f_q, f_vl, head.fc.weight])
        self.assertLessEqual(err, 1.0e-5)

    def test_assignment(self):
        gt = np.zeros((2, 2, 2))
        gt[0, 0, :] = 1.0
        gt[1, :, 1] = 1.0
        coarse = np.empty((3, 2, 2, 2))
        coarse[0] = np.where(gt >= 0.5, -5.0, 5.0)
        coarse[1] = np.where(gt >= 0.5, 5.0, -5.0)
        coarse[2] = np.where(gt >= 0.5, -5.0, 5.0)
        delta = assign_best_query(Tensor(coarse), gt)
        self.assertEqual(delta.shape, (3, 2))
        np.testing.assert_array_equal(delta[1], [True, True])
        np.testing.assert_array_equal(delta.sum(axis=0), [1, 1])

        # No query predicts anything: all IoUs are zero, query 0 wins.
        empty = np.full((3, 2, 2, 2), -5.0)
        delta = assign_best_query(empty, gt)
        np.testing.assert_array_equal(delta[0], [True, True])

        # Empty prediction against empty ground truth counts as a match.
        table = binary_iou_table(np.zeros((2, 1, 2, 2), dtype=bool),
                                 np.zeros((1, 2, 2), dtype=bool))
        np.testing.assert_array_equal(table, 1.0)

        for trial in range(5):
            coarse = self.rng.standard_normal((4, 3, 3, 3))
            gt = (self.rng.random((3, 3, 3)) < 0.4).astype(np.float64)
            delta = assign_best_query(coarse, gt)
            for t in range(3):
                ious = list()
                for q in range(4):
                    p = coarse[q, t] >= 0.0
                    g = gt[t] >= 0.5
                    union = np.logical_or(p, g).sum()
                    inter = np.logical_and(p, g).sum()
                    ious.append(1.0 if union == 0 else inter / union)
                best = ious.index(max(ious))
                self.assertTrue(delta[best, t])
                self.assertEqual(int(delta[:, t].sum()), 1)

    def test_loss_lr(self):
        coarse = Tensor(self.rng.standard_normal((2, 2, 2, 2)))
        gt = self.rng.random((2, 2, 2))
        z = self.rng.standard_normal(2)
        log_scores = log_softmax(Tensor(z), axis=0)
        delta = np.array([[True, False], [False, True]])
        got = loss_lr(coarse, delta, log_scores, gt, beta=0.1).item()
        ls = z - np.log(np.exp(z).sum())
        expect = 0.0
        for t, q in enumerate([0, 1]):
            expect += 0.1 * _bce(coarse.data[q, t], gt[t]).mean() - ls[q]
        expect /= 2.0
        self.assertAlmostEqual(got, expect, places=12)

        # Default weight of the low resolution term.
        got = loss_lr(coarse, delta, log_scores, gt).item()
        self.assertAlmostEqual(got, expect, places=12)

        hard = (gt >= 0.5).astype(np.float64)
        perfect = np.where(hard > 0, 30.0, -30.0)
        perfect = Tensor(np.stack([perfect, perfect]))
        sure = log_softmax(Tensor([60.0, 0.0]), axis=0)
        delta = np.array([[True, True], [False, False]])
        self.assertLess(loss_lr(perfect, delta, sure, hard).item(), 1.0e-6)

        with self.assertRaises(ShapeError):
            loss_lr(coarse, np.array([[True, True], [True, False]]),
                    log_scores, gt)

    def test_loss_hr(self):
        logits = Tensor(self.rng.standard_normal((2, 4, 4)))
        gt = self.rng.random((2, 4, 4))
        got = loss_hr(logits, gt).item()
        p = _sigmoid(logits.data)
        expect = 0.0
        for t in range(2):
            bce = _bce(logits.data[t], gt[t]).mean()
            dice = 1.0 - (2.0 * (p[t] * gt[t]).sum() + 1.0) / \
                (p[t].sum() + gt[t].sum() + 1.0)
            expect += bce + dice
        expect /= 2.0
        self.assertAlmostEqual(got, expect, places=12)

        hard = (gt >= 0.5).astype(np.float64)
        perfect = Tensor(np.where(hard > 0, 30.0, -30.0))
        self.assertLess(loss_hr(perfect, hard).item(), 1.0e-6)
        zero = Tensor(np.full((2, 4, 4), -30.0))
        self.assertLess(loss_hr(zero, np.zeros((2, 4, 4))).item(), 1.0e-6)
        d = dice_loss(zero, np.zeros((2, 4, 4)))
        self.assertEqual(d.shape, (2,))

        with self.assertRaises(ShapeError):
            loss_hr(logits, gt[:1])

        a = Tensor([0.25])
        b = Tensor([1.5])
        self.assertEqual(total_loss(a, b).data[0], 1.75)

        x = Tensor(logits.data.copy(), requires_grad=True)
        err = gradient_check(lambda: loss_hr(x, gt), [x])
        self.assertLessEqual(err, 1.0e-5)

    def test_refiner(self):
        ref = MaskRefiner(4, 3, 2, np.random.default_rng(2), widths=(4, 4, 4))
        sel, f_lv, f_m, f_l = self._refiner_inputs(requires_grad=True)
        out = refine_masks(ref, sel, f_lv, f_m, f_l)
        self.assertEqual(out.shape, (2, 8, 8))
        backward(tsum(out))
        for t in (sel, f_lv, f_m, f_l):
            self.assertIsNotNone(t.grad)
            self.assertGreater(np.abs(t.grad).sum(), 0.0)

        consts = [Tensor(np.full(s, v)) for s, v in
                  zip([(2, 1, 2, 2), (2, 4, 2, 2), (2, 3, 4, 4),
                       (2, 2, 8, 8)], [0.3, -0.7, 1.1, 0.2])]
        out = ref(*consts)
        for t in range(2):
            np.testing.assert_allclose(out.data[t], out.data[t, 0, 0],
                                       rtol=1e-10, atol=1e-12)

        with self.assertRaises(ShapeError):
            ref(sel, f_lv, f_l, f_l)

        r = self.rng.standard_normal((2, 8, 8))
        err = gradient_check(
            lambda: tsum(mul(ref(sel, f_lv, f_m, f_l), r)),
            [sel, f_lv, f_m, f_l, ref.stage0.weight, ref.head.weight],
            max_entries=5)
        self.assertLessEqual(err, 1.0e-4)

    def test_select_coarse(self):
        coarse = Tensor(self.rng.standard_normal((3, 2, 2, 2)))
        one = select_coarse(coarse, 2)
        self.assertEqual(one.shape, (2, 1, 2, 2))
        np.testing.assert_array_equal(one.data[:, 0], coarse.data[2])
        mixed = select_coarse(coarse, np.array([1, 0]))
        np.testing.assert_array_equal(mixed.data[0, 0], coarse.data[1, 0])
        np.testing.assert_array_equal(mixed.data[1, 0], coarse.data[0, 1])

    def test_inference(self):
        ref = MaskRefiner(4, 3, 2, np.random.default_rng(3), widths=(4, 4, 4))
        _, f_lv, f_m, f_l = self._refiner_inputs()
        coarse = Tensor(self.rng.standard_normal((3, 2, 2, 2)))
        scores = np.array([0.2, 0.5, 0.3])
        before = ref.n_calls
        ms = inference_select(ref, coarse, scores, f_lv, f_m, f_l, (32, 32))
        self.assertEqual(ref.n_calls, before + 1)
        self.assertEqual(ms.query, 1)
        self.assertEqual(ms.full.shape, (2, 32, 32))
        self.assertEqual(ms.full.dtype, np.bool_)
        self.assertEqual(ms.refined.shape, (2, 8, 8))
        np.testing.assert_array_equal(ms.scores, scores)
        expect = ref(select_coarse(coarse, 1), f_lv, f_m, f_l)
        np.testing.assert_array_equal(ms.refined.data, expect.data)

        ms = inference_select(ref, Tensor(coarse.data[:1]), np.array([1.0]),
                              f_lv, f_m, f_l, (32, 32))
        self.assertEqual(ms.query, 0)


def test_suite():
    """Allows testing of only this module with the command::

        python setup.py test -m <modulename>
    """
    return unittest.defaultTestLoader.loadTestsFromName(__name__)
