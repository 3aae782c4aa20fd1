"""
Test the cross-modal transformer.
"""
import unittest

import numpy as np

from gopseg.utils import ShapeError

from gopseg.numerics import (Tensor, get_default_dtype, set_default_dtype,
                             tsum, mul, add, gradient_check)

from gopseg.encoders import TextFeatures

from gopseg.transformer import (sine_encoding_2d, sequence_length,
                                EncoderLayer, DecoderLayer,
                                CrossModalTransformer, encoder_forward,
                                decoder_forward)

from gopseg.model import ModelConfig

from gopseg.config import RunConfig


class TestTransformer(unittest.TestCase):

    def setUp(self):
        self.old_dtype = get_default_dtype()
        set_default_dtype(np.float64)
        self.rng = np.random.default_rng(31)
        self.model = CrossModalTransformer(8, 6, 8, 2, 2, 2, 3, 4,
                                           np.random.default_rng(0))
        self.pad = np.array([False, False, False, True, True])

    def tearDown(self):
        set_default_dtype(self.old_dtype)

    def _inputs(self, requires_grad=False):
        per_frame = Tensor(self.rng.standard_normal((3, 8, 2, 2)),
                           requires_grad=requires_grad)
        tokens = Tensor(self.rng.standard_normal((5, 6)),
                        requires_grad=requires_grad)
        return per_frame, TextFeatures(tokens, self.pad)

    def test_lengths(self):
        self.assertEqual(sequence_length(6, 64, 64, 20), 116)
        self.assertEqual(sequence_length(8, 64, 64, 20), 148)
        self.assertEqual(sequence_length(36, 320, 320, 20), 14420)

        pe = sine_encoding_2d(2, 3, 8)
        self.assertEqual(pe.shape, (6, 8))
        np.testing.assert_array_equal(pe[0], [0, 1, 0, 1, 0, 1, 0, 1])
        # Row half depends on the row only, column half on the column only.
        np.testing.assert_array_equal(pe[1, :4], pe[0, :4])
        np.testing.assert_array_equal(pe[3, 4:], pe[0, 4:])
        with self.assertRaises(ShapeError):
            sine_encoding_2d(2, 2, 6)

    def test_sequence(self):
        per_frame, text = self._inputs()
        seq = self.model.build_sequence(per_frame, text)
        self.assertEqual(seq.tokens.shape, (17, 8))
        self.assertEqual(seq.n_visual, 12)
        self.assertEqual(int(seq.is_text.sum()), 5)
        np.testing.assert_array_equal(seq.frame_index[:12],
                                      np.repeat([0, 1, 2], 4))
        np.testing.assert_array_equal(seq.frame_index[12:], -1)
        np.testing.assert_array_equal(seq.key_padding_mask[12:], self.pad)
        self.assertFalse(np.any(seq.key_padding_mask[:12]))

        with self.assertRaises(ShapeError):
            self.model.build_sequence(
                Tensor(np.zeros((5, 8, 2, 2))), text)

    def test_encode(self):
        per_frame, text = self._inputs()
        seq = self.model.build_sequence(per_frame, text)
        enc, weights = self.model.encode(seq, return_weights=True)
        self.assertEqual(enc.f_lv.shape, (3, 8, 2, 2))
        self.assertEqual(enc.f_vl.shape, (8,))
        self.assertEqual(enc.memory.shape, (17, 8))
        self.assertEqual(len(weights), 2)
        for w in weights:
            self.assertEqual(w.shape, (2, 17, 17))
            self.assertTrue(np.all(w.data[:, :, 15:] == 0.0))
            np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)

        # Content of padded text positions does not reach any output.
        changed = Tensor(text.tokens.data.copy())
        changed.data[3:] = 100.0 * self.rng.standard_normal((2, 6))
        seq2 = self.model.build_sequence(per_frame,
                                         TextFeatures(changed, self.pad))
        enc2 = encoder_forward(self.model, seq2)
        np.testing.assert_allclose(enc2.f_lv.data, enc.f_lv.data, rtol=0,
                                   atol=1e-12)
        np.testing.assert_allclose(enc2.f_vl.data, enc.f_vl.data, rtol=0,
                                   atol=1e-12)
        f_q = decoder_forward(self.model, enc)
        f_q2 = decoder_forward(self.model, enc2)
        np.testing.assert_allclose(f_q2.data, f_q.data, rtol=0, atol=1e-12)

        empty = TextFeatures(text.tokens, np.ones(5, dtype=bool))
        with self.assertRaises(ShapeError):
            self.model.encode(self.model.build_sequence(per_frame, empty))

    def test_decode(self):
        per_frame, text = self._inputs()
        enc = self.model.encode(self.model.build_sequence(per_frame, text))
        f_q = self.model.decode(enc)
        self.assertEqual(f_q.shape, (3, 8))

        same = Tensor(np.tile(self.rng.standard_normal((1, 8)), (3, 1)))
        out = self.model.decode(enc, queries=same)
        np.testing.assert_allclose(out.data[1], out.data[0], rtol=1e-12)
        np.testing.assert_allclose(out.data[2], out.data[0], rtol=1e-12)

        # Queries carry no position: permuting them permutes the outputs.
        perm = np.array([2, 0, 1])
        q = self.model.queries.data
        out = self.model.decode(enc, queries=Tensor(q[perm]))
        np.testing.assert_allclose(out.data, f_q.data[perm], rtol=1e-10,
                                   atol=1e-12)

    def test_layer_gradients(self):
        layer = EncoderLayer(8, 2, np.random.default_rng(1))
        x = Tensor(self.rng.standard_normal((6, 8)), requires_grad=True)
        mask = np.array([False, False, False, False, True, True])
        r = self.rng.standard_normal((6, 8))
        err = gradient_check(
            lambda: tsum(mul(layer(x, key_padding_mask=mask), r)),
            [x, layer.attn.w_q, layer.ffn.fc1.weight, layer.norm1.gamma],
            max_entries=6)
        self.assertLessEqual(err, 1.0e-4)

        layer = DecoderLayer(8, 2, np.random.default_rng(2))
        q = Tensor(self.rng.standard_normal((3, 8)), requires_grad=True)
        mem = Tensor(self.rng.standard_normal((5, 8)), requires_grad=True)
        r = self.rng.standard_normal((3, 8))
        err = gradient_check(
            lambda: tsum(mul(layer(q, mem, key_padding_mask=mask[1:]), r)),
            [q, mem, layer.cross_attn.w_k, layer.self_attn.w_v],
            max_entries=6)
        self.assertLessEqual(err, 1.0e-4)

    def test_model_gradient(self):
        per_frame, text = self._inputs(requires_grad=True)
        r1 = self.rng.standard_normal((3, 8))
        r2 = self.rng.standard_normal((3, 8, 2, 2))
        r3 = self.rng.standard_normal(8)

        def fn():
            seq = self.model.build_sequence(per_frame, text)
            enc = self.model.encode(seq)
            f_q = self.model.decode(enc)
            return add(add(tsum(mul(f_q, r1)), tsum(mul(enc.f_lv, r2))),
                       tsum(mul(enc.f_vl, r3)))

        leaves = [per_frame, text.tokens, self.model.visual_proj.weight,
                  self.model.temporal_embed, self.model.queries,
                  self.model.encoder[0].attn.w_k]
        err = gradient_check(fn, leaves, max_entries=5)
        self.assertLessEqual(err, 1.0e-4)

    def test_defaults(self):
        with self.assertRaises(ShapeError):
            CrossModalTransformer(8, 6, 10, 4, 1, 1, 3, 4,
                                  np.random.default_rng(0))
        self.assertEqual(ModelConfig().n_queries, 5)
        self.assertEqual(RunConfig().n_queries, 5)
        self.assertEqual(ModelConfig().d_model, 64)
        self.assertEqual(ModelConfig().heads, 4)


def test_suite():
    """Allows testing of only this module with the command::

        python setup.py test -m <modulename>
    """
    return unittest.defaultTestLoader.loadTestsFromName(__name__)
