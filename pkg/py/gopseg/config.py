# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.config
=======================

Run configuration.

Configuration files are UTF-8 text with one ``key=value`` per line.  Blank
lines and lines starting with ``#`` are ignored.  Every command line tool
accepts ``--config <file>`` and a ``--<key>`` flag per key, and flags
override the file.

"""
from __future__ import absolute_import, division, print_function

import os

from collections import OrderedDict

from .utils import ConfigError, DataError

from .synthetic import GenConfig, VOCAB

from .model import ModelConfig


def _int_tuple(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(",") if x.strip() != "")


def _str(text):
    return str(text)


# name -> (parser, default, help)
RUN_KEYS = OrderedDict([
    ("seed", (int, 0, "Model initialization and training order seed.")),
    ("data_seed", (int, 1000, "First clip seed of the generated data.")),
    ("n_train", (int, 200, "Number of training clips.")),
    ("n_val", (int, 40, "Number of validation clips.")),
    ("height", (int, 64, "Frame height.")),
    ("width", (int, 64, "Frame width.")),
    ("block", (int, 8, "Motion block size B.")),
    ("n_gops", (int, 2, "GoPs per clip (T).")),
    ("gop_size", (int, 3, "P-frames per GoP (K).")),
    ("radius", (int, 6, "Motion search radius.")),
    ("min_sprites", (int, 2, "Minimum sprites per clip.")),
    ("max_sprites", (int, 4, "Maximum sprites per clip.")),
    ("max_speed", (int, 2, "Largest sprite speed (pixels per frame).")),
    ("query_len", (int, 20, "Padded query length N.")),
    ("text_dim", (int, 64, "Text feature width C_L.")),
    ("d_model", (int, 64, "Transformer width D.")),
    ("heads", (int, 4, "Attention heads.")),
    ("enc_layers", (int, 2, "Transformer encoder layers.")),
    ("dec_layers", (int, 2, "Transformer decoder layers.")),
    ("n_queries", (int, 5, "Number of object queries N_q.")),
    ("i_widths", (_int_tuple, (32, 64, 128), "I-frame encoder widths.")),
    ("p_widths", (_int_tuple, (16, 32, 64), "P-frame encoder widths.")),
    ("growth", (int, 8, "Dense block growth rate.")),
    ("refine_widths", (_int_tuple, (64, 32, 16), "Mask refiner widths.")),
    ("lr", (float, 1.0e-4, "Learning rate.")),
    ("momentum", (float, 0.9, "SGD momentum.")),
    ("weight_decay", (float, 5.0e-4, "Weight decay.")),
    ("beta", (float, 0.1, "Weight of the low resolution mask loss.")),
    ("steps", (int, 3000, "Training steps (one clip per step).")),
    ("log_every", (int, 50, "Steps between loss log lines.")),
    ("ckpt_every", (int, 500, "Steps between checkpoints.")),
    ("boundary_tol", (int, 1, "Contour matching tolerance in pixels.")),
    ("sweep_values", (_int_tuple, (1, 3, 5, 7, 9), "N_q sweep values.")),
    ("bench_iters", (int, 20, "Timed benchmark iterations.")),
    ("bench_warmup", (int, 5, "Untimed benchmark warm-up iterations.")),
    ("data_dir", (_str, "", "Dataset directory.")),
    ("out_dir", (_str, "", "Output directory.")),
    ("ckpt", (_str, "", "Checkpoint path.")),
])


def _format_value(val):
    if isinstance(val, tuple):
        return ",".join(str(x) for x in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


class RunConfig(object):
    """All hyperparameters of a run.

    Args:
        values (dict):  Optional overrides of the defaults.

    """

    def __init__(self, values=None):
        for key, (_, default, _) in RUN_KEYS.items():
            setattr(self, key, default)
        if values is not None:
            self.update(values)

    def update(self, values):
        """Set keys from a dict of strings or typed values.
        """
        for key, val in values.items():
            if key not in RUN_KEYS:
                raise ConfigError("unknown configuration key '{}'"
                                  .format(key))
            parser = RUN_KEYS[key][0]
            try:
                setattr(self, key, parser(val))
            except (TypeError, ValueError):
                raise ConfigError("invalid value '{}' for key '{}'"
                                  .format(val, key))
        return self

    def copy(self, **overrides):
        out = RunConfig(self.as_dict())
        out.update(overrides)
        return out

    def require(self, *keys):
        """Raise ConfigError if any of the string keys is empty.
        """
        missing = [k for k in keys if getattr(self, k) == ""]
        if len(missing) > 0:
            raise ConfigError("missing required key(s): {}"
                              .format(", ".join(missing)))
        return self

    def as_dict(self):
        return OrderedDict((k, getattr(self, k)) for k in RUN_KEYS)

    def to_lines(self):
        return "".join("{}={}\n".format(k, _format_value(v))
                       for k, v in self.as_dict().items())

    def write(self, path):
        try:
            with open(path, "w", encoding="utf-8") as f:
                f.write(self.to_lines())
        except OSError as e:
            raise DataError("cannot write config {}: {}".format(path, e))

    @classmethod
    def from_file(cls, path):
        return cls(read_config_file(path))

    def gen_config(self):
        return GenConfig(height=self.height, width=self.width,
                         block=self.block, n_gops=self.n_gops,
                         gop_size=self.gop_size, min_sprites=self.min_sprites,
                         max_sprites=self.max_sprites,
                         max_speed=self.max_speed, radius=self.radius,
                         query_len=self.query_len)

    def model_config(self):
        return ModelConfig(height=self.height, width=self.width,
                           n_gops=self.n_gops, gop_size=self.gop_size,
                           radius=self.radius, vocab_size=len(VOCAB),
                           query_len=self.query_len, text_dim=self.text_dim,
                           d_model=self.d_model, heads=self.heads,
                           enc_layers=self.enc_layers,
                           dec_layers=self.dec_layers,
                           n_queries=self.n_queries, i_widths=self.i_widths,
                           p_widths=self.p_widths, growth=self.growth,
                           refine_widths=self.refine_widths, seed=self.seed)


def read_config_file(path):
    """Parse a key=value file into a dict of strings.
    """
    if not os.path.isfile(path):
        raise ConfigError("config file {} does not exist".format(path))
    out = OrderedDict()
    with open(path, "r", encoding="utf-8") as f:
        for num, line in enumerate(f, start=1):
            line = line.strip()
            if line == "" or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError("{} line {}: expected key=value"
                                  .format(path, num))
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def add_config_args(parser):
    """Add --config and one override flag per configuration key.
    """
    parser.add_argument("--config", type=str, required=False, default=None,
                        help="Configuration file of key=value lines.")
    for key, (_, default, hlp) in RUN_KEYS.items():
        parser.add_argument("--{}".format(key), type=str, required=False,
                            default=None,
                            help="{} (default {})".format(
                                hlp, _format_value(default)))
    return


def config_from_args(args):
    """Defaults, then the config file, then command line flags.
    """
    cfg = RunConfig()
    if args.config is not None:
        cfg.update(read_config_file(args.config))
    flags = OrderedDict()
    for key in RUN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            flags[key] = val
    cfg.update(flags)
    return cfg
