# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.synthetic
=======================

Synthetic referring clips: colored shapes moving with constant velocity over
a static textured background, with a query naming one of them by color,
shape and direction of motion.

"""
from __future__ import absolute_import, division, print_function

from collections import OrderedDict

import numpy as np

from .utils import ConfigError

from .codec import encode_clip

from .stream import ClipSample, PAD_ID


VOCAB = [
    "<pad>", "the", "a", "that", "is", "moving", "towards", "object",
    "red", "green", "blue", "yellow", "cyan", "magenta", "white", "orange",
    "square", "circle", "triangle", "left", "right", "up", "down", "shape",
]

WORD_ID = OrderedDict((w, i) for i, w in enumerate(VOCAB))

COLORS = OrderedDict([
    ("red", (220, 40, 40)),
    ("green", (40, 200, 60)),
    ("blue", (50, 70, 230)),
    ("yellow", (235, 225, 50)),
    ("cyan", (50, 220, 225)),
    ("magenta", (215, 50, 210)),
    ("white", (245, 245, 245)),
    ("orange", (245, 150, 30)),
])

SHAPES = ["square", "circle", "triangle"]

# Unit displacement (dy, dx) per frame of each direction word.
DIRECTIONS = OrderedDict([
    ("left", (0, -1)),
    ("right", (0, 1)),
    ("up", (-1, 0)),
    ("down", (1, 0)),
])

TEMPLATES = [
    ("the", "{color}", "{shape}", "moving", "{direction}"),
    ("a", "{color}", "{shape}", "that", "is", "moving", "{direction}"),
    ("the", "{color}", "{shape}", "object", "moving", "towards", "the",
     "{direction}"),
    ("the", "{color}", "{shape}", "shape", "that", "is", "moving",
     "{direction}"),
]


class GenConfig(object):
    """Synthetic data generation parameters.

    Args:
        height, width (int):  Frame size, multiples of 16 and of block.
        block (int):  Motion block size B.
        n_gops (int):  T.
        gop_size (int):  K, P-frames per GoP.
        min_sprites, max_sprites (int):  Sprite count range.
        min_size, max_size (int):  Sprite half-size range in pixels.
        max_speed (int):  Largest per-frame displacement.
        radius (int):  Motion search radius; at least gop_size * max_speed.
        query_len (int):  N, padded query length.

    """

    def __init__(self, height=64, width=64, block=8, n_gops=2, gop_size=3,
                 min_sprites=2, max_sprites=4, min_size=4, max_size=7,
                 max_speed=2, radius=None, query_len=20):
        self.height = int(height)
        self.width = int(width)
        self.block = int(block)
        self.n_gops = int(n_gops)
        self.gop_size = int(gop_size)
        self.min_sprites = int(min_sprites)
        self.max_sprites = int(max_sprites)
        self.min_size = int(min_size)
        self.max_size = int(max_size)
        self.max_speed = int(max_speed)
        if radius is None:
            radius = self.gop_size * self.max_speed
        self.radius = int(radius)
        self.query_len = int(query_len)
        self.validate()

    @property
    def n_frames(self):
        return self.n_gops * (self.gop_size + 1)

    @property
    def vocab_size(self):
        return len(VOCAB)

    def validate(self):
        for name in ("height", "width"):
            val = getattr(self, name)
            if val % 16 != 0 or val % self.block != 0:
                raise ConfigError("{} {} must be a multiple of 16 and of the "
                                  "block size {}".format(name, val, self.block))
        if self.n_gops < 1 or self.gop_size < 1:
            raise ConfigError("need at least one GoP with one P-frame")
        if not (1 <= self.min_sprites <= self.max_sprites):
            raise ConfigError("invalid sprite count range {}..{}"
                              .format(self.min_sprites, self.max_sprites))
        if self.max_speed < 1:
            raise ConfigError("max_speed must be >= 1")
        if self.radius < self.gop_size * self.max_speed:
            raise ConfigError("search radius {} is below the largest I-to-P "
                              "displacement {}".format(
                                  self.radius, self.gop_size * self.max_speed))
        longest = max(len(t) for t in TEMPLATES)
        if self.query_len < longest:
            raise ConfigError("query_len {} is shorter than the longest "
                              "query ({} words)".format(self.query_len,
                                                        longest))
        travel = self.max_speed * (self.n_frames - 1)
        if 2 * self.max_size + 1 + travel > min(self.height, self.width):
            raise ConfigError("sprites do not fit the frame over the clip")
        return


def rasterize(shape, cy, cx, size, height, width):
    """Boolean footprint of a sprite centered at integer (cy, cx).

    Args:
        shape (str):  "square", "circle" or "triangle".
        cy, cx (int):  Center pixel.
        size (int):  Half-size in pixels.

    Returns:
        (array):  bool [height, width].

    """
    yy, xx = np.mgrid[0:height, 0:width]
    dy = yy - cy
    dx = xx - cx
    if shape == "square":
        return (np.abs(dy) <= size) & (np.abs(dx) <= size)
    elif shape == "circle":
        return dy * dy + dx * dx <= size * size
    elif shape == "triangle":
        # Apex up; the half-width grows by one pixel every two rows.
        return (dy >= -size) & (dy <= size) & (2 * np.abs(dx) <= dy + size)
    raise ValueError("unknown shape {}".format(shape))


def background(rng, height, width):
    """Static, dark, textured background (uint8 [H, W, 3]).
    """
    coarse = rng.integers(20, 90, size=(height // 4, width // 4, 3))
    tex = np.kron(coarse, np.ones((4, 4, 1), dtype=np.int64))
    fine = rng.integers(0, 12, size=(height, width, 3))
    return (tex + fine).astype(np.uint8)


def _draw_sprite(rng, cfg):
    color = str(rng.choice(list(COLORS.keys())))
    shape = str(rng.choice(SHAPES))
    direction = str(rng.choice(list(DIRECTIONS.keys())))
    speed = int(rng.integers(1, cfg.max_speed + 1))
    size = int(rng.integers(cfg.min_size, cfg.max_size + 1))
    uy, ux = DIRECTIONS[direction]
    vy, vx = uy * speed, ux * speed
    span = cfg.n_frames - 1
    # Keep the whole trajectory inside the frame.
    lo_y = size + max(0, -vy * span)
    hi_y = cfg.height - 1 - size - max(0, vy * span)
    lo_x = size + max(0, -vx * span)
    hi_x = cfg.width - 1 - size - max(0, vx * span)
    cy = int(rng.integers(lo_y, hi_y + 1))
    cx = int(rng.integers(lo_x, hi_x + 1))
    return OrderedDict([
        ("color", color), ("shape", shape), ("direction", direction),
        ("speed", speed), ("size", size), ("cy", cy), ("cx", cx),
        ("vy", vy), ("vx", vx),
    ])


def sprite_key(sp):
    return (sp["color"], sp["shape"], sp["direction"])


def _draw_scene(rng, cfg):
    bg = background(rng, cfg.height, cfg.width)
    while True:
        nsp = int(rng.integers(cfg.min_sprites, cfg.max_sprites + 1))
        sprites = [_draw_sprite(rng, cfg) for _ in range(nsp)]
        target = int(rng.integers(nsp))
        keys = [sprite_key(sp) for sp in sprites]
        if keys.count(keys[target]) == 1:
            return bg, sprites, target


def query_tokens(rng, sprite, query_len):
    """Token ids of a query naming the sprite, padded with PAD_ID.
    """
    template = TEMPLATES[int(rng.integers(len(TEMPLATES)))]
    words = [w.format(**sprite) for w in template]
    ids = [WORD_ID[w] for w in words]
    return np.array(ids + [PAD_ID] * (query_len - len(ids)), dtype=np.uint16)


def decode_query(ids):
    return " ".join(VOCAB[i] for i in ids if i != PAD_ID)


def render_frames(sprites, target, bg, cfg):
    """Render raw frames and the target masks.

    The target is drawn last, so its mask is its full footprint.

    Returns:
        (tuple):  uint8 [F, H, W, 3] frames and bool [F, H, W] masks.

    """
    frames = np.zeros((cfg.n_frames, cfg.height, cfg.width, 3), dtype=np.uint8)
    masks = np.zeros((cfg.n_frames, cfg.height, cfg.width), dtype=bool)
    order = [i for i in range(len(sprites)) if i != target] + [target]
    for f in range(cfg.n_frames):
        img = bg.copy()
        for i in order:
            sp = sprites[i]
            fp = rasterize(sp["shape"], sp["cy"] + f * sp["vy"],
                           sp["cx"] + f * sp["vx"], sp["size"],
                           cfg.height, cfg.width)
            img[fp] = COLORS[sp["color"]]
            if i == target:
                masks[f] = fp
        frames[f] = img
    return frames, masks


def generate_synthetic_clip(seed, cfg):
    """Generate one compressed clip with a query and target masks.

    The result is a pure function of (seed, cfg).  Sprite sets in which the
    target's (color, shape, direction) triple is not unique are redrawn.

    Args:
        seed (int):  Random seed.
        cfg (GenConfig):  Generation parameters.

    Returns:
        (ClipSample):  The encoded sample, with meta holding the seed and the
            sprite descriptors.

    """
    rng = np.random.default_rng(seed)
    bg, sprites, target = _draw_scene(rng, cfg)
    query = query_tokens(rng, sprites[target], cfg.query_len)
    frames, masks = render_frames(sprites, target, bg, cfg)
    gops = encode_clip(frames, cfg.gop_size, cfg.block, cfg.radius)
    meta = OrderedDict([
        ("seed", int(seed)),
        ("target", target),
        ("sprites", sprites),
        ("query", decode_query(query)),
    ])
    return ClipSample(gops, query, masks, cfg.block, cfg.vocab_size, meta=meta)
