"""Tiny convolutional encoder-decoder exposing per-stage decoder features.

Encoder stage s applies conv3x3 -> gelu -> avgpool2, halving resolution;
the decoder mirrors it with nearest-neighbor upsampling and encoder skip
concatenation, ending in a 1x1 conv to a single logit plane.  A per-stage
fusion hook lets the intervention module rewrite decoder features; the
identity hook yields the plain conditional P(Y'|X) baseline.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv2d


@dataclass
class EncoderFeatures:
    """Per-stage feature maps; stage s has shape (N, C_s, H/2^s, W/2^s)."""

    stages: list


class EncoderDecoder:
    """U-shaped net; decoder channel plan per stage is exposed for fusion."""

    def __init__(self, reg: T.ParameterRegistry, channels, rng, dtype=np.float32, name="backbone"):
        self.depth = len(channels)
        self.channels = tuple(channels)
        self.enc = []
        c_prev = 1
        for s, c in enumerate(channels):
            self.enc.append(Conv2d(reg, f"{name}.enc{s}", c_prev, c, 3, rng, dtype))
            c_prev = c
        # decoder: upsample, concat skip (when one exists), conv3x3, gelu
        self.dec = []
        self.stage_channels = []
        c_run = channels[-1]
        for s in range(self.depth):
            skip = channels[self.depth - 2 - s] if s < self.depth - 1 else 0
            c_out = skip if skip else c_run
            self.dec.append(Conv2d(reg, f"{name}.dec{s}", c_run + skip, c_out, 3, rng, dtype))
            self.stage_channels.append(c_out)
            c_run = c_out
        self.head = Conv2d(reg, f"{name}.head", c_run, 1, 1, rng, dtype)

    def encode(self, image: T.Tensor) -> EncoderFeatures:
        """image: (1,H,W) single sample or (N,1,H,W) batch, values in [0,1]."""
        single = image.ndim == 3
        x = T.reshape(image, (1,) + image.shape) if single else image
        if x.ndim != 4 or x.shape[1] != 1:
            raise T.ShapeError(f"encode expects (1,H,W) or (N,1,H,W), got {image.shape}")
        h, w = x.shape[2], x.shape[3]
        div = 1 << self.depth
        if h % div or w % div:
            raise T.ShapeError(f"spatial dims {h}x{w} must be divisible by {div}")
        stages = []
        for conv in self.enc:
            x = T.avgpool2(T.gelu(conv(x)))
            stages.append(x)
        if single:
            stages = [T.reshape(s, s.shape[1:]) for s in stages]
        return EncoderFeatures(stages)

    def decode(self, features: EncoderFeatures, hook=None) -> T.Tensor:
        """Run decoder stages; ``hook(stage, feature) -> feature`` may rewrite
        each stage output (shape must be preserved).  Returns logits (N,1,H,W).
        """
        stages = features.stages
        single = stages[0].ndim == 3
        if single:
            stages = [T.reshape(s, (1,) + s.shape) for s in stages]
        x = stages[-1]
        for s, conv in enumerate(self.dec):
            x = T.upsample_nearest2(x)
            skip_idx = self.depth - 2 - s
            if skip_idx >= 0:
                x = T.concat([x, stages[skip_idx]], axis=1)
            x = T.gelu(conv(x))
            if hook is not None:
                fused = hook(s, x)
                if fused.shape != x.shape:
                    raise T.ShapeError(
                        f"fusion hook changed stage {s} shape {x.shape} -> {fused.shape}")
                x = fused
        logits = self.head(x)
        if single:
            logits = T.reshape(logits, logits.shape[1:])
        return logits
