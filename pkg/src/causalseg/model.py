"""Segmentation model assembly: backbone plus optional GSm and CIBM branches.

The latent confusion features are sampled from the image-side prior head;
the mask-side posterior head exists only to constrain that prior with a KL
term during training and is never evaluated at inference.  With CIBM alone
(no learned prior) the latents come from a fixed standard normal.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .backbone import EncoderDecoder
from .cibm import InterventionPipeline
from .config import ModelConfig
from .gsm import GDEB, PCB, DistributionHead, GaussianSet, LatentSample, extract_posterior, extract_prior, sample
from .rngs import derive_rng


@dataclass
class ForwardResult:
    logits: T.Tensor
    pred: T.Tensor
    prior: Optional[GaussianSet]
    posterior: Optional[GaussianSet]
    latent: Optional[LatentSample]


class SegModel:
    """Owns the parameter registry; component inits use independent streams
    so the backbone starts identically across ablation variants."""

    def __init__(self, config: ModelConfig, seed: int, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.registry = T.ParameterRegistry()
        self.backbone = EncoderDecoder(
            self.registry, config.channels, derive_rng(seed, "init", "backbone"), dtype)
        self.gdeb = self.pcb = self.pipeline = None
        if config.use_gsm:
            self.gdeb = DistributionHead(
                self.registry, GDEB, config.k, derive_rng(seed, "init", "gdeb"), dtype=dtype)
            self.pcb = DistributionHead(
                self.registry, PCB, config.k, derive_rng(seed, "init", "pcb"), dtype=dtype)
        if config.use_cibm:
            self.pipeline = InterventionPipeline(
                self.registry, self.backbone.stage_channels, config.k,
                derive_rng(seed, "init", "cibm"), dtype)

    def _as_batch(self, arr) -> T.Tensor:
        data = np.asarray(arr, dtype=self.dtype)
        if data.ndim == 3:
            data = data[:, None]
        if data.ndim != 4 or data.shape[1] != 1:
            raise T.ShapeError(f"expected (B,H,W) or (B,1,H,W), got {data.shape}")
        return T.Tensor(data)

    def forward(self, images, masks=None, *, training: bool,
                rng=None, frozen_eps=None) -> ForwardResult:
        """images: (B,1,H,W) or (B,H,W); masks required when training with GSm.

        At inference the latent draw defaults to the distribution mean
        (``rng=None``); pass rng or frozen_eps for stochastic evaluation.
        """
        x = images if isinstance(images, T.Tensor) else self._as_batch(images)
        batch = x.shape[0]
        feats = self.backbone.encode(x)

        prior = posterior = latent = None
        if self.config.use_gsm:
            prior = extract_prior(x, self.gdeb, self.config.k)
            if training:
                if masks is None:
                    raise ValueError("training with GSm needs ground-truth masks for the posterior")
                posterior = extract_posterior(
                    self._as_batch(masks), self.pcb, self.config.k, training=True)
            latent = sample(prior, rng=rng, frozen_eps=frozen_eps)
        elif self.config.use_cibm:
            fixed = GaussianSet.standard((batch, self.config.k), dtype=self.dtype)
            latent = sample(fixed, rng=rng, frozen_eps=frozen_eps)

        hook = self.pipeline.hook(latent) if self.pipeline is not None else None
        logits = self.backbone.decode(feats, hook)
        return ForwardResult(logits=logits, pred=T.sigmoid(logits), prior=prior,
                             posterior=posterior, latent=latent)

    def named_arrays(self) -> dict:
        return {p.name: p.tensor.data for p in self.registry.parameters()}

    def load_arrays(self, arrays: dict):
        """Copy checkpoint arrays into parameters; names must match exactly."""
        params = {p.name: p for p in self.registry.parameters()}
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise KeyError(f"checkpoint missing parameters: {', '.join(missing)}")
        for name, param in params.items():
            src = arrays[name]
            if src.shape != param.tensor.data.shape:
                raise T.ShapeError(
                    f"{name}: checkpoint shape {src.shape} != model {param.tensor.data.shape}")
            param.tensor.data[:] = src.astype(param.tensor.data.dtype, copy=False)
