"""Sobel boundary bands and the uncertainty-weighted boundary loss.

The band is the Chebyshev dilation (radius w) of the ground-truth mask's
Sobel edge pixels.  On band pixels the loss is a cross-entropy weighted by
(1 + V_i), where V_i is the squared deviation of each prediction from the
band-mean prediction.  V is differentiable through the predictions unless
explicitly detached.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation

from . import tensor as T

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T

PROB_EPS = 1e-7


@dataclass
class BoundaryBand:
    """band: binary H x W membership map; b: mask values on band pixels."""

    band: np.ndarray
    b: np.ndarray
    n: int


@dataclass
class UncertaintyMap:
    """V: squared deviation from the band-mean prediction, zero off band."""

    v: T.Tensor
    p_mean: T.Tensor


def _correlate3(mask: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # valid-mode correlation; the 1-px output border (where no full 3x3
    # window fits) is defined as zero so constant masks have no edges
    out = np.zeros_like(mask)
    win = np.lib.stride_tricks.sliding_window_view(mask, (3, 3))
    out[1:-1, 1:-1] = np.einsum("ijkl,kl->ij", win, kernel)
    return out


def sobel_magnitude(mask: np.ndarray) -> np.ndarray:
    """sqrt(Gx^2 + Gy^2) with the standard 3x3 Sobel kernels.

    The response is computed where the full window fits and is zero on the
    image border, so uniform masks produce an identically zero map.
    """
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 3 or m.shape[1] < 3:
        raise T.ShapeError(f"sobel_magnitude needs a 2-d mask of at least 3x3, got {m.shape}")
    gx = _correlate3(m, SOBEL_X)
    gy = _correlate3(m, SOBEL_Y)
    return np.sqrt(gx * gx + gy * gy)


def boundary_band(mask: np.ndarray, width: int = 2) -> BoundaryBand:
    """Dilate the Sobel edge set by a Chebyshev radius ``width``.

    A uniform mask (no edges) yields an empty band with n = 0.
    """
    if width < 1:
        raise ValueError(f"band width must be >= 1, got {width}")
    mask = np.asarray(mask)
    edges = sobel_magnitude(mask) > 0
    if not edges.any():
        return BoundaryBand(np.zeros_like(edges), np.zeros(0), 0)
    size = 2 * width + 1
    band = binary_dilation(edges, structure=np.ones((size, size), dtype=bool))
    return BoundaryBand(band, mask[band].astype(np.float64), int(band.sum()))


def uncertainty_map(pred: T.Tensor, band: BoundaryBand) -> UncertaintyMap:
    """V_i = (p_i - P)^2 on band pixels, with P the band mean of ``pred``."""
    if band.n == 0:
        zero = T.Tensor(np.zeros(pred.shape, dtype=pred.data.dtype))
        return UncertaintyMap(v=zero, p_mean=T.Tensor(np.asarray(0.0, dtype=pred.data.dtype)))
    band_t = T.Tensor(band.band.astype(pred.data.dtype))
    p_mean = T.div(T.tsum(T.mul(pred, band_t)), T.Tensor(np.asarray(float(band.n), dtype=pred.data.dtype)))
    dev = T.sub(pred, p_mean)
    v = T.mul(T.mul(dev, dev), band_t)
    return UncertaintyMap(v=v, p_mean=p_mean)


def usd_loss(pred: T.Tensor, band: BoundaryBand, v: T.Tensor) -> T.Tensor:
    """-(1/N) sum over band of (1+V_i) [b log p + (1-b) log(1-p)]."""
    if band.n == 0:
        return T.Tensor(np.asarray(0.0, dtype=pred.data.dtype))
    dtype = pred.data.dtype
    band_t = T.Tensor(band.band.astype(dtype))
    truth = np.zeros(pred.shape, dtype=dtype)
    truth[band.band] = band.b
    y = T.Tensor(truth)
    p = T.clamp(pred, PROB_EPS, 1.0 - PROB_EPS)
    one = T.Tensor(np.asarray(1.0, dtype=dtype))
    ce = T.add(T.mul(y, T.log(p)), T.mul(T.sub(one, y), T.log(T.sub(one, p))))
    weighted = T.mul(T.mul(T.add(one, v), ce), band_t)
    return T.div(T.neg(T.tsum(weighted)), T.Tensor(np.asarray(float(band.n), dtype=dtype)))


def usd_from_mask(pred: T.Tensor, mask: np.ndarray, width: int = 2,
                  detach_uncertainty: bool = False) -> T.Tensor:
    """Band extraction + uncertainty weighting + loss for one (pred, mask)."""
    band = boundary_band(mask, width)
    umap = uncertainty_map(pred.detach() if detach_uncertainty else pred, band)
    return usd_loss(pred, band, umap.v)


def usd_batch(pred: T.Tensor, masks: np.ndarray, width: int = 2,
              detach_uncertainty: bool = False) -> T.Tensor:
    """Mean per-image USD loss over a (B,1,H,W) batch; empty bands give 0."""
    b = pred.shape[0]
    total = None
    for i in range(b):
        plane = T.reshape(T.narrow(pred, 0, i, 1), pred.shape[2:])
        term = usd_from_mask(plane, masks[i, 0], width, detach_uncertainty)
        total = term if total is None else T.add(total, term)
    return T.div(total, T.Tensor(np.asarray(float(b), dtype=pred.data.dtype)))
