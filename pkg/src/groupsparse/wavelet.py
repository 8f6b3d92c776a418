"""Four-level orthonormal Haar transform for 28x28 images.

The analysis chain is 28 -> 14 -> 7 -> (pad to 8) -> 4 -> 2. Each step
splits a band into an approximation plus horizontal, vertical, and
diagonal detail bands, with the averaging/differencing pairs scaled by
1/sqrt(2) per axis so the transform is orthonormal and the round trip is
exact. The odd 7x7 band is padded to 8x8 by replicating its last row and
column before the next step; replication keeps the transform linear and
maps constant images to all-zero detail bands.

The 799 coefficients are laid out approximation first, then detail
levels from coarsest to finest, each as horizontal, vertical, diagonal:

    sizes [4, 4, 4, 4, 16, 16, 16, 49, 49, 49, 196, 196, 196]
"""

from __future__ import annotations

import numpy as np

from .grouping import GroupPartition

__all__ = [
    "IMAGE_SIDE",
    "NUM_COEFFS",
    "GROUP_SIZES",
    "GROUP_NAMES",
    "FINEST_DETAIL_GROUPS",
    "haar_forward",
    "inverse_haar",
    "wavelet_partition",
]

IMAGE_SIDE = 28
NUM_COEFFS = 799
GROUP_SIZES = (4, 4, 4, 4, 16, 16, 16, 49, 49, 49, 196, 196, 196)
GROUP_NAMES = (
    "approx",
    "level1-h", "level1-v", "level1-d",
    "level2-h", "level2-v", "level2-d",
    "level3-h", "level3-v", "level3-d",
    "level4-h", "level4-v", "level4-d",
)
# level 4 holds the finest (highest-frequency) detail bands
FINEST_DETAIL_GROUPS = (10, 11, 12)

_S = 1.0 / np.sqrt(2.0)
# band side lengths produced by each analysis step, finest first
_BAND_SIDES = (14, 7, 4, 2)


def _analyze(a: np.ndarray):
    """One orthonormal Haar step on an even-sided square band."""
    col_lo = (a[:, 0::2] + a[:, 1::2]) * _S
    col_hi = (a[:, 0::2] - a[:, 1::2]) * _S
    ll = (col_lo[0::2] + col_lo[1::2]) * _S
    v = (col_lo[0::2] - col_lo[1::2]) * _S
    h = (col_hi[0::2] + col_hi[1::2]) * _S
    d = (col_hi[0::2] - col_hi[1::2]) * _S
    return ll, h, v, d


def _synthesize(ll, h, v, d) -> np.ndarray:
    col_lo = np.empty((2 * ll.shape[0], ll.shape[1]))
    col_hi = np.empty_like(col_lo)
    col_lo[0::2] = (ll + v) * _S
    col_lo[1::2] = (ll - v) * _S
    col_hi[0::2] = (h + d) * _S
    col_hi[1::2] = (h - d) * _S
    a = np.empty((col_lo.shape[0], 2 * col_lo.shape[1]))
    a[:, 0::2] = (col_lo + col_hi) * _S
    a[:, 1::2] = (col_lo - col_hi) * _S
    return a


def _pad_replicate(a: np.ndarray) -> np.ndarray:
    return np.pad(a, ((0, 1), (0, 1)), mode="edge")


def haar_forward(image: np.ndarray) -> np.ndarray:
    """Transform a 28x28 image into the 799-coefficient vector."""
    img = np.asarray(image, dtype=np.float64)
    if img.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise ValueError(f"expected a {IMAGE_SIDE}x{IMAGE_SIDE} image, got shape {img.shape}")
    details = []  # finest first while analyzing
    band = img
    for side in _BAND_SIDES:
        if band.shape[0] % 2 == 1:
            band = _pad_replicate(band)
        ll, h, v, d = _analyze(band)
        assert ll.shape == (side, side)
        details.append((h, v, d))
        band = ll
    pieces = [band.ravel()]  # 2x2 approximation
    for h, v, d in reversed(details):  # coarsest level first
        pieces.extend((h.ravel(), v.ravel(), d.ravel()))
    coeffs = np.concatenate(pieces)
    assert coeffs.size == NUM_COEFFS
    return coeffs


def inverse_haar(coeffs: np.ndarray) -> np.ndarray:
    """Exact synthesis inverse of haar_forward; padding regions are discarded.

    Zeroing a group's coefficients before calling this reconstructs the
    image as it would look without that band.
    """
    c = np.asarray(coeffs, dtype=np.float64).ravel()
    if c.size != NUM_COEFFS:
        raise ValueError(f"expected {NUM_COEFFS} coefficients, got {c.size}")
    offsets = np.concatenate([[0], np.cumsum(GROUP_SIZES)])

    def block(g: int, side: int) -> np.ndarray:
        return c[offsets[g] : offsets[g + 1]].reshape(side, side)

    band = block(0, 2)
    # groups are ordered coarsest detail level first; synthesize upward
    for lvl, side in enumerate(reversed(_BAND_SIDES)):  # side of the detail bands
        g = 1 + 3 * lvl
        h, v, d = (block(g + j, side) for j in range(3))
        band = _synthesize(band, h, v, d)
        if band.shape[0] in (8,):  # undo the 7 -> 8 padding
            band = band[:7, :7]
    return band


def wavelet_partition() -> GroupPartition:
    """The 13 coefficient groups as contiguous column blocks."""
    return GroupPartition.contiguous(GROUP_SIZES, GROUP_NAMES)
