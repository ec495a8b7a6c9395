"""Depth-coherence masks for square patches.

For a pixel and its ``size`` x ``size`` neighbourhood, the rendered model
depth decides which neighbours belong to the same surface as the centre
(the *valid* pixels).  Only those take part in the similarity score and its
gradient.

Steps per patch:

1. ``dd = depth - depth[centre]`` over covered cells.
2. Split ``dd`` into a near cluster and a far cluster by 1D two-means,
   seeded at 0 and ``max(dd)``, with one refinement pass.
3. ``sigma_hat`` is the ``dd`` of the near-cluster cell farthest from the
   centre (ties: larger ``|dd|``, then row-major order).
4. A cell is valid when ``|dd - sigma_hat| < 10 * |dd - max(dd)|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster import DepthMap

FACTOR = 10.0
FLAT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class DepthPatch:
    values: np.ndarray   # (size, size); non-finite where the model is absent

    def __post_init__(self):
        v = np.asarray(self.values, float)
        object.__setattr__(self, "values", v)
        s = v.shape[0]
        if v.shape != (s, s) or s < 3 or s % 2 == 0:
            raise ValueError("patch must be square with odd size >= 3")
        if not np.isfinite(v[s // 2, s // 2]):
            raise ValueError("patch centre must be covered")

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def covered(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def center(self) -> float:
        c = self.size // 2
        return float(self.values[c, c])


def depth_differences(patch: DepthPatch) -> np.ndarray:
    """``dd`` per cell; NaN marks uncovered cells."""
    with np.errstate(invalid="ignore"):
        return np.where(patch.covered, patch.values - patch.center, np.nan)


def _is_flat(max_dd, center_depth):
    return max_dd <= FLAT_TOL * abs(center_depth)


def cluster_dd(dd, center_depth: float = 1.0):
    """Two-cluster split of ``dd`` values.

    Returns boolean membership arrays ``(near, far)`` shaped like ``dd``;
    NaN entries are in neither.  ``far`` is empty for a flat patch.
    """
    dd = np.asarray(dd, float)
    finite = np.isfinite(dd)
    if not finite.any():
        raise ValueError("no covered values to cluster")
    top = dd[finite].max()
    if _is_flat(top, center_depth):
        return finite.copy(), np.zeros_like(finite)
    c_near, c_far = 0.0, top
    with np.errstate(invalid="ignore"):
        far = finite & (np.abs(dd - c_far) < np.abs(dd - c_near))
        near = finite & ~far
        c_near, c_far = dd[near].mean(), dd[far].mean()
        far = finite & (np.abs(dd - c_far) < np.abs(dd - c_near))
    return finite & ~far, far


def sigma_hat(dd, near) -> float:
    s = dd.shape[0]
    c = s // 2
    best = None
    for r in range(s):
        for k in range(s):
            if not near[r, k]:
                continue
            key = ((r - c) ** 2 + (k - c) ** 2, abs(dd[r, k]))
            if best is None or key > best[0]:
                best = (key, dd[r, k])
    return float(best[1])


def compute_mask(patch: DepthPatch) -> np.ndarray:
    """Valid-pixel mask of one patch (boolean ``size`` x ``size``)."""
    dd = depth_differences(patch)
    near, far = cluster_dd(dd, patch.center)
    covered = patch.covered
    c = patch.size // 2
    if not far.any():
        mask = covered.copy()
    else:
        top = np.nanmax(dd)
        sh = sigma_hat(dd, near)
        with np.errstate(invalid="ignore"):
            mask = covered & (np.abs(dd - sh) < FACTOR * np.abs(dd - top))
    mask[c, c] = True
    return mask


# ---------------------------------------------------------------------------
# whole-image evaluation
# ---------------------------------------------------------------------------

def patch_offsets(size: int):
    r = size // 2
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    return dy.ravel(), dx.ravel()


def gather_patches(arr, size, fill=np.nan):
    """Stack of shifted copies: ``out[k, y, x] = arr[y + dy_k, x + dx_k]``."""
    r = size // 2
    H, W = arr.shape
    padded = np.full((H + 2 * r, W + 2 * r), fill, dtype=np.result_type(arr, type(fill)))
    padded[r:r + H, r:r + W] = arr
    dy, dx = patch_offsets(size)
    return np.stack([padded[r + a:r + a + H, r + b:r + b + W] for a, b in zip(dy, dx)])


def image_masks(depthmap: DepthMap, size: int = 5) -> np.ndarray:
    """Masks for every pixel at once, shape ``(size*size, H, W)``.

    Entry ``[k, y, x]`` says whether neighbour ``k`` (row-major within the
    patch) of pixel ``(y, x)`` is valid.  Uncovered centres get all-False.
    """
    depth = np.where(depthmap.covered, depthmap.depth, np.nan)
    P = gather_patches(depth, size)                 # (K, H, W)
    K = size * size
    kc = K // 2
    center = P[kc]
    has_center = np.isfinite(center)
    cov = np.isfinite(P) & has_center
    with np.errstate(invalid="ignore"):
        dd = np.where(cov, P - center, np.nan)
        top = np.where(has_center, np.nanmax(np.where(cov, dd, -np.inf), axis=0), 0.0)
        flat = ~has_center | (top <= FLAT_TOL * np.abs(np.where(has_center, center, 0.0)))

        far = cov & (np.abs(dd - top) < np.abs(dd))
        near = cov & ~far
        c_near = _masked_mean(dd, near)
        c_far = _masked_mean(dd, far)
        far = cov & (np.abs(dd - c_far) < np.abs(dd - c_near))
        near = cov & ~far

    dy, dx = patch_offsets(size)
    dist2 = dy**2 + dx**2
    sh = np.full(center.shape, np.nan)
    unset = ~flat
    absdd = np.abs(np.nan_to_num(dd, nan=0.0))
    for level in np.unique(dist2)[::-1]:
        cells = np.flatnonzero(dist2 == level)      # row-major order
        cand = near[cells] & unset
        any_c = cand.any(axis=0)
        if not any_c.any():
            continue
        score = np.where(cand, absdd[cells], -1.0)
        pick = np.argmax(score, axis=0)
        val = np.take_along_axis(dd[cells], pick[None], axis=0)[0]
        sh = np.where(any_c, val, sh)
        unset &= ~any_c

    with np.errstate(invalid="ignore"):
        rule = np.abs(dd - sh) < FACTOR * np.abs(dd - top)
    masks = np.where(flat, cov, cov & rule)
    masks[kc] = has_center
    return masks


def _masked_mean(vals, sel):
    n = sel.sum(axis=0)
    s = np.where(sel, vals, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, s / np.maximum(n, 1), 0.0)


def valid_count_map(masks: np.ndarray) -> np.ndarray:
    """Number of valid neighbours per pixel, the quantity shown in debug heatmaps."""
    return masks.sum(axis=0).astype(np.int64)
