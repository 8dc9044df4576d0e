"""Segment-based tuple sampling with per-frame augmentation, optional frame
shuffling, and 4-way order-label assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .synth import Video

CROP_SCALE_RANGE = (0.6, 1.0)
BRIGHTNESS_LIMIT = 0.2
CONTRAST_RANGE = (0.8, 1.2)
FLIP_PROBABILITY = 0.5
BLUR_PROBABILITY = 0.5
SHUFFLE_PROBABILITY = 0.5

# (anchor shuffled?, positive shuffled?) -> class; matches label = 2a + p
ORDER_CLASSES = {
    (False, False): 0,
    (False, True): 1,
    (True, False): 2,
    (True, True): 3,
}


@dataclass(frozen=True)
class AugParams:
    """One frame's augmentation draw. Applying it is fully deterministic."""

    crop_top: int
    crop_left: int
    crop_h: int
    crop_w: int
    flip: bool
    brightness: float
    contrast: float
    blur: bool

    @staticmethod
    def identity(height, width):
        return AugParams(0, 0, height, width, False, 0.0, 1.0, False)


@dataclass
class TuplePair:
    """Anchor and positive K-frame tuples sampled from one video.

    Indices are the sampled timeline positions (on the tiled timeline when
    T < K; resolve frames with index % T). When a shuffle flag is set the
    corresponding indices/frames/aug records carry a non-identity permutation,
    otherwise they are strictly increasing.
    """

    video_id: int
    anchor_indices: np.ndarray
    anchor_frames: np.ndarray  # (K, H, W), augmented
    anchor_aug: tuple
    positive_indices: np.ndarray
    positive_frames: np.ndarray
    positive_aug: tuple
    shuffle_anchor: bool
    shuffle_positive: bool
    order_label: int


def segment_bounds(t_count, k):
    """[b_i, e_i) ranges partitioning the (tiled) timeline into k segments."""
    if t_count < 1:
        raise ValueError("cannot segment an empty timeline")
    if k < 1:
        raise ValueError("need at least one segment")
    base = max(t_count, k)
    return [(i * base // k, (i + 1) * base // k) for i in range(k)]


def segment_indices(t_count, k, rng):
    """One uniformly drawn index per segment; strictly increasing."""
    bounds = segment_bounds(t_count, k)
    return np.array([int(rng.integers(lo, hi)) for lo, hi in bounds])


def assign_order_label(rng):
    """Independent 50% shuffle flags for the two tuples and the 4-way label."""
    shuffle_anchor = bool(rng.uniform() < SHUFFLE_PROBABILITY)
    shuffle_positive = bool(rng.uniform() < SHUFFLE_PROBABILITY)
    return shuffle_anchor, shuffle_positive, ORDER_CLASSES[(shuffle_anchor, shuffle_positive)]


def permutation_from_rank(k, rank):
    """Lexicographic unranking of permutations of range(k); rank 0 is identity."""
    items = list(range(k))
    out = []
    rank = int(rank)
    for slot in range(k, 0, -1):
        block = math.factorial(slot - 1)
        out.append(items.pop(rank // block))
        rank %= block
    return out


def non_identity_permutation(k, rng):
    """Uniform draw over the k! - 1 non-identity permutations (k >= 2)."""
    if k < 2:
        return list(range(k))
    if k > 20:
        raise ValueError("shuffle supports at most 20 frames per tuple")
    rank = int(rng.integers(1, math.factorial(k)))
    return permutation_from_rank(k, rank)


def draw_aug_params(height, width, rng):
    """Fresh augmentation parameters for one frame."""
    scl = float(rng.uniform(*CROP_SCALE_RANGE))
    crop_h = max(2, round(scl * height))
    crop_w = max(2, round(scl * width))
    top = int(rng.integers(0, height - crop_h + 1))
    left = int(rng.integers(0, width - crop_w + 1))
    flip = bool(rng.uniform() < FLIP_PROBABILITY)
    brightness = float(rng.uniform(-BRIGHTNESS_LIMIT, BRIGHTNESS_LIMIT))
    contrast = float(rng.uniform(*CONTRAST_RANGE))
    blur = bool(rng.uniform() < BLUR_PROBABILITY)
    return AugParams(top, left, crop_h, crop_w, flip, brightness, contrast, blur)


_RESIZE_GRID_CACHE = {}


def _resize_grid(in_extent, out_extent):
    key = (in_extent, out_extent)
    grid = _RESIZE_GRID_CACHE.get(key)
    if grid is None:
        centers = np.clip((np.arange(out_extent) + 0.5) * in_extent / out_extent - 0.5,
                          0.0, in_extent - 1.0)
        lo = np.floor(centers).astype(int)
        hi = np.minimum(lo + 1, in_extent - 1)
        grid = (lo, hi, centers - lo)
        _RESIZE_GRID_CACHE[key] = grid
    return grid


def _resize_bilinear(img, out_h, out_w):
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    y0, y1, wy = _resize_grid(in_h, out_h)
    x0, x1, wx = _resize_grid(in_w, out_w)
    wy = wy[:, None]
    wx = wx[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bottom = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bottom * wy


def _box_blur(img):
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            out += padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out / 9.0


def augment_frame(frame, params: AugParams):
    """Crop/resize, flip, brightness, mean-anchored contrast, box blur, clamp."""
    height, width = frame.shape
    if params.crop_h < 2 or params.crop_w < 2:
        raise ValueError(f"degenerate crop {params.crop_h}x{params.crop_w}")
    if params.crop_top + params.crop_h > height or params.crop_left + params.crop_w > width:
        raise ValueError("crop rectangle outside the frame")
    out = frame[params.crop_top:params.crop_top + params.crop_h,
                params.crop_left:params.crop_left + params.crop_w]
    out = _resize_bilinear(out, height, width)
    if params.flip:
        out = out[:, ::-1].copy()
    if params.brightness != 0.0:
        out = out + params.brightness
    if params.contrast != 1.0:
        mean = out.mean()
        out = mean + (out - mean) * params.contrast
    if params.blur:
        out = _box_blur(out)
    return np.clip(out, 0.0, 1.0)


def frame_at(video: Video, index):
    """Frame at a (possibly tiled) timeline index."""
    return video.frames[int(index) % video.frames.shape[0]]


def sample_view(video: Video, k, rng, share_augment=False):
    """One unshuffled K-frame tuple: indices, augmented frames, aug records."""
    t_count = video.frames.shape[0]
    indices = segment_indices(t_count, k, rng)
    height, width = video.frames.shape[1:]
    if share_augment:
        shared = draw_aug_params(height, width, rng)
        aug = tuple(shared for _ in range(k))
    else:
        aug = tuple(draw_aug_params(height, width, rng) for _ in range(k))
    frames = np.stack([augment_frame(frame_at(video, idx), aug[i])
                       for i, idx in enumerate(indices)])
    return indices, frames, aug


def sample_tuple_pair(video: Video, k, rng, share_augment=False) -> TuplePair:
    """Two independent segment samplings of one video plus shuffle/label.

    The anchor, positive and shuffle decisions each consume their own child
    stream of `rng`, so the two samplings are exchangeable.
    """
    if video.frames.shape[0] < 1:
        raise ValueError("video has no frames")
    rng_anchor, rng_positive, rng_shuffle = rng.spawn(3)
    a_idx, a_frames, a_aug = sample_view(video, k, rng_anchor, share_augment)
    p_idx, p_frames, p_aug = sample_view(video, k, rng_positive, share_augment)
    shuffle_anchor, shuffle_positive, label = assign_order_label(rng_shuffle)
    if shuffle_anchor:
        perm = non_identity_permutation(k, rng_shuffle)
        a_idx, a_frames = a_idx[perm], a_frames[perm]
        a_aug = tuple(a_aug[i] for i in perm)
    if shuffle_positive:
        perm = non_identity_permutation(k, rng_shuffle)
        p_idx, p_frames = p_idx[perm], p_frames[perm]
        p_aug = tuple(p_aug[i] for i in perm)
    return TuplePair(
        video_id=video.id,
        anchor_indices=a_idx, anchor_frames=a_frames, anchor_aug=a_aug,
        positive_indices=p_idx, positive_frames=p_frames, positive_aug=p_aug,
        shuffle_anchor=shuffle_anchor, shuffle_positive=shuffle_positive,
        order_label=label,
    )
