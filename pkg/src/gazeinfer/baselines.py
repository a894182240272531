"""Null models the inference engine is measured against.

Three reference strategies share the engine's guess loop so comparisons
stay apples-to-apples: uniform random guessing (chance), pixel-space
template matching, and bottom-up Itti-Koch saliency.  The fourth null,
an untrained network, is just the ordinary pipeline handed a
random-weight bundle, so it needs no code of its own here.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve, correlate1d, maximum_filter

from .engine import Guess, GuessTrace
from .errors import ConfigError, ShapeMismatchError
from .tensorops import minmax_normalize, upsample_bilinear

BINOMIAL_5TAP = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

# Maps whose total range falls below this are treated as flat.  Inputs
# are unit-range images, so anything smaller than 1e-7 is arithmetic
# residue (e.g. a zero-mean filter on a constant field), not structure;
# without the floor, minmax rescaling would amplify that residue to 1.
FLAT_RANGE = 1e-7


def chance_expected_guesses(n_candidates: int) -> float:
    """Closed-form mean of uniform guessing without replacement: (n+1)/2."""
    if n_candidates < 1:
        raise ConfigError(f"need at least one candidate, got {n_candidates}")
    return (n_candidates + 1) / 2.0


def chance_trace(trial, rng_seed, elim_side: int = 200, budget: int = 50,
                 excluded_candidates=()) -> GuessTrace:
    """One random-guesser trace under the engine's elimination mechanics.

    Array trials draw uniformly from the remaining candidates without
    replacement; natural trials draw uniformly from the non-eliminated
    pixels, and a miss blanks the same elim_side square the engine uses.
    Seeded and reproducible.
    """
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    if elim_side < 1:
        raise ConfigError(f"elim_side must be >= 1, got {elim_side}")
    rng = np.random.default_rng(rng_seed)
    guesses = []
    success = None
    if trial.task_type == "array":
        remaining = [c for c in trial.candidate_regions
                     if c.id not in set(excluded_candidates)]
        if not remaining:
            raise ConfigError(f"trial {trial.id}: no candidates remaining to guess")
        target_id = trial.target_id()
        for step in range(1, min(budget, len(remaining)) + 1):
            cand = remaining.pop(int(rng.integers(len(remaining))))
            x, y, w, h = cand.box
            guesses.append(Guess(x=x + w // 2, y=y + h // 2, candidate_id=cand.id))
            if cand.id == target_id:
                success = step
                break
    else:
        w, h = trial.image_size
        alive = np.ones((h, w), dtype=bool)
        half = elim_side // 2
        bx, by, bw, bh = trial.target_box
        for step in range(1, budget + 1):
            flat = np.flatnonzero(alive)
            if flat.size == 0:
                break
            gy, gx = divmod(int(flat[int(rng.integers(flat.size))]), w)
            guesses.append(Guess(x=gx, y=gy))
            if bx <= gx < bx + bw and by <= gy < by + bh:
                success = step
                break
            alive[max(0, gy - half): gy + half + 1,
                  max(0, gx - half): gx + half + 1] = False
    return GuessTrace(trial_id=trial.id, guesses=tuple(guesses),
                      success_index=success, budget=budget)


def template_match_map(patch_pixels, search) -> np.ndarray:
    """Pixel-space template similarity: the no-network null model.

    Textbook normalized cross-correlation of the raw 3-channel pixels:
    patch and each zero-padded window are mean-subtracted before the
    cosine, so flat regions (and a flat image) score exactly zero rather
    than echoing the padding geometry.  Negatives clamped, result
    minmax-normalized; the window sits at the map location the same way
    the feature-space correlator places it.
    """
    patch = np.asarray(patch_pixels, dtype=np.float64)
    img = np.asarray(search, dtype=np.float64)
    if patch.ndim != 3 or img.ndim != 3 or patch.shape[0] != img.shape[0]:
        raise ShapeMismatchError(
            f"template_match_map expects matching (3, H, W) tensors, "
            f"got {patch.shape} and {img.shape}"
        )
    c, ph, pw = patch.shape
    _, h, w = img.shape
    if ph > h or pw > w:
        raise ShapeMismatchError(f"patch {patch.shape} larger than search image {img.shape}")
    p0 = patch - patch.mean()
    pnorm = math.sqrt(float((p0 * p0).sum()))
    if pnorm == 0.0:
        return np.zeros((h, w), dtype=np.float32)
    top, left = (ph - 1) // 2, (pw - 1) // 2
    padded = np.zeros((c, h + ph - 1, w + pw - 1), dtype=np.float64)
    padded[:, top : top + h, left : left + w] = img
    win = np.lib.stride_tricks.sliding_window_view(padded, (c, ph, pw))[0]
    dot = np.einsum("hwcij,cij->hw", win, p0, optimize=True)
    s1 = np.einsum("hwcij->hw", win, optimize=True)
    s2 = np.einsum("hwcij,hwcij->hw", win, win, optimize=True)
    n = c * ph * pw
    wnorm = np.sqrt(np.maximum(s2 - s1 * s1 / n, 0.0))
    wmax = float(wnorm.max())
    if wmax == 0.0:
        return np.zeros((h, w), dtype=np.float32)
    wtol = 1e-7 * wmax
    m = np.where(wnorm > wtol, dot / (np.maximum(wnorm, wtol) * pnorm), 0.0)
    m = np.maximum(m, 0.0, out=m)
    return minmax_normalize(m.astype(np.float32))


@dataclass(frozen=True)
class SaliencyConfig:
    """Parameters of the bottom-up saliency model.

    Defaults follow the classic architecture: a 9-level dyadic pyramid,
    center scales {2,3,4} against surrounds delta {3,4} deeper, and four
    Gabor orientations at a 7 px wavelength.  The local-maxima window of
    the normalization step is max(3, map_width // 10).
    """

    pyramid_levels: int = 9
    center_scales: tuple = (2, 3, 4)
    deltas: tuple = (3, 4)
    orientations: tuple = (0.0, 45.0, 90.0, 135.0)
    gabor_wavelength: float = 7.0

    def __post_init__(self):
        if self.pyramid_levels < 2:
            raise ConfigError("pyramid_levels must be >= 2")
        deepest = max(self.center_scales) + max(self.deltas)
        if deepest > self.pyramid_levels - 1:
            raise ConfigError(
                f"surround level {deepest} exceeds deepest pyramid level "
                f"{self.pyramid_levels - 1}"
            )


def _downsample(ch):
    sm = correlate1d(ch, BINOMIAL_5TAP, axis=0, mode="nearest")
    sm = correlate1d(sm, BINOMIAL_5TAP, axis=1, mode="nearest")
    return sm[::2, ::2]


def _pyramid(ch, levels):
    out = [np.asarray(ch, dtype=np.float64)]
    for _ in range(levels - 1):
        nxt = _downsample(out[-1])
        if min(nxt.shape) < 2:
            break
        out.append(nxt)
    return out


def _gabor_kernels(cfg):
    sigma = 0.56 * cfg.gabor_wavelength  # one-octave bandwidth
    half = int(math.ceil(2.0 * sigma))
    ax = np.arange(-half, half + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    kernels = []
    for deg in cfg.orientations:
        th = math.radians(deg)
        xr = xx * math.cos(th) + yy * math.sin(th)
        g = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
        g = g * np.cos(2.0 * math.pi * xr / cfg.gabor_wavelength)
        g -= g.mean()  # DC-free so flat fields give zero response
        kernels.append(g)
    return kernels


def _normalize_map(m):
    """The N(.) operator: minmax to [0,1], then promote unique peaks.

    The map is scaled by (1 - mean of local maxima excluding the global
    one)^2, so a single outstanding peak keeps its weight while maps
    littered with comparable peaks are suppressed.  Near-flat maps (range
    below FLAT_RANGE) are zeroed outright.
    """
    m = np.asarray(m, dtype=np.float64)
    if float(m.max() - m.min()) <= FLAT_RANGE:
        return np.zeros_like(m)
    lo, hi = float(m.min()), float(m.max())
    m = (m - lo) / (hi - lo)
    win = max(3, m.shape[1] // 10)
    local = maximum_filter(m, size=win, mode="nearest")
    peak_vals = m[(m == local) & (m > 0)]
    others = peak_vals[peak_vals < peak_vals.max()]
    mbar = float(others.mean()) if others.size else 0.0
    return m * (1.0 - mbar) ** 2


def _resize(m, h, w):
    return upsample_bilinear(np.asarray(m, dtype=np.float32), h, w).astype(np.float64)


def _center_surround(pyr, pairs):
    """|center - upsampled surround| maps, one per (c, s) pair."""
    maps = []
    for (c, s) in pairs:
        center = pyr[c]
        surround = _resize(pyr[s], center.shape[0], center.shape[1])
        maps.append(np.abs(center - surround))
    return maps


def ittikoch_saliency(image, cfg: SaliencyConfig = None) -> np.ndarray:
    """Bottom-up saliency of an RGB image, in [0, 1] at image resolution.

    Intensity, color-opponency and Gabor orientation channels are computed
    on a dyadic Gaussian pyramid; center-surround differences across the
    configured scale pairs pass through the peak-promoting normalization,
    sum into three conspicuity maps, and average into the saliency map.

    The color channels are one-sided rectified opponencies,
    RG = clamp(r - g) / max(r, g, b) and BY = clamp(b - min(r, g)) / max:
    the symmetric double-opponent form scores a lone red disc and the
    green discs around it identically, which would leave color pop-out
    unexpressed.

    The pyramid auto-shortens on small images; an image too small for any
    configured (center, surround) pair is an error.
    """
    if cfg is None:
        cfg = SaliencyConfig()
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeMismatchError(f"ittikoch_saliency expects (3, H, W), got {img.shape}")
    _, h, w = img.shape

    pyr_r = _pyramid(img[0], cfg.pyramid_levels)
    pyr_g = _pyramid(img[1], cfg.pyramid_levels)
    pyr_b = _pyramid(img[2], cfg.pyramid_levels)
    levels = len(pyr_r)
    pairs = [(c, c + d) for c in cfg.center_scales for d in cfg.deltas
             if c + d <= levels - 1]
    if not pairs:
        raise ShapeMismatchError(
            f"image {h}x{w} supports only {levels} pyramid levels; "
            f"no configured (center, surround) pair fits"
        )

    pyr_i, pyr_rg, pyr_by = [], [], []
    for (r, g, b) in zip(pyr_r, pyr_g, pyr_b):
        mx = np.maximum(np.maximum(r, g), b)
        denom = np.where(mx > 1e-6, mx, 1.0)
        pyr_i.append((r + g + b) / 3.0)
        pyr_rg.append(np.where(mx > 1e-6, np.maximum(r - g, 0.0) / denom, 0.0))
        pyr_by.append(np.where(mx > 1e-6, np.maximum(b - np.minimum(r, g), 0.0) / denom, 0.0))

    kernels = _gabor_kernels(cfg)
    pyr_orient = [
        [np.abs(convolve(lev, k, mode="nearest")) for lev in pyr_i] for k in kernels
    ]

    # conspicuity maps live at the finest center scale: summing any
    # coarser quantizes peak positions by that level's stride
    common = min(min(cfg.center_scales), levels - 1)
    ch_, cw_ = pyr_i[common].shape

    def conspicuity(channel_pyramids):
        total = np.zeros((ch_, cw_), dtype=np.float64)
        for pyr in channel_pyramids:
            for cs in _center_surround(pyr, pairs):
                total += _resize(_normalize_map(cs), ch_, cw_)
        return _normalize_map(total)

    consp = [
        conspicuity([pyr_i]),
        conspicuity([pyr_rg, pyr_by]),
        conspicuity(pyr_orient),
    ]
    combined = (consp[0] + consp[1] + consp[2]) / 3.0
    sal = _resize(combined, h, w)
    if float(sal.max() - sal.min()) <= FLAT_RANGE:
        return np.zeros((h, w), dtype=np.float32)
    return minmax_normalize(sal.astype(np.float32))
