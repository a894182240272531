"""The inference pipeline: error fixations in, target evidence out.

For each error fixation a small patch is cut around the fixated spot and
pushed through the network (the prior branch).  The search image, with all
fixated regions blacked out, goes through the same network once (the
likelihood branch).  At each tapped layer the patch tensor is slid over
the search tensor as a cosine kernel, giving one similarity map per layer;
the per-layer maps are fused, the per-fixation maps are combined, and the
result is a single map over the search image whose peaks say where the
target most plausibly is.  A separate head accumulates the patch
classifier outputs into a category ranking.

Guessing works by argmax-and-eliminate on that map: propose the hottest
remaining location, stop on a hit, otherwise remove the guessed candidate
(object arrays) or blank a square around the guess (natural images) and
repeat.
"""

from dataclasses import dataclass

import numpy as np

from .convnet import forward_taps, preprocess_image
from .errors import ConfigError, ShapeMismatchError
from .tensorops import minmax_normalize, upsample_bilinear, xcorr_cosine

DEFAULT_TAP_ORDER = ("T1", "T2", "T3", "T4", "T5", "T6", "T7")


@dataclass(frozen=True)
class FusionConfig:
    """Knobs of the map pipeline; defaults follow the summed-max design.

    ``normalize_maps`` rescales every per-layer map to [0, 1] before layer
    fusion.  Off by default: raw cosine responses are already commensurate
    across layers, while per-layer minmax forces every layer's peak to
    exactly 1.0 and the fused argmax then degrades to a tie-break among
    layers, dragging localization to the coarsest tap's grid.
    """

    layer_combine: str = "max"  # max | mean
    fixation_combine: str = "sum"  # sum | max | mean
    taps: tuple = DEFAULT_TAP_ORDER
    patch_side: int = 28
    clamp_negative: bool = True
    normalize_maps: bool = False
    similarity: str = "cosine"  # cosine | dot
    mask_side: int = 0  # natural-trial mask square; 0 means 2 * patch_side

    def __post_init__(self):
        if self.layer_combine not in ("max", "mean"):
            raise ConfigError(f"layer_combine must be max or mean, got {self.layer_combine!r}")
        if self.fixation_combine not in ("sum", "max", "mean"):
            raise ConfigError(
                f"fixation_combine must be sum, max or mean, got {self.fixation_combine!r}"
            )
        if not self.taps:
            raise ConfigError("taps must be non-empty")
        if self.patch_side < 8:
            raise ConfigError(f"patch_side must be >= 8, got {self.patch_side}")
        if self.similarity not in ("cosine", "dot"):
            raise ConfigError(f"similarity must be cosine or dot, got {self.similarity!r}")

    @property
    def effective_mask_side(self) -> int:
        return self.mask_side if self.mask_side > 0 else 2 * self.patch_side

    def echo(self) -> dict:
        """Flat dict of the settings, for report headers."""
        return {
            "layer_combine": self.layer_combine,
            "fixation_combine": self.fixation_combine,
            "taps": ",".join(self.taps),
            "patch_side": self.patch_side,
            "clamp_negative": self.clamp_negative,
            "normalize_maps": self.normalize_maps,
            "similarity": self.similarity,
            "mask_side": self.effective_mask_side,
        }


@dataclass(frozen=True)
class InferenceMap:
    values: np.ndarray  # (H, W) float32 over the search image
    trial_id: str
    fixation_count: int
    config: FusionConfig


@dataclass(frozen=True)
class Guess:
    x: int
    y: int
    candidate_id: object = None


@dataclass(frozen=True)
class GuessTrace:
    trial_id: str
    guesses: tuple  # of Guess
    success_index: object  # 1-based int, or None when the budget ran out
    budget: int


def extract_patch(image, fixation, side: int) -> np.ndarray:
    """Square crop of ``image`` (3, H, W) centered at fixation (x, y).

    The fixation sits at offset side//2 in the crop.  Rows and columns past
    the image border replicate the nearest edge pixel, so border fixations
    still yield full-size patches without injecting black.  The crop is
    raw image data; preprocessing happens where the network is invoked.
    """
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeMismatchError(f"extract_patch expects (3, H, W), got {img.shape}")
    x, y = int(fixation[0]), int(fixation[1])
    c, h, w = img.shape
    if not (0 <= x < w and 0 <= y < h):
        raise ShapeMismatchError(f"fixation ({x}, {y}) outside image {w}x{h}")
    half = side // 2
    rows = np.clip(np.arange(y - half, y - half + side), 0, h - 1)
    cols = np.clip(np.arange(x - half, x - half + side), 0, w - 1)
    return np.ascontiguousarray(img[:, rows[:, None], cols[None, :]])


def mask_regions(image, regions) -> np.ndarray:
    """Copy of ``image`` with every (x, y, w, h) rectangle set to zero.

    Rectangles are clipped to the image bounds; an empty region list
    returns an identical copy.
    """
    img = np.asarray(image, dtype=np.float32).copy()
    _, h, w = img.shape
    for (x, y, bw, bh) in regions:
        x0, y0 = max(0, int(x)), max(0, int(y))
        x1, y1 = min(w, int(x) + int(bw)), min(h, int(y) + int(bh))
        if x1 > x0 and y1 > y0:
            img[:, y0:y1, x0:x1] = 0.0
    return img


def _maps_from_taps(patch_taps, search_taps, cfg, out_shape):
    """Per-layer similarity maps given both branches' tap tensors."""
    maps = []
    for lab in cfg.taps:
        raw = xcorr_cosine(patch_taps[lab], search_taps[lab], method=cfg.similarity)
        if cfg.clamp_negative:
            raw = np.maximum(raw, 0.0, out=raw)
        up = upsample_bilinear(raw, out_shape[0], out_shape[1])
        if cfg.normalize_maps:
            up = minmax_normalize(up)
        maps.append(up)
    return maps


def similarity_maps(patch, masked_search, spec, bundle, cfg: FusionConfig):
    """One map per tap: where the masked search image looks like the patch.

    Both inputs are raw RGB in [0, 1]; they are preprocessed with the same
    bundle constants before the forward passes, so the two branches see
    identical statistics.  Maps come back at search-image resolution, in
    ``cfg.taps`` order.
    """
    patch_in = preprocess_image(patch, bundle)
    search_in = preprocess_image(masked_search, bundle)
    patch_taps = forward_taps(spec, bundle, patch_in, taps=cfg.taps)
    search_taps = forward_taps(spec, bundle, search_in, taps=cfg.taps)
    out_shape = (masked_search.shape[1], masked_search.shape[2])
    return _maps_from_taps(patch_taps, search_taps, cfg, out_shape)


def fuse_layers(maps, mode: str = "max") -> np.ndarray:
    """Pointwise max (default) or mean across the per-layer maps."""
    if len(maps) == 0:
        raise ConfigError("fuse_layers needs at least one map")
    stack = np.stack([np.asarray(m, dtype=np.float32) for m in maps])
    if mode == "max":
        return stack.max(axis=0)
    if mode == "mean":
        return stack.mean(axis=0, dtype=np.float64).astype(np.float32)
    raise ConfigError(f"unknown layer combine mode {mode!r}")


def accumulate_fixations(per_fixation_maps, mode: str = "sum") -> np.ndarray:
    """Combine per-fixation maps into one, independent of their order.

    Floating-point reduction order matters at the last bit, so the maps
    are first put into a canonical content order; any permutation of the
    input then reduces identically, which makes the order-independence
    exact rather than approximate.
    """
    if len(per_fixation_maps) == 0:
        raise ConfigError("accumulate_fixations needs at least one map")
    stack = [np.asarray(m, dtype=np.float32) for m in per_fixation_maps]
    stack.sort(key=lambda m: m.tobytes())
    arr = np.stack(stack)
    if mode == "sum":
        return arr.sum(axis=0, dtype=np.float64).astype(np.float32)
    if mode == "max":
        return arr.max(axis=0)
    if mode == "mean":
        return arr.mean(axis=0, dtype=np.float64).astype(np.float32)
    raise ConfigError(f"unknown fixation combine mode {mode!r}")


def fixation_mask_regions(trial, fixations, cfg):
    """Rectangles to black out: the fixated object, or a square fallback."""
    regions = []
    side = cfg.effective_mask_side
    half = side // 2
    for (x, y) in fixations:
        hit = None
        for cand in trial.candidate_regions:
            bx, by, bw, bh = cand.box
            if bx <= x < bx + bw and by <= y < by + bh:
                hit = cand.box
                break
        regions.append(hit if hit is not None else (x - half, y - half, side, side))
    return regions


def fixated_candidate_ids(trial, fixations):
    """Ids of candidates containing any of the fixations."""
    out = set()
    for (x, y) in fixations:
        for cand in trial.candidate_regions:
            bx, by, bw, bh = cand.box
            if bx <= x < bx + bw and by <= y < by + bh:
                out.add(cand.id)
    return out


def inference_map(trial, fixations, search_image, spec, bundle,
                  cfg: FusionConfig = None) -> InferenceMap:
    """Full map pipeline for one trial's error fixations.

    All fixated regions are blacked out of one shared search image, so the
    likelihood branch runs a single forward pass and the result cannot
    depend on fixation order.  Patches are cut from the unmasked image at
    each fixation.
    """
    if cfg is None:
        cfg = FusionConfig()
    if len(fixations) == 0:
        raise ConfigError("inference_map needs at least one error fixation")
    search = np.asarray(search_image, dtype=np.float32)
    masked = mask_regions(search, fixation_mask_regions(trial, fixations, cfg))
    search_taps = forward_taps(spec, bundle, preprocess_image(masked, bundle), taps=cfg.taps)
    out_shape = (search.shape[1], search.shape[2])
    per_fix = []
    for pt in fixations:
        patch = extract_patch(search, pt, cfg.patch_side)
        patch_taps = forward_taps(spec, bundle, preprocess_image(patch, bundle), taps=cfg.taps)
        maps = _maps_from_taps(patch_taps, search_taps, cfg, out_shape)
        per_fix.append(fuse_layers(maps, cfg.layer_combine))
    values = accumulate_fixations(per_fix, cfg.fixation_combine)
    return InferenceMap(
        values=values, trial_id=trial.id, fixation_count=len(fixations), config=cfg
    )


def _proposal_argmax(m, alive):
    """Raster-first argmax over non-eliminated pixels, or None."""
    if not alive.any():
        return None
    masked = np.where(alive, m, -np.inf)
    flat = int(np.argmax(masked))
    y, x = divmod(flat, m.shape[1])
    return x, y


def _candidate_score(m, box):
    """(max value inside box, raster position of that max)."""
    x, y, w, h = box
    sub = m[y : y + h, x : x + w]
    flat = int(np.argmax(sub))
    dy, dx = divmod(flat, sub.shape[1])
    return float(sub[dy, dx]), (y + dy, x + dx)


def _array_trace(m, trial, budget, excluded):
    remaining = [c for c in trial.candidate_regions if c.id not in excluded]
    if not remaining:
        raise ConfigError(f"trial {trial.id}: no candidates remaining to guess")
    target_id = trial.target_id()
    guesses = []
    success = None
    for step in range(1, min(budget, len(remaining)) + 1):
        best = None
        for cand in remaining:
            score, pos = _candidate_score(m, cand.box)
            key = (-score, pos)
            if best is None or key < best[0]:
                best = (key, pos, cand)
        _, (gy, gx), cand = best
        guesses.append(Guess(x=gx, y=gy, candidate_id=cand.id))
        if cand.id == target_id:
            success = step
            break
        remaining = [c for c in remaining if c.id != cand.id]
    return tuple(guesses), success


def _natural_trace(m, trial, elim_side, budget):
    work = np.array(m, dtype=np.float32)
    alive = np.ones(work.shape, dtype=bool)
    half = elim_side // 2
    bx, by, bw, bh = trial.target_box
    guesses = []
    success = None
    for step in range(1, budget + 1):
        pos = _proposal_argmax(work, alive)
        if pos is None:
            break
        gx, gy = pos
        guesses.append(Guess(x=gx, y=gy))
        if bx <= gx < bx + bw and by <= gy < by + bh:
            success = step
            break
        alive[max(0, gy - half) : gy + half + 1, max(0, gx - half) : gx + half + 1] = False
    return tuple(guesses), success


def infer_target(m, trial, elim_side: int = 200, budget: int = 50,
                 excluded_candidates=()) -> GuessTrace:
    """Argmax-and-eliminate guess loop over an inference map.

    Array trials guess whole candidates, scored by the map maximum inside
    each rectangle; a wrong guess removes that candidate.  Natural trials
    guess pixels; a wrong guess blanks an elim_side-sided square centered
    on it.  Success means hitting the target's candidate, or landing a
    pixel strictly inside the target rectangle.  All argmax ties resolve
    to the smallest (row, col), so traces are deterministic.

    ``excluded_candidates`` removes already-fixated candidates before the
    first guess.
    """
    values = m.values if isinstance(m, InferenceMap) else np.asarray(m, dtype=np.float32)
    if values.ndim != 2:
        raise ShapeMismatchError(f"inference map must be 2-D, got {values.shape}")
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    if elim_side < 1:
        raise ConfigError(f"elim_side must be >= 1, got {elim_side}")
    if trial.task_type == "array":
        guesses, success = _array_trace(values, trial, budget, set(excluded_candidates))
    else:
        guesses, success = _natural_trace(values, trial, elim_side, budget)
    return GuessTrace(
        trial_id=trial.id, guesses=guesses, success_index=success, budget=budget
    )


def infer_category(patches, spec, bundle, classify_fn=None):
    """Accumulated category ranking across fixation patches.

    Each raw RGB patch is preprocessed, resized to the bundle's classifier
    input side, and classified; per-class probabilities sum over patches.
    Returns (class ids descending by score, scores in that order).  Ties
    rank the smaller class id first.  ``classify_fn`` replaces the network
    call in tests.
    """
    if len(patches) == 0:
        raise ConfigError("infer_category needs at least one patch")
    if classify_fn is None:
        from .convnet import classify as _classify

        def classify_fn(patch):
            x = preprocess_image(patch, bundle)
            side = bundle.input_side
            if x.shape[1] != side or x.shape[2] != side:
                x = np.stack([upsample_bilinear(ch, side, side) for ch in x])
            return _classify(spec, bundle, x)

    total = None
    for patch in patches:
        p = np.asarray(classify_fn(patch), dtype=np.float64)
        total = p if total is None else total + p
    order = np.lexsort((np.arange(total.size), -total))
    return order.astype(np.int64), total[order]
