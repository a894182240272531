"""Synthetic search arrays, biased fixation sampling, and a guess-loop oracle.

Everything here exists so the pipeline can be exercised end to end with no
recorded data: seeded object-array stimuli in the style of a six-object
search display (distinct glyphs on a ring, equidistant from center), a
fixation sampler that lands on distractors in proportion to their visual
similarity to the target, and a deliberately naive re-implementation of
the guess loop used as an independent check on the fast one.
"""

import colorsys
import math
import os
from dataclasses import dataclass

import numpy as np

from .dataset import FixationSequence, Region, Trial
from .errors import ConfigError
from .imagery import write_image
from .tensorops import upsample_bilinear

GLYPHS = ("disc", "square", "triangle", "cross", "diamond")
BACKGROUND = 0.35


@dataclass(frozen=True)
class ArraySpec:
    """Geometry and seed of one synthetic object-array trial.

    With ``decoy`` set, one distractor is drawn with the target's shape and
    hue at reduced scale, giving the display a visually similar lure; all
    other objects differ from the target in both shape and hue either way.
    """

    n_objects: int = 6
    object_side: int = 24
    canvas_side: int = 160
    ring_radius: int = 52
    seed: int = 0
    decoy: bool = False
    target_scale: float = 1.3
    target_rotation_deg: float = 30.0


def _glyph_mask(shape, side, scale=1.0, rotation_deg=0.0):
    """Boolean (side, side) mask of a filled glyph, rotated about center."""
    r = 0.42 * side * scale
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    cx = cy = (side - 1) / 2.0
    x = xx - cx
    y = yy - cy
    if rotation_deg:
        th = math.radians(rotation_deg)
        xr = math.cos(th) * x + math.sin(th) * y
        yr = -math.sin(th) * x + math.cos(th) * y
        x, y = xr, yr
    if shape == "disc":
        return x * x + y * y <= r * r
    if shape == "square":
        return np.maximum(np.abs(x), np.abs(y)) <= r * 0.9
    if shape == "triangle":
        # equilateral, point up: inside the three edge half-planes
        verts = [
            (r * math.cos(a), r * math.sin(a))
            for a in (-math.pi / 2, math.pi / 6, 5 * math.pi / 6)
        ]
        inside = np.ones_like(x, dtype=bool)
        for i in range(3):
            x0, y0 = verts[i]
            x1, y1 = verts[(i + 1) % 3]
            inside &= (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0
        return inside
    if shape == "cross":
        arm = r * 0.36
        return ((np.abs(x) <= arm) & (np.abs(y) <= r)) | (
            (np.abs(y) <= arm) & (np.abs(x) <= r)
        )
    if shape == "diamond":
        return np.abs(x) + np.abs(y) <= r * 1.15
    raise ConfigError(f"unknown glyph shape {shape!r}")


def _paint(canvas, box, shape, rgb, scale=1.0, rotation_deg=0.0):
    x, y, w, h = box
    mask = _glyph_mask(shape, w, scale=scale, rotation_deg=rotation_deg)
    for ch in range(3):
        region = canvas[ch, y : y + h, x : x + w]
        region[mask] = rgb[ch]


def gen_array_trial(spec: ArraySpec, out_dir):
    """Render one seeded array trial; returns (Trial, styles dict).

    Writes ``<id>_search.png`` and ``<id>_target.png`` under ``out_dir``.
    The target image shows the target glyph at a different scale and
    rotation than its search-array instance.  ``styles`` maps candidate id
    to its (shape, hue) assignment, which similarity scoring and tests use
    to know which distractor is the lure.
    """
    n = spec.n_objects
    side = spec.object_side
    cs = spec.canvas_side
    if n < 2 or n > 26:
        raise ConfigError(f"n_objects must be in 2..26, got {n}")
    if 2.0 * spec.ring_radius * math.sin(math.pi / n) < side * 1.2:
        raise ConfigError(
            f"ring of {n} objects at radius {spec.ring_radius} overlaps "
            f"{side} px glyph boxes"
        )
    if spec.ring_radius + side // 2 + 2 > cs // 2:
        raise ConfigError(
            f"canvas {cs} too small for ring radius {spec.ring_radius} "
            f"plus {side} px objects"
        )
    rng = np.random.default_rng(spec.seed)
    trial_id = f"arr{spec.seed:06d}"

    # distinct (shape, hue) per object: shapes cycle, hues are a shuffled wheel
    shape_order = list(GLYPHS)
    rng.shuffle(shape_order)
    hue0 = float(rng.uniform(0.0, 1.0))
    hues = [(hue0 + k / n) % 1.0 for k in range(n)]
    rng.shuffle(hues)
    styles = [(shape_order[k % len(shape_order)], hues[k]) for k in range(n)]

    target_idx = int(rng.integers(n))
    decoy_idx = None
    if spec.decoy:
        choices = [k for k in range(n) if k != target_idx]
        decoy_idx = int(choices[int(rng.integers(len(choices)))])
        styles[decoy_idx] = styles[target_idx]

    theta0 = float(rng.uniform(0.0, 2.0 * math.pi))
    canvas = np.full((3, cs, cs), BACKGROUND, dtype=np.float32)
    regions = []
    for k in range(n):
        ang = theta0 + 2.0 * math.pi * k / n
        cxk = cs / 2.0 + spec.ring_radius * math.cos(ang)
        cyk = cs / 2.0 + spec.ring_radius * math.sin(ang)
        box = (int(round(cxk)) - side // 2, int(round(cyk)) - side // 2, side, side)
        shape, hue = styles[k]
        rgb = colorsys.hsv_to_rgb(hue, 0.9, 0.9)
        scale = 0.72 if k == decoy_idx else 1.0
        _paint(canvas, box, shape, rgb, scale=scale)
        regions.append(Region(id=f"obj{k}", box=box))

    t_side = 2 * side
    target_canvas = np.full((3, t_side, t_side), BACKGROUND, dtype=np.float32)
    t_shape, t_hue = styles[target_idx]
    rot = spec.target_rotation_deg + float(rng.uniform(-10.0, 10.0))
    _paint(
        target_canvas, (0, 0, t_side, t_side), t_shape,
        colorsys.hsv_to_rgb(t_hue, 0.9, 0.9),
        scale=spec.target_scale / 2.0, rotation_deg=rot,
    )

    search_path = os.path.join(out_dir, f"{trial_id}_search.png")
    target_path = os.path.join(out_dir, f"{trial_id}_target.png")
    write_image(search_path, canvas)
    write_image(target_path, target_canvas)
    trial = Trial(
        id=trial_id,
        task_type="array",
        target_image=target_path,
        search_image=search_path,
        target_box=regions[target_idx].box,
        candidate_regions=tuple(regions),
        imagenet_class=None,
        image_size=(cs, cs),
    )
    style_map = {f"obj{k}": styles[k] for k in range(n)}
    style_map["__decoy__"] = f"obj{decoy_idx}" if decoy_idx is not None else None
    return trial, style_map


def candidate_similarity(trial, search_rgb, target_rgb):
    """Pixel-space NCC of each non-target candidate crop vs the target image.

    The target rendering is resampled to the candidate box size; both crops
    are mean-subtracted and compared by cosine.  Deliberately independent
    of any network so fixation bias does not presuppose the model under
    evaluation.
    """
    target_id = trial.target_id()
    out = {}
    for cand in trial.candidate_regions:
        if cand.id == target_id:
            continue
        x, y, w, h = cand.box
        crop = np.asarray(search_rgb[:, y : y + h, x : x + w], dtype=np.float64)
        tmpl = np.stack(
            [upsample_bilinear(ch, h, w) for ch in np.asarray(target_rgb, dtype=np.float32)]
        ).astype(np.float64)
        a = crop - crop.mean()
        b = tmpl - tmpl.mean()
        denom = np.sqrt((a * a).sum()) * np.sqrt((b * b).sum())
        out[cand.id] = float((a * b).sum() / denom) if denom > 0 else 0.0
    return out


def sample_fixations(trial, beta, sim, count, seed) -> FixationSequence:
    """Draw ``count`` error fixations on non-target candidates.

    Sampling is without replacement with probability proportional to
    exp(beta * similarity); beta 0 is uniform, large beta always takes the
    most similar distractor first.  Each fixation lands at the candidate's
    center plus a small seeded jitter that stays inside its box.
    """
    target_id = trial.target_id()
    pool = [c for c in trial.candidate_regions if c.id != target_id]
    if count > len(pool):
        raise ConfigError(
            f"asked for {count} error fixations but only {len(pool)} distractors"
        )
    missing = [c.id for c in pool if c.id not in sim]
    if missing:
        raise ConfigError(f"similarity scores missing for {missing}")
    rng = np.random.default_rng(seed)
    points = []
    remaining = list(pool)
    for _ in range(count):
        scores = np.array([sim[c.id] for c in remaining], dtype=np.float64)
        logit = beta * scores
        logit -= logit.max()
        p = np.exp(logit)
        p /= p.sum()
        pick = int(rng.choice(len(remaining), p=p))
        cand = remaining.pop(pick)
        x, y, w, h = cand.box
        cx, cy = x + w // 2, y + h // 2
        jx = min(3, max(1, w // 2 - 1))
        jy = min(3, max(1, h // 2 - 1))
        px = int(cx + rng.integers(-jx, jx + 1))
        py = int(cy + rng.integers(-jy, jy + 1))
        points.append((px, py))
    return FixationSequence(subject="synth", trial=trial.id, points=tuple(points))


def oracle_guess_count(map2d, trial, elim_side, budget, excluded=()):
    """Naive full-scan re-simulation of the guess loop; 1-based index or None.

    Shares no code with the fast loop: candidate scores come from explicit
    per-pixel scans and the natural-image branch rescans the whole map each
    step.  Raster tie-breaking is reproduced by scanning rows before
    columns.  Only meant for tests and small maps.
    """
    if budget < 1:
        raise ConfigError(f"budget must be >= 1, got {budget}")
    m = np.asarray(map2d, dtype=np.float64)
    h, w = m.shape
    if trial.task_type == "array":
        remaining = [c for c in trial.candidate_regions if c.id not in set(excluded)]
        if not remaining:
            raise ConfigError(f"trial {trial.id}: no candidates remaining to guess")
        target_id = trial.target_id()
        for guess_no in range(1, budget + 1):
            if not remaining:
                return None
            best_key, best_cand = None, None
            for cand in remaining:
                x, y, bw, bh = cand.box
                score, pos = None, None
                for yy in range(y, min(y + bh, h)):
                    for xx in range(x, min(x + bw, w)):
                        if score is None or m[yy, xx] > score:
                            score, pos = m[yy, xx], (yy, xx)
                key = (-score, pos)
                if best_key is None or key < best_key:
                    best_key, best_cand = key, cand
            if best_cand.id == target_id:
                return guess_no
            remaining = [c for c in remaining if c.id != best_cand.id]
        return None
    alive = np.ones((h, w), dtype=bool)
    half = elim_side // 2
    tx, ty, tw, th = trial.target_box
    for guess_no in range(1, budget + 1):
        best, pos = None, None
        for yy in range(h):
            for xx in range(w):
                if alive[yy, xx] and (best is None or m[yy, xx] > best):
                    best, pos = m[yy, xx], (yy, xx)
        if pos is None:
            return None
        gy, gx = pos
        if tx <= gx < tx + tw and ty <= gy < ty + th:
            return guess_no
        alive[max(0, gy - half) : gy + half + 1, max(0, gx - half) : gx + half + 1] = False
    return None
