"""Trials, fixation sequences, and the JSONL manifest that carries them.

A dataset is one manifest file plus the images it references.  Manifest
lines are JSON objects of two kinds:

    {"kind": "trial", "id": ..., "task": "array" | "natural",
     "target_img": ..., "search_img": ..., "target_box": [x, y, w, h],
     "candidates": [{"id": ..., "box": [x, y, w, h]}, ...],
     "imagenet_class": int | null}

    {"kind": "fixations", "trial": ..., "subject": ...,
     "points": [[x, y], ...]}

Coordinates are integer pixels, origin top-left.  Image paths resolve
relative to the manifest.  Every structural invariant is checked at load
time and violations carry the offending line number.
"""

import json
import os
from dataclasses import dataclass

from .errors import ConfigError, ManifestError
from .imagery import image_extents


@dataclass(frozen=True)
class Region:
    id: str
    box: tuple  # (x, y, w, h)


@dataclass(frozen=True)
class Trial:
    id: str
    task_type: str  # "array" | "natural"
    target_image: str
    search_image: str
    target_box: tuple
    candidate_regions: tuple  # of Region; empty for natural trials
    imagenet_class: object  # int or None
    image_size: tuple  # (width, height) of the search image

    @property
    def target_region(self) -> Region:
        return Region(id=self.target_id(), box=self.target_box)

    def target_id(self):
        for cand in self.candidate_regions:
            if tuple(cand.box) == tuple(self.target_box):
                return cand.id
        return None

    def contains_point(self, x, y) -> bool:
        bx, by, bw, bh = self.target_box
        return bx <= x < bx + bw and by <= y < by + bh


@dataclass(frozen=True)
class FixationSequence:
    subject: str
    trial: str
    points: tuple  # of (x, y) int pairs, recording order


def _box(raw, line_no, what):
    if not (isinstance(raw, (list, tuple)) and len(raw) == 4):
        raise ManifestError(line_no, f"{what} must be [x, y, w, h], got {raw!r}")
    x, y, w, h = (int(v) for v in raw)
    if w < 1 or h < 1:
        raise ManifestError(line_no, f"{what} has non-positive extent: {raw!r}")
    return (x, y, w, h)


def _check_box_inside(box, size, line_no, what):
    x, y, w, h = box
    iw, ih = size
    if x < 0 or y < 0 or x + w > iw or y + h > ih:
        raise ManifestError(
            line_no, f"{what} {box} exceeds image bounds {iw}x{ih}"
        )


def _parse_trial(obj, line_no, base_dir):
    for key in ("id", "task", "target_img", "search_img", "target_box"):
        if key not in obj:
            raise ManifestError(line_no, f"trial record missing {key!r}")
    task = obj["task"]
    if task not in ("array", "natural"):
        raise ManifestError(line_no, f"unknown task {task!r}")
    search_image = os.path.join(base_dir, obj["search_img"])
    target_image = os.path.join(base_dir, obj["target_img"])
    for p in (search_image, target_image):
        if not os.path.exists(p):
            raise ManifestError(line_no, f"referenced image not found: {p}")
    size = image_extents(search_image)
    target_box = _box(obj["target_box"], line_no, "target_box")
    _check_box_inside(target_box, size, line_no, "target_box")
    cands = []
    seen = set()
    for c in obj.get("candidates") or []:
        if "id" not in c or "box" not in c:
            raise ManifestError(line_no, "candidate needs id and box")
        cid = str(c["id"])
        if cid in seen:
            raise ManifestError(line_no, f"duplicate candidate id {cid!r}")
        seen.add(cid)
        box = _box(c["box"], line_no, f"candidate {cid} box")
        _check_box_inside(box, size, line_no, f"candidate {cid} box")
        cands.append(Region(id=cid, box=box))
    if task == "array":
        if not cands:
            raise ManifestError(line_no, "array trial has no candidates")
        if not any(tuple(c.box) == target_box for c in cands):
            raise ManifestError(
                line_no, "array trial target_box matches no candidate box"
            )
    cls = obj.get("imagenet_class")
    if cls is not None:
        cls = int(cls)
        if not 0 <= cls < 1000:
            raise ManifestError(line_no, f"imagenet_class {cls} out of range")
    return Trial(
        id=str(obj["id"]),
        task_type=task,
        target_image=target_image,
        search_image=search_image,
        target_box=target_box,
        candidate_regions=tuple(cands),
        imagenet_class=cls,
        image_size=size,
    )


def _parse_fixations(obj, line_no):
    for key in ("trial", "subject", "points"):
        if key not in obj:
            raise ManifestError(line_no, f"fixation record missing {key!r}")
    pts = []
    for p in obj["points"]:
        if not (isinstance(p, (list, tuple)) and len(p) in (2, 3)):
            raise ManifestError(line_no, f"fixation point must be [x, y], got {p!r}")
        pts.append((int(p[0]), int(p[1])))
    return FixationSequence(
        subject=str(obj["subject"]), trial=str(obj["trial"]), points=tuple(pts)
    )


def load_manifest(path):
    """Parse and validate a manifest; returns (trials, fixation sequences)."""
    base_dir = os.path.dirname(os.path.abspath(path))
    trials, seqs, pending = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ManifestError(line_no, "each line must be a JSON object")
            kind = obj.get("kind")
            if kind == "trial":
                trials.append(_parse_trial(obj, line_no, base_dir))
            elif kind == "fixations":
                pending.append((line_no, _parse_fixations(obj, line_no)))
            else:
                raise ManifestError(line_no, f"unknown record kind {kind!r}")
    by_id = {}
    for t in trials:
        if t.id in by_id:
            raise ManifestError(0, f"duplicate trial id {t.id!r}")
        by_id[t.id] = t
    for line_no, seq in pending:
        trial = by_id.get(seq.trial)
        if trial is None:
            raise ManifestError(line_no, f"fixations reference unknown trial {seq.trial!r}")
        iw, ih = trial.image_size
        for x, y in seq.points:
            if not (0 <= x < iw and 0 <= y < ih):
                raise ManifestError(
                    line_no, f"fixation ({x}, {y}) outside image bounds {iw}x{ih}"
                )
        seqs.append(seq)
    return trials, seqs


def write_manifest(path, trials, seqs) -> None:
    """Serialize trials and sequences back to manifest form.

    Image paths are written relative to the manifest's directory, so the
    output loads from where it lands.
    """
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            rec = {
                "kind": "trial",
                "id": t.id,
                "task": t.task_type,
                "target_img": os.path.relpath(t.target_image, base_dir),
                "search_img": os.path.relpath(t.search_image, base_dir),
                "target_box": list(t.target_box),
                "candidates": [{"id": c.id, "box": list(c.box)} for c in t.candidate_regions],
                "imagenet_class": t.imagenet_class,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        for s in seqs:
            rec = {
                "kind": "fixations",
                "trial": s.trial,
                "subject": s.subject,
                "points": [list(p) for p in s.points],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _inside(point, box, margin=0):
    x, y = point
    bx, by, bw, bh = box
    return (bx - margin) <= x < (bx + bw + margin) and (by - margin) <= y < (by + bh + margin)


def filter_error_fixations(seq: FixationSequence, trial: Trial, skip_first: bool = True,
                           margin: int = 0):
    """Error fixations of one sequence: everything before the target was hit.

    The sequence is truncated at the first fixation inside the (optionally
    margin-dilated) target box; that fixation and everything after it never
    count.  ``skip_first`` additionally drops the sequence's first fixation,
    for paradigms that begin with a forced central fixation.
    """
    out = []
    for i, pt in enumerate(seq.points):
        if _inside(pt, trial.target_box, margin):
            break
        if skip_first and i == 0:
            continue
        out.append(pt)
    return out


def common_fixations(seqs, radius: int, min_subjects: int):
    """Fixation clusters shared by at least ``min_subjects`` subjects.

    Greedy pass over all points in recording order (ties by subject order):
    a point joins the first cluster whose seed lies within a Chebyshev
    ``radius``, otherwise it seeds a new cluster.  Surviving clusters are
    reported as rounded member centroids, ordered by earliest contributing
    fixation.
    """
    if len(seqs) < 2:
        raise ConfigError(f"common_fixations needs >= 2 sequences, got {len(seqs)}")
    trial_ids = {s.trial for s in seqs}
    if len(trial_ids) != 1:
        raise ConfigError(f"sequences span multiple trials: {sorted(trial_ids)}")
    stream = []
    for subj_order, seq in enumerate(seqs):
        for fix_order, pt in enumerate(seq.points):
            stream.append((fix_order, subj_order, seq.subject, pt))
    stream.sort(key=lambda rec: (rec[0], rec[1]))
    clusters = []  # each: {"seed": pt, "points": [...], "subjects": set, "first": key}
    for fix_order, subj_order, subject, pt in stream:
        for cl in clusters:
            sx, sy = cl["seed"]
            if max(abs(pt[0] - sx), abs(pt[1] - sy)) <= radius:
                cl["points"].append(pt)
                cl["subjects"].add(subject)
                break
        else:
            clusters.append(
                {"seed": pt, "points": [pt], "subjects": {subject},
                 "first": (fix_order, subj_order)}
            )
    out = []
    for cl in sorted(clusters, key=lambda c: c["first"]):
        if len(cl["subjects"]) >= min_subjects:
            xs = [p[0] for p in cl["points"]]
            ys = [p[1] for p in cl["points"]]
            out.append((round(sum(xs) / len(xs)), round(sum(ys) / len(ys))))
    return out
