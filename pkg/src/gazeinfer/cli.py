"""Command-line surface: the whole pipeline as batch subcommands.

Subcommands: ``gen`` (synthetic dataset), ``infer`` (one trial's map and
guess trace), ``eval`` (model sweep over a dataset), ``ablate``
(layer/fusion grid), ``category`` (top-N category accuracy), ``saliency``
(image to saliency heatmap), ``export-map`` (stored array to PGM/PNG).

Exit codes: 0 success, 1 usage error, 2 data error.  Reports and PGM
heatmaps are byte-stable: identical configuration and inputs produce
identical bytes at any ``--threads`` setting, because workers compute
pure per-sample results that are merged in a fixed sample order and all
random streams are keyed by sample position, never by scheduling.
"""

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__, figures
from .baselines import chance_trace, ittikoch_saliency, template_match_map
from .convnet import load_weight_bundle, random_bundle, vgg16_spec
from .dataset import FixationSequence, filter_error_fixations, load_manifest, write_manifest
from .engine import (
    FusionConfig,
    accumulate_fixations,
    extract_patch,
    fixated_candidate_ids,
    fixation_mask_regions,
    infer_category,
    infer_target,
    inference_map,
    mask_regions,
)
from .errors import ConfigError, FormatError, GazeinferError
from .evaluation import (
    EvalReport,
    PairwiseP,
    emit_report,
    make_row,
    monte_carlo_chance,
    topn_table,
    trace_score,
    welch_ttest,
)
from .imagery import read_image, write_pgm
from .synthgen import ArraySpec, candidate_similarity, gen_array_trial, sample_fixations

MAP_MODELS = ("infernet", "ranweight", "tempmatch", "ittikoch")
ALL_MODELS = MAP_MODELS + ("chance",)

# Distinguishes the eval chance-model seed stream from monte_carlo_chance's
# internal (seed, T, trial, rep) stream, so A_m of the chance model is not
# correlated with the A_c estimate it is normalized by.
CHANCE_MODEL_STREAM = 982451653


class _UsageError(Exception):
    """Flag combination or value problem; maps to exit code 1."""


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run's outputs, echoed into them.

    The worker-pool size is deliberately not a field: thread count may
    never change output bytes, so it is an execution knob, not
    configuration.
    """

    command: str
    weights: object  # path string, or None
    random_weights: object  # int seed, or None
    manifest: object  # path string, or None
    out: str
    models: tuple
    fusion: FusionConfig
    elim_side: int
    budget: int
    t_values: tuple
    seed: int
    chance_reps: int = 200
    skip_first: bool = True
    extra: tuple = ()  # additional (key, value) pairs, e.g. subcommand flags

    def echo(self, weights_checksum: str = "none") -> dict:
        d = dict(self.fusion.echo())
        d.update(
            {
                "command": self.command,
                "weights": self.weights if self.weights else "none",
                "random_weights": (
                    "none" if self.random_weights is None else self.random_weights
                ),
                "manifest": self.manifest if self.manifest else "none",
                "models": ",".join(self.models),
                "elim_side": self.elim_side,
                "budget": self.budget,
                "t_values": ",".join(str(t) for t in self.t_values),
                "seed": self.seed,
                "chance_reps": self.chance_reps,
                "skip_first": self.skip_first,
                "weights_checksum": weights_checksum,
                "version": __version__,
            }
        )
        for key, value in self.extra:
            d[key] = value
        return d


def _echo_lines(echo: dict):
    return [f"{k}={echo[k]}" for k in sorted(echo)]


def _png_metadata(echo: dict) -> dict:
    return {"gazeinfer-config": json.dumps(echo, sort_keys=True)}


# ---------------------------------------------------------------------------
# flag interpretation


def _int_list(text, flag, minimum=1):
    toks = [tok.strip() for tok in str(text).split(",") if tok.strip()]
    try:
        vals = tuple(int(tok) for tok in toks)
    except ValueError:
        raise _UsageError(f"{flag} must be a comma-separated integer list, got {text!r}")
    if not vals:
        raise _UsageError(f"{flag} must list at least one integer")
    bad = [v for v in vals if v < minimum]
    if bad:
        raise _UsageError(f"{flag} values must be >= {minimum}, got {bad}")
    return vals


def _resolve_taps(tap_flag):
    """(NetworkSpec, tap labels or None) from the raw --taps layer indices."""
    base = vgg16_spec()
    if tap_flag is None:
        return base, None
    indices = _int_list(tap_flag, "--taps")
    label_by_index = {v: k for k, v in base.taps.items()}
    taps_map = dict(base.taps)
    labels = []
    for idx in indices:
        if idx > len(base.layers):
            raise _UsageError(f"--taps index {idx} beyond the last layer {len(base.layers)}")
        kind = base.layers[idx - 1].kind
        if kind not in ("conv", "relu", "maxpool"):
            raise _UsageError(
                f"--taps index {idx} is a {kind} layer; only spatial layers can be tapped"
            )
        label = label_by_index.get(idx)
        if label is None:
            label = f"L{idx:02d}"
            taps_map[label] = idx
        labels.append(label)
    if len(set(labels)) != len(labels):
        raise _UsageError(f"--taps lists a layer twice: {tap_flag!r}")
    return dataclasses.replace(base, taps=taps_map), tuple(labels)


def _fusion_from_args(args, labels):
    kwargs = dict(
        layer_combine=args.layer_combine,
        fixation_combine=args.fix_combine,
        patch_side=args.patch_side,
        clamp_negative=not args.no_clamp_negative,
        normalize_maps=args.normalize_maps,
        similarity=args.similarity,
        mask_side=args.mask_side,
    )
    if labels is not None:
        kwargs["taps"] = labels
    try:
        return FusionConfig(**kwargs)
    except ConfigError as exc:
        raise _UsageError(str(exc))


def _model_list(text):
    models = tuple(tok.strip() for tok in str(text).split(",") if tok.strip())
    if not models:
        raise _UsageError("--model must name at least one model")
    unknown = [m for m in models if m not in ALL_MODELS]
    if unknown:
        raise _UsageError(f"unknown models {unknown}; choose from {list(ALL_MODELS)}")
    if len(set(models)) != len(models):
        raise _UsageError(f"--model lists a model twice: {text!r}")
    return models


def _check_common(args):
    if getattr(args, "seed", 0) < 0:
        raise _UsageError(f"--seed must be >= 0, got {args.seed}")
    if getattr(args, "random_weights", None) is not None and args.random_weights < 0:
        raise _UsageError(f"--random-weights must be >= 0, got {args.random_weights}")
    if getattr(args, "threads", 1) < 1:
        raise _UsageError(f"--threads must be >= 1, got {args.threads}")
    if getattr(args, "elim_side", 1) < 1:
        raise _UsageError(f"--elim-side must be >= 1, got {args.elim_side}")
    if getattr(args, "budget", 1) < 1:
        raise _UsageError(f"--budget must be >= 1, got {args.budget}")


def _bundles_for(models, args, spec):
    """Weight bundle per network-backed model; usage error when unsourced."""
    bundles = {}
    for model in models:
        if model == "infernet":
            if args.weights:
                bundles[model] = load_weight_bundle(args.weights, spec)
            elif args.random_weights is not None:
                bundles[model] = random_bundle(args.random_weights, spec)
            else:
                raise _UsageError(
                    "model 'infernet' needs --weights PATH or --random-weights SEED"
                )
        elif model == "ranweight":
            seed = args.random_weights if args.random_weights is not None else args.seed
            bundles[model] = random_bundle(seed, spec)
    return bundles


def _checksum_echo(bundles) -> str:
    sums = []
    for model in sorted(bundles):
        text = f"{bundles[model].checksum:016x}"
        if text not in sums:
            sums.append(text)
    return "+".join(sums) if sums else "none"


# ---------------------------------------------------------------------------
# shared dataset plumbing


def _load_dataset(manifest_path):
    trials, seqs = load_manifest(manifest_path)
    by_id = {t.id: t for t in trials}
    seqs_sorted = sorted(seqs, key=lambda s: (s.trial, s.subject))
    return by_id, seqs_sorted


def _samples_at_t(seqs_sorted, by_id, t, skip_first):
    """(trial, seq, first t error fixations, excluded ids) per usable sequence."""
    out = []
    for seq in seqs_sorted:
        trial = by_id[seq.trial]
        errs = filter_error_fixations(seq, trial, skip_first=skip_first)
        if len(errs) < t:
            continue
        fixes = tuple(errs[:t])
        excluded = tuple(sorted(fixated_candidate_ids(trial, fixes)))
        out.append((trial, seq, fixes, excluded))
    return out


def _read_search_images(by_id, trial_ids):
    return {tid: read_image(by_id[tid].search_image) for tid in sorted(trial_ids)}


def _run_pool(fn, items, threads):
    """Order-preserving map; pool size never changes the result list."""
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _compute_map(model, trial, fixes, image, spec, bundle, fusion):
    if model in ("infernet", "ranweight"):
        return inference_map(trial, fixes, image, spec, bundle, fusion).values
    if model == "tempmatch":
        masked = mask_regions(image, fixation_mask_regions(trial, fixes, fusion))
        maps = [
            template_match_map(extract_patch(image, pt, fusion.patch_side), masked)
            for pt in fixes
        ]
        return accumulate_fixations(maps, fusion.fixation_combine)
    if model == "ittikoch":
        return ittikoch_saliency(image)
    raise ConfigError(f"model {model!r} does not produce a map")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    _check_common(args)
    if args.trials < 1:
        raise _UsageError(f"--trials must be >= 1, got {args.trials}")
    if args.subjects < 1:
        raise _UsageError(f"--subjects must be >= 1, got {args.subjects}")
    if args.fix_count < 1:
        raise _UsageError(f"--fix-count must be >= 1, got {args.fix_count}")
    images_dir = os.path.join(args.out, "images")
    os.makedirs(images_dir, exist_ok=True)
    trials, seqs = [], []
    for i in range(args.trials):
        spec_i = ArraySpec(
            n_objects=args.objects,
            object_side=args.object_side,
            canvas_side=args.canvas_side,
            ring_radius=args.ring_radius,
            seed=args.seed + i,
            decoy=args.decoy,
        )
        trial, _styles = gen_array_trial(spec_i, images_dir)
        search = read_image(trial.search_image)
        target = read_image(trial.target_image)
        sim = candidate_similarity(trial, search, target)
        # The recorded sequence starts where a real session does: on a
        # forced central fixation, which error filtering then drops.
        center = (args.canvas_side // 2, args.canvas_side // 2)
        for j in range(args.subjects):
            fix_seed = int(
                np.random.SeedSequence([args.seed, 11, i, j]).generate_state(1)[0]
            )
            drawn = sample_fixations(trial, args.beta, sim, args.fix_count, fix_seed)
            seqs.append(
                FixationSequence(
                    subject=f"s{j:02d}", trial=trial.id, points=(center,) + drawn.points
                )
            )
        trials.append(trial)
    manifest_path = os.path.join(args.out, "manifest.jsonl")
    write_manifest(manifest_path, trials, seqs)
    print(
        f"wrote {len(trials)} trials, {len(seqs)} fixation sequences -> {manifest_path}"
    )
    return 0


def _pick_sample(args, by_id, seqs_sorted):
    if args.trial is not None:
        if args.trial not in by_id:
            raise ConfigError(f"trial {args.trial!r} not in manifest")
        candidates = [s for s in seqs_sorted if s.trial == args.trial]
        if not candidates:
            raise ConfigError(f"trial {args.trial!r} has no fixation sequences")
    else:
        candidates = seqs_sorted
        if not candidates:
            raise ConfigError("manifest holds no fixation sequences")
    if args.subject is not None:
        candidates = [s for s in candidates if s.subject == args.subject]
        if not candidates:
            raise ConfigError(f"no sequence for subject {args.subject!r}")
    seq = candidates[0]
    return by_id[seq.trial], seq


def cmd_infer(args) -> int:
    _check_common(args)
    model = args.model
    spec, labels = _resolve_taps(args.taps)
    fusion = _fusion_from_args(args, labels)
    bundles = _bundles_for((model,), args, spec)
    by_id, seqs_sorted = _load_dataset(args.manifest)
    trial, seq = _pick_sample(args, by_id, seqs_sorted)
    errs = filter_error_fixations(seq, trial, skip_first=not args.no_skip_first)
    if len(errs) < args.t:
        raise ConfigError(
            f"trial {trial.id!r} subject {seq.subject!r} has {len(errs)} error "
            f"fixations, fewer than T={args.t}"
        )
    fixes = tuple(errs[: args.t])
    excluded = tuple(sorted(fixated_candidate_ids(trial, fixes)))
    image = read_image(trial.search_image)
    m = _compute_map(model, trial, fixes, image, spec, bundles.get(model), fusion)
    trace = infer_target(m, trial, args.elim_side, args.budget, excluded)

    run = RunConfig(
        command="infer", weights=args.weights, random_weights=args.random_weights,
        manifest=args.manifest, out=args.out, models=(model,), fusion=fusion,
        elim_side=args.elim_side, budget=args.budget, t_values=(args.t,),
        seed=args.seed, skip_first=not args.no_skip_first,
        extra=(("trial", trial.id), ("subject", seq.subject)),
    )
    echo = run.echo(_checksum_echo(bundles))
    os.makedirs(args.out, exist_ok=True)
    pgm_path = os.path.join(args.out, f"{trial.id}_map.pgm")
    write_pgm(pgm_path, m, comments=_echo_lines(echo))
    figures.save_heatmap(
        m, os.path.join(args.out, f"{trial.id}_map.png"),
        title=f"{model} {trial.id} T={args.t}", metadata=_png_metadata(echo),
    )
    payload = {
        "config": echo,
        "trial": trial.id,
        "subject": seq.subject,
        "model": model,
        "t_fixations": args.t,
        "fixations": [list(pt) for pt in fixes],
        "excluded_candidates": list(excluded),
        "budget": trace.budget,
        "success_index": trace.success_index,
        "guesses": [
            {"x": g.x, "y": g.y, "candidate_id": g.candidate_id} for g in trace.guesses
        ],
    }
    trace_path = os.path.join(args.out, f"{trial.id}_trace.json")
    with open(trace_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(
        f"{trial.id} ({seq.subject}, {model}, T={args.t}): "
        f"success_index={trace.success_index} guesses={len(trace.guesses)}"
    )
    return 0


def _eval_sweep(models, ts, by_id, seqs_sorted, images, spec, bundles, fusion, args,
                echo, maps_dir=None):
    """Rows, pairwise p-values, and optional per-sample map files.

    The chance model's traces are seeded per (T, sample position); network
    and template models are pure functions of the sample, so the merged
    row order, and hence the report bytes, cannot depend on the pool size.
    """
    sal_cache = {}
    if "ittikoch" in models:
        for tid in sorted(images):
            sal_cache[tid] = ittikoch_saliency(images[tid])
    rows, pairwise = [], []
    for t in ts:
        samples = _samples_at_t(seqs_sorted, by_id, t, not args.no_skip_first)
        if not samples:
            print(f"T={t}: no sequence has {t} error fixations; skipped", file=sys.stderr)
            continue
        a_c = monte_carlo_chance(
            [s[0] for s in samples], t, args.chance_reps, args.seed,
            elim_side=args.elim_side, budget=args.budget,
            excluded_map=[s[3] for s in samples],
        )
        scores_by_model = {}
        for model in models:
            def work(item, model=model, t=t):
                idx, (trial, seq, fixes, excluded) = item
                if model == "chance":
                    trace = chance_trace(
                        trial,
                        np.random.SeedSequence([args.seed, CHANCE_MODEL_STREAM, t, idx]),
                        args.elim_side, args.budget, excluded,
                    )
                    return trace, None
                if model == "ittikoch":
                    m = sal_cache[trial.id]
                else:
                    m = _compute_map(
                        model, trial, fixes, images[trial.id], spec,
                        bundles.get(model), fusion,
                    )
                trace = infer_target(m, trial, args.elim_side, args.budget, excluded)
                return trace, m if maps_dir else None
            results = _run_pool(work, list(enumerate(samples)), args.threads)
            traces = [r[0] for r in results]
            scores_by_model[model] = [trace_score(tr) for tr in traces]
            rows.append(make_row(model, t, traces, a_c))
            if maps_dir and model != "chance":
                for (trial, seq, fixes, excluded), (trace, m) in zip(samples, results):
                    name = f"{model}_T{t}_{trial.id}_{seq.subject}.pgm"
                    write_pgm(
                        os.path.join(maps_dir, name), m,
                        comments=_echo_lines(echo)
                        + [f"trial={trial.id}", f"subject={seq.subject}",
                           f"row_model={model}", f"row_T={t}"],
                    )
        for i, model_a in enumerate(models):
            for model_b in models[i + 1:]:
                try:
                    p = welch_ttest(scores_by_model[model_a], scores_by_model[model_b])
                except ConfigError:
                    continue  # both score lists constant: no evidence scale
                pairwise.append(PairwiseP(model_a, model_b, t, p))
    if not rows:
        raise ConfigError("no (model, T) cell had any usable sample")
    return rows, pairwise


def cmd_eval(args) -> int:
    _check_common(args)
    if args.chance_reps < 100:
        raise _UsageError(f"--chance-reps must be >= 100, got {args.chance_reps}")
    models = _model_list(args.model)
    ts = _int_list(args.t, "--t")
    spec, labels = _resolve_taps(args.taps)
    fusion = _fusion_from_args(args, labels)
    bundles = _bundles_for(models, args, spec)
    by_id, seqs_sorted = _load_dataset(args.manifest)
    if not seqs_sorted:
        raise ConfigError("manifest holds no fixation sequences")
    images = _read_search_images(by_id, {s.trial for s in seqs_sorted})

    run = RunConfig(
        command="eval", weights=args.weights, random_weights=args.random_weights,
        manifest=args.manifest, out=args.out, models=models, fusion=fusion,
        elim_side=args.elim_side, budget=args.budget, t_values=ts, seed=args.seed,
        chance_reps=args.chance_reps, skip_first=not args.no_skip_first,
    )
    echo = run.echo(_checksum_echo(bundles))
    os.makedirs(args.out, exist_ok=True)
    maps_dir = None
    if args.save_maps:
        maps_dir = os.path.join(args.out, "maps")
        os.makedirs(maps_dir, exist_ok=True)

    rows, pairwise = _eval_sweep(
        models, ts, by_id, seqs_sorted, images, spec, bundles, fusion, args,
        echo, maps_dir=maps_dir,
    )
    report = EvalReport(rows=tuple(rows), pairwise=tuple(pairwise), config=echo)
    out_path = os.path.join(args.out, f"eval_report.{args.format}")
    emit_report(report, args.format, out_path)
    figures.save_pr_curves(
        report, os.path.join(args.out, "pr_curves.png"), metadata=_png_metadata(echo)
    )
    for row in rows:
        print(
            f"{row.model} T={row.t_fixations}: A_m={row.a_m:.3f} "
            f"A_c={row.a_c:.3f} P_r={row.p_r:.4f} (n={row.n})"
        )
    print(f"wrote {out_path}")
    return 0


def cmd_ablate(args) -> int:
    _check_common(args)
    if args.chance_reps < 100:
        raise _UsageError(f"--chance-reps must be >= 100, got {args.chance_reps}")
    spec, labels = _resolve_taps(args.taps)
    base_fusion = _fusion_from_args(args, labels)
    bundles = _bundles_for(("infernet",), args, spec)
    bundle = bundles["infernet"]
    by_id, seqs_sorted = _load_dataset(args.manifest)
    if not seqs_sorted:
        raise ConfigError("manifest holds no fixation sequences")
    images = _read_search_images(by_id, {s.trial for s in seqs_sorted})
    t = args.t

    samples = _samples_at_t(seqs_sorted, by_id, t, not args.no_skip_first)
    if not samples:
        raise ConfigError(f"no sequence has {t} error fixations")
    a_c = monte_carlo_chance(
        [s[0] for s in samples], t, args.chance_reps, args.seed,
        elim_side=args.elim_side, budget=args.budget,
        excluded_map=[s[3] for s in samples],
    )

    tap_sets = [(lab,) for lab in base_fusion.taps]
    if len(base_fusion.taps) > 1:
        tap_sets.append(tuple(base_fusion.taps))
    fix_modes = ("sum", "max", "mean") if t > 1 else (base_fusion.fixation_combine,)

    run = RunConfig(
        command="ablate", weights=args.weights, random_weights=args.random_weights,
        manifest=args.manifest, out=args.out, models=("infernet",), fusion=base_fusion,
        elim_side=args.elim_side, budget=args.budget, t_values=(t,), seed=args.seed,
        chance_reps=args.chance_reps, skip_first=not args.no_skip_first,
    )
    echo = run.echo(_checksum_echo(bundles))
    rows = []
    for taps in tap_sets:
        for mode in fix_modes:
            cfg = dataclasses.replace(base_fusion, taps=taps, fixation_combine=mode)
            label = f"taps={'+'.join(taps)}|fix={mode}"
            def work(item, cfg=cfg):
                trial, seq, fixes, excluded = item
                m = _compute_map("infernet", trial, fixes, images[trial.id], spec,
                                 bundle, cfg)
                return infer_target(m, trial, args.elim_side, args.budget, excluded)
            traces = _run_pool(work, samples, args.threads)
            rows.append(make_row(label, t, traces, a_c))

    report = EvalReport(rows=tuple(rows), pairwise=(), config=echo)
    out_path = os.path.join(args.out, f"ablation.{args.format}")
    os.makedirs(args.out, exist_ok=True)
    emit_report(report, args.format, out_path)
    figures.save_ablation_bars(
        rows, os.path.join(args.out, "ablation.png"), metadata=_png_metadata(echo)
    )
    for row in rows:
        print(f"{row.model}: A_m={row.a_m:.3f} P_r={row.p_r:.4f}")
    print(f"wrote {out_path}")
    return 0


def cmd_category(args) -> int:
    _check_common(args)
    ts = _int_list(args.t, "--t")
    n_values = _int_list(args.n_values, "--n-values")
    spec, labels = _resolve_taps(args.taps)
    fusion = _fusion_from_args(args, labels)
    bundles = _bundles_for(("infernet",), args, spec)
    bundle = bundles["infernet"]
    by_id, seqs_sorted = _load_dataset(args.manifest)
    labeled = {tid for tid, trial in by_id.items() if trial.imagenet_class is not None}
    if not labeled:
        raise ConfigError("no trial in the manifest carries an imagenet_class label")
    seqs_sorted = [s for s in seqs_sorted if s.trial in labeled]

    # One fixed sample set across every T, so each column ranks the same
    # trials and the top-N cells are comparable.
    t_max = max(ts)
    samples = _samples_at_t(seqs_sorted, by_id, t_max, not args.no_skip_first)
    if not samples:
        raise ConfigError(f"no labeled sequence has {t_max} error fixations")
    images = _read_search_images(by_id, {trial.id for trial, _, _, _ in samples})
    truths = [trial.imagenet_class for trial, _, _, _ in samples]

    rankings = {}
    for t in ts:
        def work(item, t=t):
            trial, seq, fixes, excluded = item
            patches = [
                extract_patch(images[trial.id], pt, fusion.patch_side)
                for pt in fixes[:t]
            ]
            ranked, _scores = infer_category(patches, spec, bundle)
            return ranked
        rankings[t] = _run_pool(work, samples, args.threads)
    table = topn_table(rankings, truths, n_values)

    run = RunConfig(
        command="category", weights=args.weights, random_weights=args.random_weights,
        manifest=args.manifest, out=args.out, models=("infernet",), fusion=fusion,
        elim_side=args.elim_side, budget=args.budget, t_values=ts, seed=args.seed,
        skip_first=not args.no_skip_first,
        extra=(("n_values", ",".join(str(n) for n in n_values)),
               ("n_samples", len(samples))),
    )
    echo = run.echo(_checksum_echo(bundles))
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "category.csv")
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        for line in _echo_lines(echo):
            fh.write(f"# {line}\n")
        fh.write("T," + ",".join(f"top{n}" for n in n_values) + "\n")
        for t in ts:
            cells = ",".join(repr(table[(t, n)]) for n in n_values)
            fh.write(f"{t},{cells}\n")
    for t in ts:
        shown = " ".join(f"top{n}={table[(t, n)]:.3f}" for n in n_values)
        print(f"T={t}: {shown} (n={len(samples)})")
    print(f"wrote {out_path}")
    return 0


def cmd_saliency(args) -> int:
    image = read_image(args.image)
    sal = ittikoch_saliency(image)
    run = RunConfig(
        command="saliency", weights=None, random_weights=None, manifest=None,
        out=args.out, models=("ittikoch",), fusion=FusionConfig(),
        elim_side=200, budget=50, t_values=(), seed=0,
        extra=(("image", args.image),),
    )
    echo = run.echo("none")
    os.makedirs(args.out, exist_ok=True)
    write_pgm(os.path.join(args.out, "saliency.pgm"), sal, comments=_echo_lines(echo))
    figures.save_heatmap(
        sal, os.path.join(args.out, "saliency.png"),
        title=os.path.basename(args.image), metadata=_png_metadata(echo),
    )
    peak = np.unravel_index(int(np.argmax(sal)), sal.shape)
    print(f"saliency peak at (x={peak[1]}, y={peak[0]}) -> {args.out}")
    return 0


def cmd_export_map(args) -> int:
    try:
        arr = np.load(args.map, allow_pickle=False)
    except ValueError as exc:
        raise FormatError(f"{args.map}: not a loadable array: {exc}")
    if not isinstance(arr, np.ndarray) or arr.ndim != 2:
        raise FormatError(
            f"{args.map}: expected a 2-D array, got "
            f"{getattr(arr, 'shape', type(arr).__name__)}"
        )
    if not np.issubdtype(arr.dtype, np.floating) and not np.issubdtype(
        arr.dtype, np.integer
    ):
        raise FormatError(f"{args.map}: expected a real numeric array, got {arr.dtype}")
    run = RunConfig(
        command="export-map", weights=None, random_weights=None, manifest=None,
        out=args.out, models=(), fusion=FusionConfig(),
        elim_side=200, budget=50, t_values=(), seed=0,
        extra=(("map", args.map),),
    )
    echo = run.echo("none")
    stem = os.path.splitext(os.path.basename(args.map))[0]
    os.makedirs(args.out, exist_ok=True)
    pgm_path = os.path.join(args.out, f"{stem}.pgm")
    write_pgm(pgm_path, arr.astype(np.float64), comments=_echo_lines(echo))
    figures.save_heatmap(
        arr, os.path.join(args.out, f"{stem}.png"), title=stem,
        metadata=_png_metadata(echo),
    )
    print(f"wrote {pgm_path}")
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    """Argparse variant whose usage failures exit 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_weight_flags(p):
    p.add_argument("--weights", metavar="PATH", default=None,
                   help="NNWB weight bundle for network-backed models")
    p.add_argument("--random-weights", metavar="SEED", type=int, default=None,
                   help="seeded random-init bundle instead of --weights")


def _add_fusion_flags(p):
    p.add_argument("--taps", metavar="IDX,IDX,...", default=None,
                   help="1-based layer indices to tap (default 5,10,17,23,24,30,31)")
    p.add_argument("--layer-combine", choices=("max", "mean"), default="max")
    p.add_argument("--fix-combine", choices=("sum", "max", "mean"), default="sum")
    p.add_argument("--patch-side", type=int, default=28, metavar="PX")
    p.add_argument("--mask-side", type=int, default=0, metavar="PX",
                   help="natural-trial mask square (0 = twice the patch side)")
    p.add_argument("--similarity", choices=("cosine", "dot"), default="cosine")
    p.add_argument("--normalize-maps", action="store_true",
                   help="minmax each per-layer map before layer fusion")
    p.add_argument("--no-clamp-negative", action="store_true",
                   help="keep negative similarity values instead of clamping to 0")


def _add_guess_flags(p):
    p.add_argument("--elim-side", type=int, default=200, metavar="PX")
    p.add_argument("--budget", type=int, default=50, metavar="N")


def _add_out_flag(p):
    p.add_argument("--out", required=True, metavar="DIR", help="output directory")


def _add_dataset_flags(p):
    p.add_argument("--manifest", required=True, metavar="PATH")
    p.add_argument("--no-skip-first", action="store_true",
                   help="count the first fixation too (default drops it as the "
                        "forced central fixation)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gazeinfer",
                     description="Infer a search target from error fixations.")
    parser.add_argument("--version", action="version", version=f"gazeinfer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("gen", help="render a synthetic object-array dataset")
    p.add_argument("--trials", type=int, default=20, metavar="N")
    p.add_argument("--objects", type=int, default=6, metavar="N")
    p.add_argument("--object-side", type=int, default=24, metavar="PX")
    p.add_argument("--canvas-side", type=int, default=160, metavar="PX")
    p.add_argument("--ring-radius", type=int, default=52, metavar="PX")
    p.add_argument("--decoy", action="store_true",
                   help="style one distractor after the target")
    p.add_argument("--beta", type=float, default=0.0,
                   help="similarity bias of sampled fixations (0 = uniform)")
    p.add_argument("--fix-count", type=int, default=3, metavar="N",
                   help="error fixations per sequence")
    p.add_argument("--subjects", type=int, default=1, metavar="N")
    p.add_argument("--seed", type=int, default=0)
    _add_out_flag(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("infer", help="one trial: inference map + guess trace")
    _add_dataset_flags(p)
    p.add_argument("--trial", default=None, metavar="ID")
    p.add_argument("--subject", default=None, metavar="ID")
    p.add_argument("--t", type=int, default=1, metavar="N",
                   help="error fixations to use")
    p.add_argument("--model", choices=MAP_MODELS, default="infernet")
    _add_weight_flags(p)
    _add_fusion_flags(p)
    _add_guess_flags(p)
    p.add_argument("--seed", type=int, default=0)
    _add_out_flag(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="sweep models over a dataset")
    _add_dataset_flags(p)
    p.add_argument("--model", default="infernet,chance", metavar="M1,M2,...",
                   help=f"models to run, from {', '.join(ALL_MODELS)}")
    p.add_argument("--t", default="1", metavar="T1,T2,...",
                   help="error-fixation counts to sweep")
    p.add_argument("--chance-reps", type=int, default=200, metavar="N",
                   help="Monte Carlo repetitions per sample for A_c")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--save-maps", action="store_true",
                   help="write each sample's map under out/maps/")
    _add_weight_flags(p)
    _add_fusion_flags(p)
    _add_guess_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    _add_out_flag(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="tap/fusion grid on the network model")
    _add_dataset_flags(p)
    p.add_argument("--t", type=int, default=1, metavar="N")
    p.add_argument("--chance-reps", type=int, default=200, metavar="N")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_weight_flags(p)
    _add_fusion_flags(p)
    _add_guess_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    _add_out_flag(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("category", help="top-N category accuracy grid")
    _add_dataset_flags(p)
    p.add_argument("--t", default="1", metavar="T1,T2,...")
    p.add_argument("--n-values", default="1,10,100,1000", metavar="N1,N2,...")
    _add_weight_flags(p)
    _add_fusion_flags(p)
    _add_guess_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    _add_out_flag(p)
    p.set_defaults(func=cmd_category)

    p = sub.add_parser("saliency", help="bottom-up saliency map of one image")
    p.add_argument("--image", required=True, metavar="PATH")
    _add_out_flag(p)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("export-map", help="convert a stored .npy map to PGM/PNG")
    p.add_argument("--map", required=True, metavar="PATH")
    _add_out_flag(p)
    p.set_defaults(func=cmd_export_map)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"gazeinfer: error: {exc}", file=sys.stderr)
        return 1
    except GazeinferError as exc:
        print(f"gazeinfer: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gazeinfer: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
