import dataclasses
import itertools

import numpy as np
import pytest

from gazeinfer import engine, synthgen
from gazeinfer.dataset import Region, Trial
from gazeinfer.engine import FusionConfig, Guess, GuessTrace, InferenceMap
from gazeinfer.errors import ConfigError, ShapeMismatchError
from gazeinfer.imagery import read_image


def array_trial(boxes, target_idx, trial_id="t", size=(40, 30)):
    regions = tuple(Region(id=f"c{i}", box=b) for i, b in enumerate(boxes))
    return Trial(
        id=trial_id, task_type="array", target_image="x", search_image="y",
        target_box=regions[target_idx].box, candidate_regions=regions,
        imagenet_class=None, image_size=size,
    )


def natural_trial(target_box, trial_id="t", size=(40, 30)):
    return Trial(
        id=trial_id, task_type="natural", target_image="x", search_image="y",
        target_box=target_box, candidate_regions=(), imagenet_class=None,
        image_size=size,
    )


class TestFusionConfig:
    def test_defaults(self):
        cfg = FusionConfig()
        assert cfg.layer_combine == "max"
        assert cfg.fixation_combine == "sum"
        assert cfg.taps == ("T1", "T2", "T3", "T4", "T5", "T6", "T7")
        assert cfg.patch_side == 28
        assert cfg.effective_mask_side == 56

    def test_explicit_mask_side(self):
        assert FusionConfig(mask_side=40).effective_mask_side == 40

    def test_validation(self):
        with pytest.raises(ConfigError):
            FusionConfig(layer_combine="median")
        with pytest.raises(ConfigError):
            FusionConfig(fixation_combine="prod")
        with pytest.raises(ConfigError):
            FusionConfig(taps=())
        with pytest.raises(ConfigError):
            FusionConfig(patch_side=4)
        with pytest.raises(ConfigError):
            FusionConfig(similarity="l2")

    def test_echo_is_flat_and_complete(self):
        echo = FusionConfig().echo()
        assert echo["taps"] == "T1,T2,T3,T4,T5,T6,T7"
        assert set(echo) == {
            "layer_combine", "fixation_combine", "taps", "patch_side",
            "clamp_negative", "normalize_maps", "similarity", "mask_side",
        }


class TestExtractPatch:
    def test_interior_is_pure_crop(self):
        rng = np.random.default_rng(0)
        img = rng.random((3, 40, 40), dtype=np.float32)
        patch = engine.extract_patch(img, (20, 20), 28)
        assert np.array_equal(patch, img[:, 6:34, 6:34])

    def test_fixation_sits_at_half_offset(self):
        img = np.zeros((3, 40, 40), dtype=np.float32)
        img[:, 17, 23] = 1.0
        patch = engine.extract_patch(img, (23, 17), 28)
        assert patch[0, 14, 14] == 1.0

    def test_corner_fixation_edge_replicates(self):
        # 4x4 toy image, side-4 patch at (0,0): indices clip to [0,0,0,1]
        img = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
        img = np.concatenate([img, img, img], axis=0)
        patch = engine.extract_patch(img, (0, 0), 4)
        expect = img[0][np.ix_([0, 0, 0, 1], [0, 0, 0, 1])]
        assert np.array_equal(patch[0], expect)

    def test_constant_image_constant_patch(self):
        img = np.full((3, 30, 30), 0.7, dtype=np.float32)
        patch = engine.extract_patch(img, (1, 28), 28)
        assert np.all(patch == np.float32(0.7))

    def test_out_of_bounds_fixation_rejected(self):
        img = np.zeros((3, 10, 10), dtype=np.float32)
        with pytest.raises(ShapeMismatchError, match="outside"):
            engine.extract_patch(img, (10, 3), 8)
        with pytest.raises(ShapeMismatchError, match="outside"):
            engine.extract_patch(img, (3, -1), 8)


class TestMaskRegions:
    def test_empty_list_identity_copy(self):
        img = np.random.default_rng(1).random((3, 12, 12), dtype=np.float32)
        out = engine.mask_regions(img, [])
        assert np.array_equal(out, img)
        assert out is not img

    def test_full_image_all_black(self):
        img = np.random.default_rng(2).random((3, 9, 7), dtype=np.float32)
        out = engine.mask_regions(img, [(0, 0, 7, 9)])
        assert np.all(out == 0)

    def test_exact_pixel_count(self):
        img = np.ones((3, 30, 30), dtype=np.float32)
        out = engine.mask_regions(img, [(5, 8, 10, 10)])
        assert int((out[0] == 0).sum()) == 100
        assert int((out == 0).sum()) == 300
        assert np.array_equal(out[:, :8, :], img[:, :8, :])

    def test_overlapping_and_clipped_regions(self):
        img = np.ones((3, 10, 10), dtype=np.float32)
        out = engine.mask_regions(img, [(6, 6, 10, 10), (7, 7, 2, 2)])
        assert np.all(out[:, 6:, 6:] == 0)
        assert np.all(out[:, :6, :] == 1)


class TestFuseLayers:
    def test_single_map_identity(self):
        m = np.random.default_rng(3).random((5, 6)).astype(np.float32)
        assert np.array_equal(engine.fuse_layers([m]), m)

    def test_max_with_zeros_is_identity(self):
        m = np.random.default_rng(4).random((5, 6)).astype(np.float32)
        out = engine.fuse_layers([np.zeros_like(m), m], mode="max")
        assert np.array_equal(out, m)

    def test_max_dominates_inputs(self):
        rng = np.random.default_rng(5)
        maps = [rng.random((7, 7)).astype(np.float32) for _ in range(4)]
        fused = engine.fuse_layers(maps, mode="max")
        for m in maps:
            assert np.all(fused >= m)

    def test_mean_mode(self):
        a = np.full((2, 2), 1.0, dtype=np.float32)
        b = np.full((2, 2), 3.0, dtype=np.float32)
        assert np.allclose(engine.fuse_layers([a, b], mode="mean"), 2.0)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            engine.fuse_layers([])


class TestAccumulateFixations:
    def test_single_map(self):
        m = np.random.default_rng(6).random((4, 4)).astype(np.float32)
        assert np.array_equal(engine.accumulate_fixations([m]), m)

    def test_permutation_bit_identical(self):
        rng = np.random.default_rng(7)
        maps = [rng.random((9, 11)).astype(np.float32) for _ in range(5)]
        for mode in ("sum", "max", "mean"):
            base = engine.accumulate_fixations(maps, mode=mode)
            for perm in itertools.islice(itertools.permutations(maps), 1, 12):
                out = engine.accumulate_fixations(list(perm), mode=mode)
                assert np.array_equal(out, base), mode

    def test_disjoint_peaks_both_present(self):
        a = np.zeros((8, 8), dtype=np.float32)
        b = np.zeros((8, 8), dtype=np.float32)
        a[1, 1] = 1.0
        b[6, 6] = 2.0
        out = engine.accumulate_fixations([a, b], mode="sum")
        assert out[1, 1] == 1.0 and out[6, 6] == 2.0

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            engine.accumulate_fixations([])


class TestInferTargetArrays:
    def boxes(self):
        # 5 equal 6x6 boxes on one row, raster order c0..c4
        return [(2 + 7 * i, 4, 6, 6) for i in range(5)]

    def test_target_hot_first_guess(self):
        trial = array_trial(self.boxes(), target_idx=3)
        m = np.zeros((30, 40), dtype=np.float32)
        x, y, w, h = trial.target_box
        m[y + 2, x + 2] = 1.0
        trace = engine.infer_target(m, trial, budget=5)
        assert trace.success_index == 1
        assert trace.guesses[0].candidate_id == "c3"
        assert (trace.guesses[0].x, trace.guesses[0].y) == (x + 2, y + 2)

    def test_constant_map_raster_order_expected_three(self):
        m = np.full((30, 40), 0.5, dtype=np.float32)
        positions = []
        for t in range(5):
            trial = array_trial(self.boxes(), target_idx=t)
            trace = engine.infer_target(m, trial, budget=5)
            order = [g.candidate_id for g in trace.guesses]
            assert order == [f"c{i}" for i in range(t + 1)]  # raster sweep
            positions.append(trace.success_index)
        assert positions == [1, 2, 3, 4, 5]
        assert sum(positions) / 5 == 3.0

    def test_excluded_candidates_never_guessed(self):
        trial = array_trial(self.boxes(), target_idx=4)
        m = np.full((30, 40), 0.5, dtype=np.float32)
        trace = engine.infer_target(m, trial, budget=5, excluded_candidates={"c0", "c2"})
        assert [g.candidate_id for g in trace.guesses] == ["c1", "c3", "c4"]
        assert trace.success_index == 3

    def test_no_candidates_remaining(self):
        trial = array_trial(self.boxes(), target_idx=0)
        m = np.zeros((30, 40), dtype=np.float32)
        with pytest.raises(ConfigError, match="no candidates"):
            engine.infer_target(m, trial, excluded_candidates={f"c{i}" for i in range(5)})

    def test_guesses_never_repeat_and_bounded(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            trial = array_trial(self.boxes(), target_idx=int(rng.integers(5)))
            m = rng.random((30, 40)).astype(np.float32)
            trace = engine.infer_target(m, trial, budget=5)
            ids = [g.candidate_id for g in trace.guesses]
            assert len(ids) == len(set(ids))
            assert len(ids) <= 5
            assert trace.success_index is not None  # target always reachable


class TestInferTargetNatural:
    def test_budget_exhaustion_and_spacing(self):
        trial = natural_trial((0, 0, 3, 3), size=(40, 30))
        m = np.random.default_rng(9).random((30, 40)).astype(np.float32)
        m[:5, :5] = 0.0  # target zone coldest, every guess misses
        elim = 12
        trace = engine.infer_target(m, trial, elim_side=elim, budget=6)
        assert trace.success_index is None
        assert len(trace.guesses) == 6
        pts = [(g.x, g.y) for g in trace.guesses]
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                cheb = max(abs(pts[i][0] - pts[j][0]), abs(pts[i][1] - pts[j][1]))
                assert cheb > elim / 2

    def test_hit_inside_target_box(self):
        trial = natural_trial((10, 12, 5, 4))
        m = np.zeros((30, 40), dtype=np.float32)
        m[13, 11] = 1.0
        trace = engine.infer_target(m, trial, elim_side=8, budget=3)
        assert trace.success_index == 1
        assert trace.guesses[0] == Guess(x=11, y=13)

    def test_constant_map_starts_raster_origin(self):
        trial = natural_trial((20, 20, 4, 4))
        m = np.full((30, 40), 0.2, dtype=np.float32)
        trace = engine.infer_target(m, trial, elim_side=10, budget=2)
        assert (trace.guesses[0].x, trace.guesses[0].y) == (0, 0)

    def test_all_eliminated_stops_early(self):
        trial = natural_trial((8, 8, 2, 2), size=(10, 10))
        m = np.ones((10, 10), dtype=np.float32)
        m[8:10, 8:10] = 0.0
        trace = engine.infer_target(m, trial, elim_side=19, budget=50)
        assert trace.success_index is None
        assert len(trace.guesses) < 50

    def test_parameter_validation(self):
        trial = natural_trial((0, 0, 2, 2))
        m = np.zeros((30, 40), dtype=np.float32)
        with pytest.raises(ConfigError, match="budget"):
            engine.infer_target(m, trial, budget=0)
        with pytest.raises(ConfigError, match="elim_side"):
            engine.infer_target(m, trial, elim_side=0)


class TestOracleEquivalence:
    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(10)
        checked = 0
        while checked < 200:
            kind = rng.integers(2)
            if kind == 0:
                n = int(rng.integers(2, 7))
                cells = [(2 + 9 * (i % 4), 3 + 11 * (i // 4), 7, 7) for i in range(n)]
                trial = array_trial(cells, target_idx=int(rng.integers(n)))
                # quantized values force plenty of score ties
                m = (rng.integers(0, 4, size=(30, 40)) / 3.0).astype(np.float32)
                excl = set()
                if n > 2 and rng.random() < 0.4:
                    non_target = [c.id for c in trial.candidate_regions
                                  if c.id != trial.target_id()]
                    excl = {non_target[int(rng.integers(len(non_target)))]}
                budget = int(rng.integers(1, 8))
                fast = engine.infer_target(m, trial, budget=budget,
                                           excluded_candidates=excl)
                slow = synthgen.oracle_guess_count(m, trial, elim_side=1,
                                                   budget=budget, excluded=excl)
            else:
                tw, th = int(rng.integers(2, 7)), int(rng.integers(2, 7))
                tx = int(rng.integers(0, 40 - tw))
                ty = int(rng.integers(0, 30 - th))
                trial = natural_trial((tx, ty, tw, th))
                m = (rng.integers(0, 5, size=(30, 40)) / 4.0).astype(np.float32)
                elim = int(rng.integers(3, 16))
                budget = int(rng.integers(1, 15))
                fast = engine.infer_target(m, trial, elim_side=elim, budget=budget)
                slow = synthgen.oracle_guess_count(m, trial, elim_side=elim, budget=budget)
            assert fast.success_index == slow
            checked += 1


class TestSimilarityMaps:
    def test_shapes_and_order(self, vspec, bundle, tmp_path):
        trial, _ = synthgen.gen_array_trial(synthgen.ArraySpec(seed=42), tmp_path)
        search = read_image(trial.search_image)
        patch = engine.extract_patch(search, (80, 80), 28)
        cfg = FusionConfig(taps=("T2", "T1"))
        maps = engine.similarity_maps(patch, search, vspec, bundle, cfg)
        assert len(maps) == 2
        for m in maps:
            assert m.shape == (160, 160)
            assert np.isfinite(m).all()
            assert m.min() >= 0.0  # negatives clamped

    def test_template_recovery_smoke(self, vspec, bundle, tmp_path):
        # the full 100-trial sweep lives in the acceptance suite
        cfg = FusionConfig()
        hits = 0
        for s in range(5):
            trial, _ = synthgen.gen_array_trial(synthgen.ArraySpec(seed=300 + s), tmp_path)
            search = read_image(trial.search_image)
            cand = trial.candidate_regions[s % 6]
            x, y, w, h = cand.box
            cx, cy = x + w // 2, y + h // 2
            patch = engine.extract_patch(search, (cx, cy), 28)
            maps = engine.similarity_maps(patch, search, vspec, bundle, cfg)
            fused = engine.fuse_layers(maps, cfg.layer_combine)
            gy, gx = np.unravel_index(int(np.argmax(fused)), fused.shape)
            if max(abs(gx - cx), abs(gy - cy)) <= 10:
                hits += 1
        assert hits == 5

    def test_masked_region_scores_zero_at_local_taps(self, vspec, bundle, tmp_path):
        # black pixels become zero feature windows when preprocessing maps
        # black to zero, so the maps vanish wherever the tap's receptive
        # field fits inside the blacked region; coarse taps see past any
        # partial mask by construction
        zb = dataclasses.replace(
            bundle, preprocess_mean=(0.0, 0.0, 0.0), preprocess_scale=(1.0, 1.0, 1.0)
        )
        trial, _ = synthgen.gen_array_trial(synthgen.ArraySpec(seed=77), tmp_path)
        search = read_image(trial.search_image)
        patch = engine.extract_patch(search, (20, 20), 28)
        masked = engine.mask_regions(search, [(40, 40, 64, 64)])
        cfg = FusionConfig(taps=("T1", "T2"))
        maps = engine.similarity_maps(patch, masked, vspec, zb, cfg)
        for m in maps:
            # erode by 24 px: half the 28 px correlation window plus the
            # tap receptive field, so every contributing window is black
            interior = m[64:80, 64:80]
            assert np.abs(interior).max() <= 1e-6

    def test_fully_masked_search_all_maps_zero(self, vspec, bundle, tmp_path):
        zb = dataclasses.replace(
            bundle, preprocess_mean=(0.0, 0.0, 0.0), preprocess_scale=(1.0, 1.0, 1.0)
        )
        trial, _ = synthgen.gen_array_trial(synthgen.ArraySpec(seed=78), tmp_path)
        search = read_image(trial.search_image)
        patch = engine.extract_patch(search, (80, 80), 28)
        masked = engine.mask_regions(search, [(0, 0, 160, 160)])
        maps = engine.similarity_maps(patch, masked, vspec, zb, FusionConfig())
        for m in maps:
            assert np.all(m == 0)

    def test_constant_search_all_maps_zero(self, vspec, bundle):
        # a flat search at the preprocessing mean is zero input everywhere,
        # so every tap tensor vanishes and the zero-field rule zeroes the
        # maps; other constants leave conv-padding texture at the borders
        mean = np.array(bundle.preprocess_mean, dtype=np.float32).reshape(3, 1, 1)
        search = np.broadcast_to(mean, (3, 64, 64)).copy()
        patch = np.random.default_rng(1).random((3, 28, 28), dtype=np.float32)
        for normalize in (False, True):
            cfg = FusionConfig(normalize_maps=normalize)
            maps = engine.similarity_maps(patch, search, vspec, bundle, cfg)
            for m in maps:
                assert np.all(m == 0)


class TestInferenceMap:
    def test_provenance_and_nonnegative(self, vspec, bundle, tmp_path):
        trial, _ = synthgen.gen_array_trial(synthgen.ArraySpec(seed=11), tmp_path)
        search = read_image(trial.search_image)
        fixations = [(40, 40), (120, 120)]
        im = engine.inference_map(trial, fixations, search, vspec, bundle)
        assert isinstance(im, InferenceMap)
        assert im.trial_id == trial.id
        assert im.fixation_count == 2
        assert im.values.shape == (160, 160)
        assert np.isfinite(im.values).all()
        assert im.values.min() >= 0.0

    def test_order_invariance_smoke(self, vspec, bundle, tmp_path):
        trial, _ = synthgen.gen_array_trial(synthgen.ArraySpec(seed=12), tmp_path)
        search = read_image(trial.search_image)
        a = engine.inference_map(trial, [(30, 40), (100, 110)], search, vspec, bundle)
        b = engine.inference_map(trial, [(100, 110), (30, 40)], search, vspec, bundle)
        assert np.array_equal(a.values, b.values)

    def test_empty_fixations_rejected(self, vspec, bundle, tmp_path):
        trial, _ = synthgen.gen_array_trial(synthgen.ArraySpec(seed=13), tmp_path)
        search = read_image(trial.search_image)
        with pytest.raises(ConfigError, match="fixation"):
            engine.inference_map(trial, [], search, vspec, bundle)

    def test_fixated_candidate_ids(self, tmp_path):
        trial, _ = synthgen.gen_array_trial(synthgen.ArraySpec(seed=14), tmp_path)
        cand = trial.candidate_regions[2]
        x, y, w, h = cand.box
        ids = engine.fixated_candidate_ids(trial, [(x + 1, y + 1), (0, 0)])
        assert ids == {cand.id}


class FakeBundle:
    input_side = 8
    preprocess_mean = (0.0, 0.0, 0.0)
    preprocess_scale = (1.0, 1.0, 1.0)


class TestInferCategory:
    def test_single_patch_matches_classifier(self):
        probs = np.array([0.1, 0.6, 0.3])
        ids, scores = engine.infer_category(
            [np.zeros((3, 8, 8))], None, FakeBundle(), classify_fn=lambda p: probs
        )
        assert ids.tolist() == [1, 2, 0]
        assert np.allclose(scores, [0.6, 0.3, 0.1])

    def test_duplicated_patches_keep_ranking(self):
        rng = np.random.default_rng(15)
        probs = rng.random(20)
        fn = lambda p: probs
        one, _ = engine.infer_category([np.zeros((3, 8, 8))], None, FakeBundle(), classify_fn=fn)
        three, _ = engine.infer_category(
            [np.zeros((3, 8, 8))] * 3, None, FakeBundle(), classify_fn=fn
        )
        assert one.tolist() == three.tolist()

    def test_disjoint_top_classes_accumulate(self):
        a = np.zeros(10)
        a[3] = 0.9
        b = np.zeros(10)
        b[7] = 0.8
        patches = [np.zeros((3, 8, 8)), np.ones((3, 8, 8))]
        calls = iter([a, b])
        ids, _ = engine.infer_category(
            patches, None, FakeBundle(), classify_fn=lambda p: next(calls)
        )
        assert set(ids[:2].tolist()) == {3, 7}

    def test_ties_rank_smaller_class_first(self):
        probs = np.array([0.25, 0.25, 0.25, 0.25])
        ids, _ = engine.infer_category(
            [np.zeros((3, 8, 8))], None, FakeBundle(), classify_fn=lambda p: probs
        )
        assert ids.tolist() == [0, 1, 2, 3]

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            engine.infer_category([], None, FakeBundle())

    def test_real_network_path(self, vspec, bundle):
        patch = np.random.default_rng(16).random((3, 28, 28), dtype=np.float32)
        ids, scores = engine.infer_category([patch], vspec, bundle)
        assert ids.shape == (1000,)
        assert abs(float(scores.sum()) - 1.0) <= 1e-5
        assert scores[0] >= scores[-1]
