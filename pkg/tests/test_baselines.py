import math

import numpy as np
import pytest

from gazeinfer import baselines, synthgen
from gazeinfer.baselines import (
    SaliencyConfig,
    chance_expected_guesses,
    chance_trace,
    ittikoch_saliency,
    template_match_map,
)
from gazeinfer.dataset import Region, Trial
from gazeinfer.errors import ConfigError, ShapeMismatchError
from naive import popout_image, ring_positions, template_match_naive


def array_trial(n=5, trial_id="t"):
    boxes = [(2 + 7 * i, 4, 6, 6) for i in range(n)]
    regions = tuple(Region(id=f"c{i}", box=b) for i, b in enumerate(boxes))
    return Trial(
        id=trial_id, task_type="array", target_image="x", search_image="y",
        target_box=boxes[n // 2], candidate_regions=regions,
        imagenet_class=None, image_size=(40, 30),
    )


def natural_trial(target_box, size=(40, 30)):
    return Trial(
        id="nat", task_type="natural", target_image="x", search_image="y",
        target_box=target_box, candidate_regions=(), imagenet_class=None,
        image_size=size,
    )


class TestChanceExpectedGuesses:
    def test_closed_form(self):
        assert chance_expected_guesses(1) == 1.0
        assert chance_expected_guesses(5) == 3.0
        assert chance_expected_guesses(10) == 5.5

    def test_validation(self):
        with pytest.raises(ConfigError):
            chance_expected_guesses(0)

    def test_monte_carlo_agreement(self):
        # invariant: empirical mean within 3 standard errors for n in {3,5,10}
        for n in (3, 5, 10):
            trial = array_trial(n=n)
            reps = 10_000
            counts = [
                chance_trace(trial, rng_seed=(n, s), budget=n).success_index
                for s in range(reps)
            ]
            mean = sum(counts) / reps
            var = (n * n - 1) / 12.0  # uniform over 1..n
            assert abs(mean - chance_expected_guesses(n)) <= 3.0 * math.sqrt(var / reps)


class TestChanceTrace:
    def test_seed_reproducible(self):
        trial = array_trial()
        a = chance_trace(trial, rng_seed=42, budget=5)
        b = chance_trace(trial, rng_seed=42, budget=5)
        assert a == b
        assert any(chance_trace(trial, rng_seed=s, budget=5) != a for s in range(5))

    def test_array_mechanics(self):
        trial = array_trial()
        for s in range(50):
            trace = chance_trace(trial, rng_seed=s, budget=5)
            ids = [g.candidate_id for g in trace.guesses]
            assert len(ids) == len(set(ids))
            assert trace.success_index == len(ids)
            assert ids[-1] == trial.target_id()

    def test_excluded_candidates(self):
        trial = array_trial()
        excl = {"c0", "c1"}
        for s in range(30):
            trace = chance_trace(trial, rng_seed=s, budget=5, excluded_candidates=excl)
            assert excl.isdisjoint(g.candidate_id for g in trace.guesses)

    def test_natural_whole_image_target(self):
        trial = natural_trial((0, 0, 40, 30))
        for s in range(20):
            trace = chance_trace(trial, rng_seed=s, elim_side=10, budget=5)
            assert trace.success_index == 1

    def test_natural_elimination_spacing(self):
        trial = natural_trial((0, 0, 1, 1))  # nearly impossible to hit
        elim = 11
        trace = chance_trace(trial, rng_seed=3, elim_side=elim, budget=8)
        pts = [(g.x, g.y) for g in trace.guesses]
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                cheb = max(abs(pts[i][0] - pts[j][0]), abs(pts[i][1] - pts[j][1]))
                assert cheb > elim // 2

    def test_validation(self):
        with pytest.raises(ConfigError):
            chance_trace(array_trial(), rng_seed=0, budget=0)
        with pytest.raises(ConfigError):
            chance_trace(natural_trial((0, 0, 2, 2)), rng_seed=0, elim_side=0)


class TestTemplateMatchMap:
    def test_self_match_peak_at_cut(self):
        rng = np.random.default_rng(0)
        img = rng.random((3, 40, 48), dtype=np.float32)
        y0, x0, s = 11, 20, 10
        patch = img[:, y0 : y0 + s, x0 : x0 + s]
        m = template_match_map(patch, img)
        gy, gx = np.unravel_index(int(np.argmax(m)), m.shape)
        assert (gy, gx) == (y0 + (s - 1) // 2, x0 + (s - 1) // 2)
        assert m[gy, gx] == 1.0

    def test_constant_image_all_zero(self):
        img = np.full((3, 30, 30), 0.6, dtype=np.float32)
        patch = np.full((3, 8, 8), 0.6, dtype=np.float32)
        assert np.all(template_match_map(patch, img) == 0)

    def test_constant_patch_all_zero(self):
        rng = np.random.default_rng(1)
        img = rng.random((3, 30, 30), dtype=np.float32)
        patch = np.full((3, 8, 8), 0.3, dtype=np.float32)
        assert np.all(template_match_map(patch, img) == 0)

    def test_agrees_with_naive_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(12):
            h = int(rng.integers(12, 28))
            w = int(rng.integers(12, 28))
            s = int(rng.integers(3, 9))
            img = rng.random((3, h, w))
            patch = rng.random((3, s, s))
            fast = template_match_map(patch, img)
            slow = template_match_naive(patch, img)
            assert np.abs(fast - slow).max() <= 1e-5

    def test_range_and_shape(self):
        rng = np.random.default_rng(3)
        img = rng.random((3, 25, 31), dtype=np.float32)
        m = template_match_map(rng.random((3, 7, 7), dtype=np.float32), img)
        assert m.shape == (25, 31)
        assert m.dtype == np.float32
        assert 0.0 <= m.min() and m.max() == 1.0

    def test_oversized_patch_rejected(self):
        with pytest.raises(ShapeMismatchError, match="larger"):
            template_match_map(np.zeros((3, 10, 10)), np.zeros((3, 8, 12)))


class TestSaliencyConfig:
    def test_defaults(self):
        cfg = SaliencyConfig()
        assert cfg.pyramid_levels == 9
        assert cfg.center_scales == (2, 3, 4)
        assert cfg.deltas == (3, 4)
        assert len(cfg.orientations) == 4

    def test_surround_depth_invariant(self):
        with pytest.raises(ConfigError):
            SaliencyConfig(pyramid_levels=8)  # 4 + 4 exceeds deepest level 7


class TestIttiKochSaliency:
    def test_uniform_gray_all_zero(self):
        sal = ittikoch_saliency(np.full((3, 160, 160), 0.5, dtype=np.float32))
        assert sal.shape == (160, 160)
        assert np.all(sal == 0)

    def test_red_among_green_pops_out(self):
        rng = np.random.default_rng(4)
        for k in range(4):
            theta = float(rng.uniform(0, 2 * math.pi))
            pos = ring_positions(theta0=theta)
            odd = pos[k % 6]
            rest = [p for p in pos if p != odd]
            sal = ittikoch_saliency(popout_image(odd, rest))
            gy, gx = np.unravel_index(int(np.argmax(sal)), sal.shape)
            assert max(abs(gx - odd[0]), abs(gy - odd[1])) <= 8

    def test_translation_covariant(self):
        base = ring_positions(theta0=0.7)
        for shift in ((0, 0), (12, -9), (-15, 20)):
            odd = (base[2][0] + shift[0], base[2][1] + shift[1])
            rest = [p for i, p in enumerate(base) if i != 2]
            sal = ittikoch_saliency(popout_image(odd, rest))
            gy, gx = np.unravel_index(int(np.argmax(sal)), sal.shape)
            assert max(abs(gx - odd[0]), abs(gy - odd[1])) <= 8

    def test_random_images_finite_nonnegative(self):
        rng = np.random.default_rng(5)
        for _ in range(3):
            sal = ittikoch_saliency(rng.random((3, 96, 128)))
            assert np.isfinite(sal).all()
            assert sal.min() >= 0.0
            assert sal.max() <= 1.0

    def test_too_small_image_rejected(self):
        with pytest.raises(ShapeMismatchError, match="pyramid"):
            ittikoch_saliency(np.zeros((3, 16, 16)))

    def test_wrong_rank_rejected(self):
        with pytest.raises(ShapeMismatchError):
            ittikoch_saliency(np.zeros((160, 160)))

    def test_map_feeds_guess_loop(self, tmp_path):
        # interface parity: a saliency map drops into infer_target unchanged
        from gazeinfer.engine import infer_target
        from gazeinfer.imagery import read_image

        trial, _ = synthgen.gen_array_trial(synthgen.ArraySpec(seed=90), tmp_path)
        sal = ittikoch_saliency(read_image(trial.search_image))
        trace = infer_target(sal, trial, budget=6)
        assert trace.success_index is not None
        assert 1 <= trace.success_index <= 6
