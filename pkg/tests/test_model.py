import numpy as np
import pytest

from conftest import TOY, random_bag
from milrank.data import Bag, VideoRecord
from milrank.errors import ConfigError, ShapeError
from milrank.model import (
    Ablation,
    ModelConfig,
    ModelParams,
    bag_feature,
    classify_bag,
    forward_bag,
    fuse,
    init_params,
    initial_score,
    normalize_scores,
    project_vision,
    score_video,
    zero_like_params,
)


def zeroed(params):
    out = params.copy()
    for t in out.tensors.values():
        t[:] = 0.0
    return out


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_params(ModelConfig(), 5)
        b = init_params(ModelConfig(), 5)
        assert a.tensors.keys() == b.tensors.keys()
        for name in a.tensors:
            assert np.array_equal(a.tensors[name], b.tensors[name])

    def test_biases_zero(self):
        params = init_params(ModelConfig(), 9)
        for name, t in params.tensors.items():
            if t.ndim == 1:
                assert np.all(t == 0.0), name

    def test_k_must_divide_fused_width(self):
        with pytest.raises(ConfigError):
            init_params(ModelConfig(k=5), 0)

    def test_uniform_weight_statistics(self):
        params = init_params(ModelConfig(), 3)
        w = params.tensors["wv1"]  # largest layer, 256 x 512
        limit = np.sqrt(6.0 / w.shape[1])
        sigma = 2 * limit / np.sqrt(12.0)
        assert abs(w.mean()) < 3 * sigma / np.sqrt(w.size)
        assert np.all(np.abs(w) <= limit)


class TestProjection:
    def test_zero_params_zero_output(self, toy_params):
        params = zeroed(toy_params)
        out = project_vision(np.ones(TOY.dv), params)
        assert np.array_equal(out, np.zeros(TOY.da))

    def test_output_width_is_fused_width(self):
        params = init_params(ModelConfig(), 2)
        out = project_vision(np.random.default_rng(0).standard_normal(512), params)
        assert out.shape == (128,)

    def test_hand_relu_chain(self):
        cfg = ModelConfig(dv=2, da=2, hv=2, hf=2, ds=2, hc=2, k=1)
        params = init_params(cfg, 0)
        params.tensors["wv1"] = np.eye(2)
        params.tensors["wv2"] = np.eye(2)
        out = project_vision(np.array([1.0, -2.0]), params)
        assert np.array_equal(out, [1.0, 0.0])

    def test_shape_mismatch(self, toy_params):
        with pytest.raises(ShapeError):
            project_vision(np.zeros(TOY.dv + 1), toy_params)


class TestFuse:
    def test_zero_branches_residual_identity(self, toy_params):
        params = toy_params.copy()
        for name in params.tensors:
            if name.startswith("f"):
                params.tensors[name][:] = 0.0
        fv = np.random.default_rng(0).standard_normal(TOY.da)
        fa = np.random.default_rng(1).standard_normal(TOY.da)
        assert np.array_equal(fuse(fv, fa, params), fv)

    def test_zero_vision_gives_pure_relation(self, toy_params):
        fa = np.random.default_rng(2).standard_normal(TOY.da)
        fv = np.zeros(TOY.da)
        out = fuse(fv, fa, toy_params)
        # with a zero residual base the output is the branch concatenation
        params = toy_params
        cat = np.concatenate([fv, fa])
        t = params.tensors
        pieces = []
        for j in range(TOY.k):
            z1 = np.maximum(t[f"f{j}_w1"] @ cat + t[f"f{j}_b1"], 0)
            z2 = np.maximum(t[f"f{j}_w2"] @ z1 + t[f"f{j}_b2"], 0)
            pieces.append(t[f"f{j}_w3"] @ z2 + t[f"f{j}_b3"])
        assert np.allclose(out, np.concatenate(pieces))

    def test_branch_widths_k4(self):
        params = init_params(ModelConfig(k=4), 0)
        assert params.tensors["f0_w3"].shape[0] == 32
        out = fuse(np.zeros(128), np.zeros(128), params)
        assert out.shape == (128,)


class TestScoring:
    def test_zero_scorer_zero_score(self, toy_params):
        params = toy_params.copy()
        for name in ("ws", "bs", "bh"):
            params.tensors[name][:] = 0.0
        assert initial_score(np.ones(TOY.da), params) == 0.0

    def test_hand_chain(self):
        cfg = ModelConfig(dv=2, da=2, hv=2, hf=2, ds=1, hc=2, k=1)
        params = init_params(cfg, 0)
        params.tensors["ws"] = np.array([[1.0, 0.0]])
        params.tensors["wh"] = np.array([[2.0]])
        params.tensors["bs"][:] = 0.0
        params.tensors["bh"][:] = 0.0
        assert initial_score(np.array([3.0, 9.9]), params) == 6.0
        assert initial_score(np.array([-3.0, 9.9]), params) == 0.0

    def test_normalize_uniform(self):
        out = normalize_scores(np.full(60, 0.7))
        assert np.allclose(out, 1.0 / 60.0)

    def test_normalize_single(self):
        assert np.allclose(normalize_scores([3.0]), [1.0])

    def test_normalize_hand(self):
        assert np.allclose(normalize_scores([0.0, np.log(3.0)]), [0.25, 0.75])

    def test_normalize_shift_invariant(self, rng):
        raw = rng.standard_normal(10)
        assert np.allclose(normalize_scores(raw), normalize_scores(raw + 17.3), atol=1e-6)


class TestBagFeature:
    def test_one_hot_selects(self, rng):
        fused = rng.standard_normal((4, 6))
        norm = np.array([0.0, 0.0, 1.0, 0.0])
        assert np.array_equal(bag_feature(norm, fused), fused[2])

    def test_uniform_is_mean(self, rng):
        fused = rng.standard_normal((5, 6))
        out = bag_feature(np.full(5, 0.2), fused)
        assert np.allclose(out, fused.mean(axis=0))

    def test_hand_weighted_sum(self):
        fused = np.array([[4.0, 0.0], [0.0, 4.0]])
        assert np.allclose(bag_feature(np.array([0.25, 0.75]), fused), [1.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            bag_feature(np.array([1.0]), np.zeros((2, 3)))


class TestClassifier:
    def test_equal_logits_half(self, toy_params):
        params = zeroed(toy_params)
        assert classify_bag(np.ones(TOY.da), params) == 0.5

    def test_hand_logits(self, toy_params):
        params = zeroed(toy_params)
        params.tensors["bc2"] = np.array([0.0, np.log(3.0)])
        assert abs(classify_bag(np.zeros(TOY.da), params) - 0.75) < 1e-12

    def test_range(self, toy_params, rng):
        for _ in range(20):
            y = classify_bag(rng.standard_normal(TOY.da) * 10, toy_params)
            assert 0.0 <= y <= 1.0


class TestForwardBag:
    def test_permutation_equivariance_and_invariance(self, toy_params, rng):
        bag = random_bag(rng, n=7)
        fwd = forward_bag(bag, toy_params)
        perm = rng.permutation(7)
        bag2 = Bag(bag.vision[perm], bag.audio[perm], "positive", "rand", perm)
        fwd2 = forward_bag(bag2, toy_params)
        assert np.allclose(fwd2.raw_scores, fwd.raw_scores[perm], atol=1e-6)
        assert np.allclose(fwd2.norm_scores, fwd.norm_scores[perm], atol=1e-6)
        assert np.allclose(fwd2.bag_feature, fwd.bag_feature, atol=1e-6)
        assert abs(fwd2.event_prob - fwd.event_prob) < 1e-6

    def test_invariants_random_bags(self, toy_params, rng):
        for _ in range(50):
            fwd = forward_bag(random_bag(rng, n=6), toy_params)
            assert abs(fwd.norm_scores.sum() - 1.0) < 1e-6
            assert np.all(fwd.norm_scores >= 0)
            recomputed = fwd.norm_scores @ fwd.fused
            assert np.allclose(fwd.bag_feature, recomputed, atol=1e-5)
            assert 0.0 <= fwd.event_prob <= 1.0
            lo = fwd.fused.min(axis=0) - 1e-9
            hi = fwd.fused.max(axis=0) + 1e-9
            assert np.all(fwd.bag_feature >= lo) and np.all(fwd.bag_feature <= hi)

    def test_all_zero_params_symmetric(self, toy_params, rng):
        params = zeroed(toy_params)
        fwd = forward_bag(random_bag(rng, n=5), params)
        assert np.allclose(fwd.norm_scores, 0.2)
        assert fwd.event_prob == 0.5

    def test_deterministic(self, toy_params, rng):
        bag = random_bag(rng)
        a = forward_bag(bag, toy_params)
        b = forward_bag(bag, toy_params)
        assert np.array_equal(a.raw_scores, b.raw_scores)
        assert a.event_prob == b.event_prob

    def test_ablation_rejects_both(self, toy_params, rng):
        with pytest.raises(ConfigError):
            forward_bag(random_bag(rng), toy_params, Ablation(no_audio=True, no_vision=True))

    def test_ablation_paths_differ(self, toy_params, rng):
        bag = random_bag(rng)
        full = forward_bag(bag, toy_params).raw_scores
        no_a = forward_bag(bag, toy_params, Ablation(no_audio=True)).raw_scores
        no_v = forward_bag(bag, toy_params, Ablation(no_vision=True)).raw_scores
        assert not np.allclose(full, no_a)
        assert not np.allclose(full, no_v)


class TestScoreVideo:
    def make_video(self, rng, n=6):
        return VideoRecord(
            "v", "e", float(n), rng.standard_normal((n, TOY.dv)), rng.standard_normal((n, TOY.da))
        )

    def test_duplicate_segment_same_score(self, toy_params, rng):
        video = self.make_video(rng)
        video.vision[3] = video.vision[0]
        video.audio[3] = video.audio[0]
        scores = score_video(video, toy_params)
        assert scores[3] == scores[0]

    def test_reversal_reverses_scores(self, toy_params, rng):
        video = self.make_video(rng)
        rev = VideoRecord("v", "e", video.duration_s, video.vision[::-1].copy(), video.audio[::-1].copy())
        assert np.allclose(score_video(rev, toy_params), score_video(video, toy_params)[::-1])

    def test_raw_ranking_matches_softmax_ranking(self, toy_params, rng):
        video = self.make_video(rng, n=9)
        raw = score_video(video, toy_params)
        assert np.array_equal(np.argsort(raw), np.argsort(normalize_scores(raw)))

    def test_empty_video_rejected(self, toy_params):
        video = VideoRecord("v", "e", 0.0, np.zeros((0, TOY.dv)), np.zeros((0, TOY.da)))
        with pytest.raises(ShapeError):
            score_video(video, toy_params)
