import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsi_pipeline.annotations import TissueClass6
from wsi_pipeline.classify import (
    BaselineModel,
    BaselineScorer,
    ClassScores,
    FocalLossConfig,
    OracleScorer,
    class_weights,
    extract_features,
    external_scores_load,
    feature_dim,
    focal_loss,
    focal_objective,
    softmax,
    train_baseline,
    write_scores_csv,
)
from wsi_pipeline.errors import (
    MalformedRow,
    MissingClass,
    MissingPatch,
    NonFiniteInput,
    SumNotOne,
    ZeroCount,
)

from conftest import make_patch
from oracles import finite_diff_grad


class TestSoftmax:
    def test_uniform_for_equal_logits(self):
        s = softmax([3.0] * 6)
        assert np.allclose(s.as_array(), 1 / 6)

    def test_large_logit_no_overflow(self):
        s = softmax([1000.0, 0, 0, 0, 0, 0])
        assert s.probs[0] == pytest.approx(1.0)
        assert all(np.isfinite(s.as_array()))

    def test_values_match_direct_evaluation(self):
        s = softmax([1.0, 2.0, 3.0, 0.0, 0.0, 0.0])
        expected = [
            0.08189353410018847,
            0.2226097056128335,
            0.6051159176059828,
            0.03012694756033179,
            0.03012694756033179,
            0.03012694756033179,
        ]
        assert np.allclose(s.as_array(), expected, rtol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteInput):
            softmax([np.nan, 0, 0, 0, 0, 0])

    @given(st.lists(st.floats(-50, 50), min_size=6, max_size=6), st.floats(-20, 20))
    def test_shift_invariance_and_sum(self, logits, shift):
        a = softmax(logits).as_array()
        b = softmax([z + shift for z in logits]).as_array()
        assert abs(a.sum() - 1.0) < 1e-6
        assert np.all(np.abs(a - b) < 1e-9)


class TestClassWeights:
    def test_equal_counts_give_class_count(self):
        w = class_weights([10] * 6)
        assert np.allclose(w, 6.0)

    def test_reference_composition_values(self):
        counts = [158, 112, 145, 777, 264, 245]
        w = class_weights(counts)
        assert w[TissueClass6.TA_LG] == pytest.approx(2.189189189189189, rel=1e-12)
        assert w[TissueClass6.NORM] == pytest.approx(15.1875, rel=1e-12)

    def test_product_with_counts_constant(self):
        counts = [158, 112, 145, 777, 264, 245]
        w = class_weights(counts)
        assert np.allclose(np.asarray(counts) * w, sum(counts))

    def test_zero_count_rejected(self):
        with pytest.raises(ZeroCount):
            class_weights([1, 2, 3, 0, 5, 6])


class TestFocalLoss:
    def one_hotish(self, p, truth=0):
        rest = (1 - p) / 5
        probs = [rest] * 6
        probs[truth] = p
        return ClassScores(tuple(probs))

    def test_perfect_prediction_zero_loss(self):
        cfg = FocalLossConfig(gamma=2.0)
        assert focal_loss(self.one_hotish(1.0), TissueClass6.HP, cfg) == 0.0

    def test_gamma_zero_is_cross_entropy(self):
        cfg = FocalLossConfig(gamma=0.0)
        for p in (0.9, 0.5, 0.2):
            loss = focal_loss(self.one_hotish(p), TissueClass6.HP, cfg)
            assert loss == pytest.approx(-np.log(p), rel=1e-12)

    def test_half_probability_gamma_two(self):
        cfg = FocalLossConfig(gamma=2.0)
        loss = focal_loss(self.one_hotish(0.5), TissueClass6.HP, cfg)
        assert loss == pytest.approx(0.17328679513998632, rel=1e-12)

    def test_alpha_scales_loss(self):
        cfg = FocalLossConfig(gamma=2.0, alpha=(3.0, 1, 1, 1, 1, 1))
        base = FocalLossConfig(gamma=2.0)
        s = self.one_hotish(0.4)
        assert focal_loss(s, TissueClass6.HP, cfg) == pytest.approx(
            3 * focal_loss(s, TissueClass6.HP, base)
        )

    @given(st.floats(0.01, 0.98))
    def test_monotone_decreasing_in_pt(self, p):
        cfg = FocalLossConfig(gamma=2.0)
        a = focal_loss(self.one_hotish(p), TissueClass6.HP, cfg)
        b = focal_loss(self.one_hotish(p + 0.01), TissueClass6.HP, cfg)
        assert a >= b >= 0


class TestGradient:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([0.0, 0.5, 1.0, 2.0]))
    def test_analytic_matches_finite_differences(self, seed, gamma):
        rng = np.random.default_rng(seed)
        n, f = 5, 4
        features = rng.normal(size=(n, f))
        labels = rng.integers(0, 6, size=n)
        alpha = tuple(rng.uniform(0.5, 3.0, size=6))
        cfg = FocalLossConfig(gamma=gamma, alpha=alpha)
        w = rng.normal(scale=0.5, size=(6, f))
        b = rng.normal(scale=0.5, size=6)

        _, grad_w, grad_b = focal_objective(w, b, features, labels, cfg)
        flat = np.concatenate([w.ravel(), b.ravel()])

        def f_of(theta):
            w2 = theta[: 6 * f].reshape(6, f)
            b2 = theta[6 * f :]
            return focal_objective(w2, b2, features, labels, cfg)[0]

        numeric = finite_diff_grad(f_of, flat)
        analytic = np.concatenate([grad_w.ravel(), grad_b.ravel()])
        denom = max(np.linalg.norm(numeric), 1e-12)
        assert np.linalg.norm(analytic - numeric) / denom <= 1e-5

    def test_gamma_zero_equals_cross_entropy_exactly(self, rng):
        n, f = 8, 5
        features = rng.normal(size=(n, f))
        labels = rng.integers(0, 6, size=n)
        cfg = FocalLossConfig(gamma=0.0)
        w = rng.normal(size=(6, f))
        b = rng.normal(size=6)
        loss, _, _ = focal_objective(w, b, features, labels, cfg)
        z = features @ w.T + b
        z -= z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        ce = float(np.mean(-logp[np.arange(n), labels]))
        assert loss == pytest.approx(ce, abs=1e-12)


class TestFeatures:
    def test_constant_image(self):
        patch = make_patch(np.full((16, 16, 1), 64))
        f = extract_features(patch)
        assert f.shape == (feature_dim(1),)
        hist = f[:16]
        assert hist[64 >> 4] == 1.0
        assert hist.sum() == pytest.approx(1.0)
        assert np.allclose(f[17:], 0.0)  # std, grad mean, grad std

    def test_invert_reverses_histogram(self, rng):
        arr = rng.integers(0, 256, size=(16, 16, 1), dtype=np.uint8)
        f = extract_features(make_patch(arr))
        f_inv = extract_features(make_patch(255 - arr))
        assert np.allclose(f_inv[:16], f[:16][::-1])

    def test_ramp_statistics_match_direct_computation(self):
        arr = np.tile(np.arange(0, 256, 16, dtype=np.uint8), (16, 1))[:, :, None]
        patch = make_patch(arr)
        f = extract_features(patch)
        plane = arr[:, :, 0].astype(np.float64) / 255.0
        assert f[16] == pytest.approx(plane.mean())
        assert f[17] == pytest.approx(plane.std())
        gy, gx = np.gradient(plane)
        grad = np.hypot(gx, gy)
        assert f[18] == pytest.approx(grad.mean())
        assert f[19] == pytest.approx(grad.std())

    def test_rgb_feature_length(self, rng):
        patch = make_patch(rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8))
        assert extract_features(patch).shape == (feature_dim(3),)


def toy_separable_patches(n_per_class=8, side=16):
    # six tight clusters of constant-intensity images: linearly separable
    patches = []
    for cls in TissueClass6:
        base = 20 + 40 * int(cls)
        for i in range(n_per_class):
            arr = np.full((side, side, 1), base + (i % 3), dtype=np.uint8)
            patches.append(make_patch(arr, label=cls))
    return patches


class TestTrainBaseline:
    def test_zero_epochs_gives_uniform_scores(self):
        patches = toy_separable_patches(2)
        model = train_baseline(patches, epochs=0)
        scores = model.score_features(extract_features(patches[0]))
        assert np.allclose(scores.as_array(), 1 / 6)

    def test_separable_clusters_reach_full_accuracy(self):
        patches = toy_separable_patches(8)
        model = train_baseline(patches, epochs=500)
        correct = 0
        for p in patches:
            pred = int(np.argmax(model.score_features(extract_features(p)).as_array()))
            correct += pred == int(p.label)
        assert correct == len(patches)

    def test_loss_non_increasing_endpoints(self):
        patches = toy_separable_patches(4)
        model = train_baseline(patches, epochs=200)
        assert model.training_log[-1] <= model.training_log[0]

    def test_missing_class_rejected(self):
        patches = [p for p in toy_separable_patches(2) if p.label != TissueClass6.NORM]
        with pytest.raises(MissingClass):
            train_baseline(patches)

    def test_deterministic(self):
        patches = toy_separable_patches(3)
        m1 = train_baseline(patches, epochs=50, seed=7)
        m2 = train_baseline(patches, epochs=50, seed=7)
        assert np.array_equal(m1.weights, m2.weights)
        assert np.array_equal(m1.bias, m2.bias)

    def test_model_json_roundtrip(self, tmp_path):
        model = train_baseline(toy_separable_patches(2), epochs=20)
        path = tmp_path / "model.json"
        model.save(path)
        loaded = BaselineModel.load(path)
        assert np.array_equal(loaded.weights, model.weights)
        assert loaded.channels == model.channels


class TestScorers:
    def test_oracle_scores_one_hot(self):
        patch = make_patch(np.zeros((8, 8, 1)), label=TissueClass6.TVA_LG)
        s = OracleScorer().score(patch)
        assert s.probs[int(TissueClass6.TVA_LG)] == 1.0

    def test_baseline_scorer_deterministic(self, rng):
        model = train_baseline(toy_separable_patches(2), epochs=30)
        scorer = BaselineScorer(model)
        patch = make_patch(rng.integers(0, 256, size=(8, 8, 1), dtype=np.uint8))
        assert scorer.score(patch).probs == scorer.score(patch).probs


class TestExternalScores:
    def manifest(self, ids):
        return [{"patch_id": i} for i in ids]

    def test_roundtrip_two_patches(self, tmp_path):
        path = tmp_path / "scores.csv"
        write_scores_csv(
            [("a", [0.5, 0.1, 0.1, 0.1, 0.1, 0.1]), ("b", [0, 0, 1, 0, 0, 0])], path
        )
        table = external_scores_load(path, self.manifest(["a", "b"]))
        assert set(table) == {"a", "b"}
        assert table["a"].probs[0] == pytest.approx(0.5, abs=1e-6)

    def test_missing_patch(self, tmp_path):
        path = tmp_path / "scores.csv"
        write_scores_csv([("a", [1, 0, 0, 0, 0, 0])], path)
        with pytest.raises(MissingPatch):
            external_scores_load(path, self.manifest(["a", "zz"]))

    def test_sum_tolerance_renormalized(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text(
            "patch_id,hp,norm,ta_hg,ta_lg,tva_hg,tva_lg\n"
            "a,0.50004,0.1,0.1,0.1,0.1,0.1\n",
            encoding="utf-8",
        )
        table = external_scores_load(path, self.manifest(["a"]))
        assert sum(table["a"].probs) == pytest.approx(1.0, abs=1e-9)

    def test_sum_out_of_tolerance(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text(
            "patch_id,hp,norm,ta_hg,ta_lg,tva_hg,tva_lg\na,0.6,0.1,0.1,0.1,0.1,0.1\n",
            encoding="utf-8",
        )
        with pytest.raises(SumNotOne):
            external_scores_load(path, self.manifest(["a"]))

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text(
            "patch_id,hp,norm,ta_hg,ta_lg,tva_hg,tva_lg\na,x,0.1,0.1,0.1,0.1,0.1\n",
            encoding="utf-8",
        )
        with pytest.raises(MalformedRow):
            external_scores_load(path, self.manifest(["a"]))

    def test_negative_probability_rejected(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text(
            "patch_id,hp,norm,ta_hg,ta_lg,tva_hg,tva_lg\na,-0.1,0.3,0.2,0.2,0.2,0.2\n",
            encoding="utf-8",
        )
        with pytest.raises(MalformedRow):
            external_scores_load(path, self.manifest(["a"]))

    def test_duplicate_row(self, tmp_path):
        path = tmp_path / "scores.csv"
        row = "a," + ",".join(["0.16666667"] * 5 + ["0.16666665"]) + "\n"
        path.write_text("patch_id,hp,norm,ta_hg,ta_lg,tva_hg,tva_lg\n" + row + row, encoding="utf-8")
        with pytest.raises(MalformedRow):
            external_scores_load(path, self.manifest(["a"]))

    def test_bad_header(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("id,a,b,c,d,e,f\n", encoding="utf-8")
        with pytest.raises(MalformedRow):
            external_scores_load(path, self.manifest([]))
