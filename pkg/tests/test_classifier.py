"""Unit tests for hashed features and the noise-aware classifier."""

import numpy as np
import pytest
from scipy import optimize, sparse

from devicesurv import classifier as clf
from devicesurv.errors import ConfigError, FitError
from devicesurv.extraction import extract_candidates
from devicesurv.weaksup import ProbabilisticLabel


@pytest.fixture(scope="module")
def pain_candidates(dictionaries, trigger_lexicon):
    from devicesurv.corpus import RawNote, preprocess
    from datetime import datetime

    texts = [
        "Patient complains of severe pain in the hip today.",
        "No pain in the hip on exam.",
        "History of aching in the knee years ago.",
        "Monitor for possible soreness in the groin going forward.",
    ]
    cands = []
    for i, text in enumerate(texts):
        doc = preprocess(RawNote(f"n{i}", "p1", datetime(2020, 1, 1), "progress", text))
        cands.extend(
            extract_candidates(doc, dictionaries, trigger_lexicon, relation_types=("pain-anatomy",))
        )
    assert len(cands) == 4
    return cands


class TestFeatures:
    def test_featurize_deterministic(self, pain_candidates):
        a = clf.featurize(pain_candidates[0])
        b = clf.featurize(pain_candidates[0])
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.values, b.values)

    def test_raw_features_include_structure(self, pain_candidates):
        feats = clf.raw_features(pain_candidates[0])
        assert "arg1_type:pain" in feats
        assert "arg2_type:anatomy" in feats
        assert any(f.startswith("dist:") for f in feats)
        assert any(f.startswith("btw:") for f in feats)

    def test_adjacent_args_distance_zero(self, dictionaries, trigger_lexicon):
        from devicesurv.corpus import RawNote, preprocess
        from datetime import datetime

        doc = preprocess(RawNote("n", "p", datetime(2020, 1, 1), "progress", "hip pain noted."))
        (cand,) = extract_candidates(
            doc, dictionaries, trigger_lexicon, relation_types=("pain-anatomy",)
        )
        assert "dist:0" in clf.raw_features(cand)

    def test_indices_within_dim(self, pain_candidates):
        config = clf.FeatureConfig(n_bits=12)
        fv = clf.featurize(pain_candidates[0], config)
        assert fv.indices.max() < config.dim
        assert np.all(np.diff(fv.indices) > 0)

    def test_attribute_features_present(self, pain_candidates):
        negated = clf.raw_features(pain_candidates[1])
        assert "arg1_attr:negated" in negated


class TestSerialization:
    def test_round_trip(self, tmp_path):
        fc = clf.FeatureConfig()
        w = np.zeros(fc.dim)
        w[[3, 100, 999]] = [0.5, -1.25, 2.0]
        model = clf.ClassifierModel(
            weights=w, bias=0.75, feature_config=fc, metadata={"seed": 3}, threshold=0.42
        )
        path = tmp_path / "model.bin"
        model.save(path)
        loaded = clf.ClassifierModel.load(path)
        assert np.array_equal(loaded.weights, model.weights)
        assert loaded.bias == model.bias
        assert loaded.threshold == model.threshold
        assert loaded.metadata == {"seed": 3}

    def test_save_load_save_byte_identical(self, tmp_path):
        fc = clf.FeatureConfig()
        w = np.zeros(fc.dim)
        w[[1, 2]] = [0.1, 0.2]
        model = clf.ClassifierModel(weights=w, bias=0.0, feature_config=fc)
        p1 = tmp_path / "a.bin"
        p2 = tmp_path / "b.bin"
        model.save(p1)
        clf.ClassifierModel.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        fc = clf.FeatureConfig()
        model = clf.ClassifierModel(weights=np.zeros(fc.dim), bias=0.0, feature_config=fc)
        path = tmp_path / "model.bin"
        model.save(path)
        raw = bytearray(path.read_bytes())
        raw[0] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ConfigError):
            clf.ClassifierModel.load(path)

    def test_digest_mismatch_at_predict(self, pain_candidates):
        fc = clf.FeatureConfig()
        model = clf.ClassifierModel(weights=np.zeros(fc.dim), bias=0.0, feature_config=fc)
        with pytest.raises(ConfigError):
            clf.predict(model, pain_candidates[0], clf.FeatureConfig(window=5))


def _small_problem(seed=0, n=20, d=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    p = rng.uniform(size=n)
    return X, p


class TestObjective:
    def test_gradient_matches_finite_differences(self):
        X, p = _small_problem()
        rng = np.random.default_rng(1)
        w = rng.normal(scale=0.3, size=X.shape[1])
        b = 0.2
        l2 = 0.05
        loss, grad_w, grad_b = clf.loss_and_grad(w, b, X, p, l2)
        eps = 1e-6
        for j in range(len(w)):
            wp = w.copy()
            wp[j] += eps
            lp, _, _ = clf.loss_and_grad(wp, b, X, p, l2)
            wm = w.copy()
            wm[j] -= eps
            lm, _, _ = clf.loss_and_grad(wm, b, X, p, l2)
            assert grad_w[j] == pytest.approx((lp - lm) / (2 * eps), abs=1e-4)
        lp, _, _ = clf.loss_and_grad(w, b + eps, X, p, l2)
        lm, _, _ = clf.loss_and_grad(w, b - eps, X, p, l2)
        assert grad_b == pytest.approx((lp - lm) / (2 * eps), abs=1e-4)

    def test_matches_convex_oracle(self):
        # The objective is convex; an independent quasi-Newton solve must
        # agree with our own minimizer of the same loss.
        X, p = _small_problem(seed=2)
        l2 = 0.1

        def objective(theta):
            loss, gw, gb = clf.loss_and_grad(theta[:-1], theta[-1], X, p, l2)
            return loss, np.concatenate([gw, [gb]])

        res = optimize.minimize(objective, np.zeros(X.shape[1] + 1), jac=True, method="L-BFGS-B")
        ours = optimize.minimize(
            objective, np.ones(X.shape[1] + 1) * 0.3, jac=True, method="CG"
        )
        assert np.allclose(res.x, ours.x, atol=1e-3)
        assert res.fun == pytest.approx(ours.fun, abs=1e-6)

    def test_full_batch_training_approaches_optimum(self):
        X, p = _small_problem(seed=3)
        l2 = 0.1

        def objective(theta):
            loss, gw, gb = clf.loss_and_grad(theta[:-1], theta[-1], X, p, l2)
            return loss, np.concatenate([gw, [gb]])

        opt = optimize.minimize(objective, np.zeros(X.shape[1] + 1), jac=True, method="L-BFGS-B")
        config = clf.TrainConfig(seed=0, epochs=3000, learning_rate=0.1, l2=l2, batch_size=X.shape[0])
        w, b = clf.train_on_matrix(sparse.csr_matrix(X), p, config, X.shape[1])
        loss, _, _ = clf.loss_and_grad(w, b, X, p, l2)
        assert loss <= opt.fun + 1e-3
        assert np.allclose(w, opt.x[:-1], atol=1e-2)

    def test_training_deterministic_per_seed(self):
        X, p = _small_problem(seed=4)
        config = clf.TrainConfig(seed=7, epochs=5, batch_size=4)
        w1, b1 = clf.train_on_matrix(sparse.csr_matrix(X), p, config, X.shape[1])
        w2, b2 = clf.train_on_matrix(sparse.csr_matrix(X), p, config, X.shape[1])
        assert np.array_equal(w1, w2) and b1 == b2


class TestTraining:
    def test_empty_training_set(self):
        with pytest.raises(FitError):
            clf.train_noise_aware([], [])

    def test_missing_label_error(self, pain_candidates):
        with pytest.raises(FitError, match="missing labels"):
            clf.train_noise_aware(pain_candidates, [])

    def test_all_half_labels_give_half_scores(self, pain_candidates):
        labels = [ProbabilisticLabel(c.candidate_id, 0.5) for c in pain_candidates]
        model = clf.train_noise_aware(pain_candidates, labels, clf.TrainConfig(epochs=5))
        scores = clf.predict_many(model, pain_candidates)
        assert np.allclose(scores, 0.5, atol=1e-6)

    def test_hard_labels_separate(self, pain_candidates):
        labels = [
            ProbabilisticLabel(pain_candidates[0].candidate_id, 1.0),
            ProbabilisticLabel(pain_candidates[1].candidate_id, 0.0),
            ProbabilisticLabel(pain_candidates[2].candidate_id, 0.0),
            ProbabilisticLabel(pain_candidates[3].candidate_id, 0.0),
        ]
        model = clf.train_noise_aware(
            pain_candidates, labels, clf.TrainConfig(epochs=200, learning_rate=0.5)
        )
        scores = clf.predict_many(model, pain_candidates)
        assert scores[0] > 0.9
        assert max(scores[1:]) < 0.1

    def test_predict_matches_predict_many(self, pain_candidates):
        labels = [ProbabilisticLabel(c.candidate_id, 0.8) for c in pain_candidates]
        model = clf.train_noise_aware(pain_candidates, labels, clf.TrainConfig(epochs=5))
        many = clf.predict_many(model, pain_candidates)
        singles = [clf.predict(model, c) for c in pain_candidates]
        assert np.allclose(many, singles)


class TestThreshold:
    def _model_with_scores(self, pain_candidates, score_map):
        # A model is only consulted through predict_many; patch in fixed scores.
        fc = clf.FeatureConfig()
        model = clf.ClassifierModel(weights=np.zeros(fc.dim), bias=0.0, feature_config=fc)
        return model

    def test_single_class_dev_rejected(self, pain_candidates):
        model = self._model_with_scores(pain_candidates, None)
        gold = {c.candidate_id: 1 for c in pain_candidates}
        with pytest.raises(FitError):
            clf.select_threshold(model, pain_candidates, gold)

    def test_constant_scores_pick_lowest_threshold(self, pain_candidates):
        model = self._model_with_scores(pain_candidates, None)
        gold = {c.candidate_id: (1 if i == 0 else 0) for i, c in enumerate(pain_candidates)}
        # Zero weights give every candidate score 0.5: F1 is constant over all
        # thresholds <= 0.5, so the tie-break picks 0.00.
        assert clf.select_threshold(model, pain_candidates, gold) == 0.0

    def test_separable_scores(self, pain_candidates):
        labels = [
            ProbabilisticLabel(pain_candidates[0].candidate_id, 1.0),
            ProbabilisticLabel(pain_candidates[1].candidate_id, 0.0),
            ProbabilisticLabel(pain_candidates[2].candidate_id, 0.0),
            ProbabilisticLabel(pain_candidates[3].candidate_id, 0.0),
        ]
        model = clf.train_noise_aware(
            pain_candidates, labels, clf.TrainConfig(epochs=200, learning_rate=0.5)
        )
        gold = {lab.candidate_id: int(lab.p_true) for lab in labels}
        t = clf.select_threshold(model, pain_candidates, gold)
        scores = clf.predict_many(model, pain_candidates)
        pred = scores >= t
        assert pred.tolist() == [True, False, False, False]

    def test_grid_shape(self):
        assert len(clf.THRESHOLD_GRID) == 101
        assert clf.THRESHOLD_GRID[0] == 0.0
        assert clf.THRESHOLD_GRID[-1] == 1.0


class TestScoresCsv:
    def test_round_numbers(self, tmp_path):
        path = tmp_path / "scores.csv"
        clf.scores_to_csv(["a", "b"], [0.75, 0.25], 0.5, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "candidate_id,score,predicted_label"
        assert lines[1] == "a,0.750000,1"
        assert lines[2] == "b,0.250000,0"
