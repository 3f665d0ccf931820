"""Gradient-boosted tree training, inference, and serialization tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctmdetect.errors import ConfigError, DataError, ModelFormatError
from ctmdetect.gbt import (
    HP_BOUNDS,
    MODEL_FORMAT,
    GbtHyperParams,
    GbtModel,
    balanced_weights,
    presort,
    presorted_values,
    train,
)


def _blobs(n=240, d=6, k=3, seed=0, spread=2.5):
    """Well-separated Gaussian blobs, one per class."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=spread, size=(k, d))
    y = rng.integers(0, k, size=n)
    X = centers[y] + rng.normal(scale=0.5, size=(n, d))
    return X, y


class TestHyperParams:
    def test_defaults_valid(self):
        GbtHyperParams().validate()

    def test_bounds_enforced(self):
        bad = [
            GbtHyperParams(n_rounds=9),
            GbtHyperParams(n_rounds=501),
            GbtHyperParams(max_depth=1),
            GbtHyperParams(max_depth=9),
            GbtHyperParams(learning_rate=0.005),
            GbtHyperParams(learning_rate=0.6),
            GbtHyperParams(min_child_weight=-1.0),
            GbtHyperParams(l2_lambda=-0.1),
            GbtHyperParams(subsample=0.0),
            GbtHyperParams(subsample=1.1),
            GbtHyperParams(colsample=0.0),
        ]
        for hp in bad:
            with pytest.raises(ConfigError):
                hp.validate()

    def test_dict_round_trip(self):
        hp = GbtHyperParams(n_rounds=33, max_depth=4, learning_rate=0.123)
        assert GbtHyperParams.from_dict(hp.to_dict()) == hp

    def test_bounds_table_shape(self):
        assert set(HP_BOUNDS) == {
            "n_rounds", "max_depth", "learning_rate", "min_child_weight",
            "l2_lambda", "subsample", "colsample",
        }


class TestBalancedWeights:
    def test_paper_proportion_example(self):
        # counts 34/49/17 out of 100: weights N / (K * count)
        y = np.repeat([0, 1, 2], [34, 49, 17])
        w = balanced_weights(y)
        assert np.allclose(w[y == 0], 100.0 / (3 * 34))
        assert np.allclose(w[y == 1], 100.0 / (3 * 49))
        assert np.allclose(w[y == 2], 100.0 / (3 * 17))

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=200))
    @settings(max_examples=60)
    def test_equal_mass_property(self, labels):
        y = np.asarray(labels)
        w = balanced_weights(y)
        assert np.all(w > 0)
        masses = [w[y == c].sum() for c in np.unique(y)]
        assert np.allclose(masses, masses[0], atol=1e-9)
        assert abs(w.sum() - len(y)) < 1e-9

    def test_uniform_input_gives_ones(self):
        y = np.array([0, 0, 1, 1, 2, 2])
        assert np.allclose(balanced_weights(y), 1.0)

    def test_single_class_gives_ones(self):
        assert np.allclose(balanced_weights(np.zeros(7, dtype=int)), 1.0)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            balanced_weights(np.array([], dtype=int))


class TestTraining:
    def test_separable_1d_exact_fit(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1.0, 1.0, size=200)
        x = x[np.abs(x) > 0.05]
        X = x[:, None]
        y = (x >= 0).astype(int)
        model = train(X, y, hp=GbtHyperParams(n_rounds=50, max_depth=2))
        assert np.mean(model.predict(X) == y) == 1.0

    def test_blobs_high_train_accuracy(self):
        X, y = _blobs()
        model = train(X, y, hp=GbtHyperParams(n_rounds=30, max_depth=3))
        assert np.mean(model.predict(X) == y) > 0.98

    def test_loss_monotone_without_sampling(self):
        for seed in (0, 1, 2):
            rng = np.random.default_rng(seed)
            X = rng.normal(size=(150, 8))
            y = rng.integers(0, 3, size=150)
            model = train(
                X, y,
                hp=GbtHyperParams(n_rounds=25, max_depth=3, subsample=1.0, colsample=1.0),
                seed=seed,
            )
            loss = np.array(model.train_loss)
            assert len(loss) == 26
            assert np.all(np.diff(loss) <= 1e-12)

    def test_deterministic_for_fixed_seed(self):
        X, y = _blobs(seed=3)
        hp = GbtHyperParams(n_rounds=12, max_depth=3, subsample=0.8, colsample=0.5)
        a = train(X, y, hp=hp, seed=5)
        b = train(X, y, hp=hp, seed=5)
        assert a.to_dict() == b.to_dict()

    def test_seed_changes_sampled_training(self):
        X, y = _blobs(seed=4)
        hp = GbtHyperParams(n_rounds=12, max_depth=3, subsample=0.6, colsample=0.5)
        a = train(X, y, hp=hp, seed=0)
        b = train(X, y, hp=hp, seed=1)
        assert a.to_dict() != b.to_dict()

    def test_presorted_inputs_change_nothing(self):
        X, y = _blobs(seed=5)
        hp = GbtHyperParams(n_rounds=10, max_depth=3)
        idx = presort(X)
        vals = presorted_values(X, idx)
        a = train(X, y, hp=hp, seed=2)
        b = train(X, y, hp=hp, seed=2, sort_idx=idx, sorted_vals=vals)
        assert a.to_dict() == b.to_dict()

    def test_duplicating_samples_keeps_predictions(self):
        # with no leaf regularization the fitted function depends only on
        # per-leaf gradient ratios, so doubling every sample is a no-op
        X, y = _blobs(n=150, seed=6)
        hp = GbtHyperParams(
            n_rounds=15, max_depth=3, l2_lambda=0.0, min_child_weight=0.0,
            subsample=1.0, colsample=1.0,
        )
        base = train(X, y, hp=hp, seed=0)
        doubled = train(np.vstack([X, X]), np.concatenate([y, y]), hp=hp, seed=0)
        p0 = base.predict_proba(X)
        p1 = doubled.predict_proba(X)
        assert np.max(np.abs(p0 - p1)) < 1e-9

    def test_label_permutation_symmetry(self):
        # relabeling classes permutes the probability columns
        X, y = _blobs(n=200, seed=7)
        hp = GbtHyperParams(n_rounds=15, max_depth=3, subsample=1.0, colsample=1.0)
        perm = np.array([2, 0, 1])
        w = balanced_weights(y)
        a = train(X, y, w=w, hp=hp, seed=0)
        b = train(X, perm[y], w=w, hp=hp, seed=0)
        pa = a.predict_proba(X)
        pb = b.predict_proba(X)
        assert np.max(np.abs(pb[:, perm] - pa)) < 1e-10

    def test_input_validation(self):
        X, y = _blobs(n=40, seed=8)
        with pytest.raises(DataError):
            train(X, y[:-1])
        with pytest.raises(DataError):
            train(np.empty((40, 0)), y)
        with pytest.raises(DataError):
            train(X * np.nan, y)
        with pytest.raises(DataError):
            train(X, np.zeros(40, dtype=int))  # single class
        with pytest.raises(DataError):
            train(X, y, w=np.zeros(40))
        with pytest.raises(DataError):
            train(X, y, feature_names=["a", "b"])
        with pytest.raises(DataError):
            train(X, y, class_names=["a", "b"])  # labels exceed class count

    def test_tree_structure_bounds(self):
        X, y = _blobs(seed=9)
        hp = GbtHyperParams(n_rounds=10, max_depth=3)
        model = train(X, y, hp=hp)
        assert len(model.trees) == hp.n_rounds * 3
        for t in model.trees:
            leaves = t.feature < 0
            assert np.all(t.feature[~leaves] < X.shape[1])
            # depth bound: a binary tree of depth D has at most 2^(D+1)-1 nodes
            assert t.feature.shape[0] <= 2 ** (hp.max_depth + 1) - 1
            assert np.all(t.cover > 0)


@pytest.fixture(scope="module")
def model_and_data():
    X, y = _blobs(seed=10)
    names = [f"f{i}" for i in range(X.shape[1])]
    model = train(
        X, y, hp=GbtHyperParams(n_rounds=15, max_depth=3),
        class_names=("calib", "no_tc", "tc"), feature_names=names,
    )
    return model, X, y


class TestPrediction:
    def test_probabilities_sum_to_one(self, model_and_data):
        model, X, _ = model_and_data
        rng = np.random.default_rng(11)
        q = rng.normal(scale=3.0, size=(1000, X.shape[1]))
        p = model.predict_proba(q)
        assert np.all(p >= 0)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_margin_softmax_consistency(self, model_and_data):
        model, X, _ = model_and_data
        m = model.predict_margin(X[:16])
        e = np.exp(m - m.max(axis=1, keepdims=True))
        assert np.allclose(model.predict_proba(X[:16]), e / e.sum(axis=1, keepdims=True), atol=1e-12)

    def test_predict_is_argmax(self, model_and_data):
        model, X, _ = model_and_data
        assert np.array_equal(model.predict(X), np.argmax(model.predict_proba(X), axis=1))

    def test_single_vector_input(self, model_and_data):
        model, X, _ = model_and_data
        p = model.predict_proba(X[0])
        assert p.shape == (1, 3)

    def test_untrained_model_uniform(self):
        model = GbtModel(
            hp=GbtHyperParams(), class_names=("a", "b", "c"), feature_names=None,
            n_features=4, base_score=np.zeros(3), trees=[], train_loss=[],
        )
        p = model.predict_proba(np.zeros((5, 4)))
        assert np.allclose(p, 1.0 / 3.0, atol=1e-12)

    def test_feature_count_checked(self, model_and_data):
        model, X, _ = model_and_data
        with pytest.raises(DataError):
            model.predict_proba(X[:, :-1])

    def test_named_prediction_is_order_free(self, model_and_data):
        model, X, _ = model_and_data
        perm = np.random.default_rng(12).permutation(X.shape[1])
        shuffled_names = [model.feature_names[j] for j in perm]
        p_ref = model.predict_proba(X)
        p_perm = model.predict_proba_named(X[:, perm], shuffled_names)
        assert np.array_equal(p_ref, p_perm)

    def test_named_prediction_missing_feature(self, model_and_data):
        model, X, _ = model_and_data
        names = list(model.feature_names)
        names[0] = "not_a_feature"
        with pytest.raises(DataError):
            model.predict_proba_named(X, names)

    def test_named_prediction_requires_manifest(self):
        model = GbtModel(
            hp=GbtHyperParams(), class_names=("a", "b"), feature_names=None,
            n_features=2, base_score=np.zeros(2), trees=[], train_loss=[],
        )
        with pytest.raises(DataError):
            model.predict_proba_named(np.zeros((1, 2)), ["x", "y"])


@pytest.fixture(scope="module")
def model():
    X, y = _blobs(seed=13)
    return train(
        X, y, hp=GbtHyperParams(n_rounds=12, max_depth=4, subsample=0.9),
        class_names=("calib", "no_tc", "tc"),
        feature_names=[f"f{i}" for i in range(X.shape[1])],
        seed=3,
    )


class TestSerialization:
    def test_file_round_trip_bitwise(self, model, tmp_path):
        path = tmp_path / "model.json"
        model.save(path)
        back = GbtModel.load(path)
        assert back.to_dict() == model.to_dict()
        X = np.random.default_rng(14).normal(size=(50, model.n_features))
        assert np.array_equal(model.predict_margin(X), back.predict_margin(X))

    def test_manifest_and_metadata_preserved(self, model, tmp_path):
        path = tmp_path / "model.json"
        model.save(path)
        back = GbtModel.load(path)
        assert back.class_names == model.class_names
        assert back.feature_names == model.feature_names
        assert back.hp == model.hp
        assert back.train_loss == model.train_loss

    def test_dict_round_trip(self, model):
        assert GbtModel.from_dict(model.to_dict()).to_dict() == model.to_dict()

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            GbtModel.load(tmp_path / "nope.json")

    def test_corrupt_json(self, model, tmp_path):
        path = tmp_path / "model.json"
        model.save(path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ModelFormatError):
            GbtModel.load(path)

    def test_wrong_format_tag(self, model, tmp_path):
        d = model.to_dict()
        d["format"] = "something-else"
        with pytest.raises(ModelFormatError):
            GbtModel.from_dict(d)

    def test_wrong_version(self, model):
        d = model.to_dict()
        d["version"] = 999
        with pytest.raises(ModelFormatError):
            GbtModel.from_dict(d)

    def test_missing_key(self, model):
        d = model.to_dict()
        del d["trees"]
        with pytest.raises(ModelFormatError):
            GbtModel.from_dict(d)

    def test_format_tag(self, model):
        assert model.to_dict()["format"] == MODEL_FORMAT
