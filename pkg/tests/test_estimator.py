import numpy as np
import pytest
from sklearn.base import clone

from vlfat.data import SyntheticTaskSpec, synthesize_volume
from vlfat.errors import InvalidInputError
from vlfat.estimator import VolumeClassifier
from vlfat.rng import RngStream
from vlfat.validation import check_labels, check_volume_list

MICRO_TASK = SyntheticTaskSpec(height=16, width=16, n_min=8, n_max=12, noise_level=0.02)


def micro_data(per_class, seed):
    X, y = [], []
    for label in range(4):
        for k in range(per_class):
            rng = RngStream.for_label(seed, f"sample/{label}/{k}")
            X.append(synthesize_volume(MICRO_TASK, label, rng))
            y.append(("healthy", "shallow", "wide", "deep")[label])
    return X, np.array(y)


def micro_classifier(**kw):
    params = dict(
        aggregator="vlfat",
        image_size=16,
        patch_size=8,
        embed_dim=8,
        encoder_blocks=1,
        encoder_heads=2,
        agg_blocks=1,
        agg_heads=2,
        mlp_ratio=2.0,
        schedule=(3, 4, 6),
        train_length=4,
        epochs=2,
        batch_size=8,
        lr_max=3e-3,
        augment=False,
        val_fraction=0.25,
        seed=0,
    )
    params.update(kw)
    return VolumeClassifier(**params)


class TestSklearnProtocol:
    def test_get_params_roundtrip(self):
        clf = micro_classifier()
        params = clf.get_params()
        assert params["aggregator"] == "vlfat"
        clf.set_params(epochs=5, lr_max=1e-4)
        assert clf.epochs == 5 and clf.lr_max == 1e-4

    def test_clone_preserves_params(self):
        clf = micro_classifier(aggregator="maxpool")
        twin = clone(clf)
        assert twin.get_params() == clf.get_params()

    def test_fit_predict_cycle(self):
        X, y = micro_data(4, seed=21)
        clf = micro_classifier().fit(X, y)
        assert sorted(clf.classes_) == sorted(set(y))
        preds = clf.predict(X)
        assert preds.shape == (len(X),)
        assert set(preds) <= set(y)
        assert hasattr(clf, "best_epoch_") and hasattr(clf, "history_")

    def test_predict_proba_rows_sum_to_one(self):
        X, y = micro_data(3, seed=22)
        clf = micro_classifier().fit(X, y)
        probs = clf.predict_proba(X[:5])
        assert probs.shape == (5, 4)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_score_is_accuracy(self):
        X, y = micro_data(3, seed=23)
        clf = micro_classifier().fit(X, y)
        acc = clf.score(X, y)
        assert acc == np.mean(clf.predict(X) == y)

    def test_refit_is_deterministic(self):
        X, y = micro_data(3, seed=24)
        probs_a = micro_classifier().fit(X, y).predict_proba(X)
        probs_b = micro_classifier().fit(X, y).predict_proba(X)
        assert np.array_equal(probs_a, probs_b)

    def test_variable_length_inputs(self):
        X, y = micro_data(3, seed=25)
        lengths = {x.shape[0] for x in X}
        assert len(lengths) > 1  # the fixture really is variable-length
        clf = micro_classifier(aggregator="avgpool").fit(X, y)
        assert clf.predict([X[0][:5], X[1]]).shape == (2,)

    def test_unfitted_predict_rejected(self):
        with pytest.raises(InvalidInputError):
            micro_classifier().predict([np.zeros((4, 16, 16))])


class TestValidationHelpers:
    def test_volume_list_accepts_rank4(self):
        batch = RngStream(1, 0).uniform((3, 4, 8, 8))
        vols = check_volume_list(batch)
        assert len(vols) == 3 and vols[0].shape == (4, 8, 8)

    def test_rejects_rank_mismatch(self):
        with pytest.raises(InvalidInputError):
            check_volume_list([np.zeros((8, 8))])

    def test_rejects_mixed_planes(self):
        with pytest.raises(InvalidInputError):
            check_volume_list([np.zeros((2, 8, 8)), np.zeros((2, 4, 4))])

    def test_rejects_nonfinite(self):
        bad = np.full((2, 4, 4), np.nan)
        with pytest.raises(InvalidInputError):
            check_volume_list([bad])

    def test_rejects_wrong_plane_for_config(self):
        with pytest.raises(InvalidInputError):
            check_volume_list([np.zeros((2, 8, 8))], image_size=(16, 16))

    def test_labels_must_match_length(self):
        with pytest.raises(InvalidInputError):
            check_labels([0, 1], 3)
