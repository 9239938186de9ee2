from __future__ import annotations

import numpy as np
import pytest

from engagecf import cfgan
from engagecf.cfgan import Direction, GanConfig
from engagecf.data import HIGH, LOW, N_FEATURES, NormStats, fit_normalizer, normalize_dataset
from engagecf.errors import EngageError, TrainingDiverged


class IdentityStub:
    def transform(self, Z, direction):
        return np.array(Z, copy=True)


class CentroidStub:
    """Sends every vector to the centroid of the target class."""

    def __init__(self, c_low, c_high):
        self.c = {Direction.HIGH_TO_LOW: c_low, Direction.LOW_TO_HIGH: c_high}

    def transform(self, Z, direction):
        return np.tile(self.c[Direction(direction)], (len(Z), 1))


def test_transform_shapes(small_gan, small_split):
    _, test = small_split
    for d in Direction:
        assert small_gan.transform(test.X[:7], d).shape == (7, N_FEATURES)
    assert cfgan.counterfactual(small_gan, test.X[0]).shape == (N_FEATURES,)


def test_counterfactual_does_not_mutate_input(small_gan, small_split):
    _, test = small_split
    z = test.X[0].copy()
    before = z.copy()
    cfgan.counterfactual(small_gan, z, Direction.LOW_TO_HIGH)
    cfgan.counterfactual(small_gan, z, Direction.HIGH_TO_LOW)
    assert np.array_equal(z, before)


def test_counterfactual_rejects_non_finite(small_gan):
    z = np.zeros(N_FEATURES)
    z[5] = np.inf
    with pytest.raises(EngageError) as exc:
        cfgan.counterfactual(small_gan, z)
    assert exc.value.code == "invalid-input"
    with pytest.raises(EngageError):
        cfgan.counterfactual(small_gan, np.zeros(19))


def test_training_is_deterministic(small_split, small_clf):
    train, _ = small_split
    cfg = GanConfig(epochs=2, seed=4)
    a = cfgan.train_gan(train.with_class(LOW), train.with_class(HIGH), small_clf, cfg)
    b = cfgan.train_gan(train.with_class(LOW), train.with_class(HIGH), small_clf, cfg)
    for name in ("gen_lh", "gen_hl", "disc_l", "disc_h"):
        for pa, pb in zip(getattr(a, name).params, getattr(b, name).params):
            assert np.array_equal(pa, pb)
    assert a.loss_traces == b.loss_traces


def test_loss_traces_are_finite(small_gan):
    assert set(small_gan.loss_traces) == set(cfgan.TRACE_KEYS)
    for values in small_gan.loss_traces.values():
        assert len(values) == 150
        assert np.all(np.isfinite(values))
    assert small_gan.loss_traces["identity"] == [0.0] * 150
    cycle = small_gan.loss_traces["cycle"]
    assert cycle[-1] < cycle[0]


def test_huge_cycle_weight_keeps_generator_near_identity(small_split, small_clf):
    train, test = small_split
    Z = test.X
    for seed in range(3):
        baseline = cfgan.init_model(GanConfig(seed=seed), small_clf.norm_stats)
        trained = cfgan.train_gan(train.with_class(LOW), train.with_class(HIGH), small_clf,
                                  GanConfig(epochs=10, lambda_cycle=1e6, seed=seed))
        random_l1 = np.abs(baseline.gen_lh(Z) - Z).mean()
        trained_l1 = np.abs(trained.gen_lh(Z) - Z).mean()
        assert trained_l1 < random_l1, (seed, trained_l1, random_l1)


def test_identity_stub_never_flips(small_split, small_clf):
    _, test = small_split
    assert cfgan.flip_rate(IdentityStub(), small_clf, test) == 0.0


def test_flip_rate_matches_brute_force(small_split, small_clf):
    train, test = small_split
    stub = CentroidStub(train.with_class(LOW).X.mean(axis=0), train.with_class(HIGH).X.mean(axis=0))
    flips = 0
    for z in test.X:
        pred = int(np.argmax(small_clf.predict_proba(z[None, :])[0]))
        target = stub.c[Direction.LOW_TO_HIGH if pred == LOW else Direction.HIGH_TO_LOW]
        flips += int(np.argmax(small_clf.predict_proba(target[None, :])[0])) != pred
    rate = cfgan.flip_rate(stub, small_clf, test)
    assert rate == flips / len(test)
    assert 0.0 <= rate <= 1.0


def test_flip_rate_empty(small_split, small_clf):
    _, test = small_split
    with pytest.raises(EngageError) as exc:
        cfgan.flip_rate(IdentityStub(), small_clf, test.X[:0])
    assert exc.value.code == "empty-dataset"


def test_trained_gan_flips_most_low_predictions(small_gan, small_split, small_clf):
    _, test = small_split
    low_pred = test.subset(small_clf.predict_class(test.X) == LOW)
    assert cfgan.flip_rate(small_gan, small_clf, low_pred) >= 0.9


@pytest.mark.parametrize("cfg", [GanConfig(epochs=1), GanConfig(epochs=1, residual=False),
                                 GanConfig(epochs=1, lambda_identity=5.0, gen_hidden=(8, 6), disc_hidden=(5,))])
def test_grad_check_all_networks(small_split, small_clf, cfg):
    train, _ = small_split
    model = cfgan.init_model(cfg, small_clf.norm_stats)
    xl, xh = train.with_class(LOW).X[:12], train.with_class(HIGH).X[:10]
    errs = cfgan.grad_check(model, small_clf, xl, xh, step=1e-4, n_coords=120, seed=1)
    assert set(errs) == {"gen_lh", "gen_hl", "disc_l", "disc_h"}
    for name, err in errs.items():
        assert err < 1e-3, name


def test_grad_check_after_training(small_gan, small_split, small_clf):
    train, _ = small_split
    errs = cfgan.grad_check(small_gan, small_clf, train.with_class(LOW).X[:16], train.with_class(HIGH).X[:16])
    assert max(errs.values()) < 1e-3


def test_cycle_error_and_interclass_distance():
    rng = np.random.default_rng(0)
    ZL, ZH = rng.standard_normal((5, N_FEATURES)), rng.standard_normal((4, N_FEATURES)) + 1
    brute = np.mean([np.abs(a - b).sum() for a in ZL for b in ZH])
    assert cfgan.mean_interclass_l1(ZL, ZH) == pytest.approx(brute, rel=1e-12)
    model = cfgan.init_model(GanConfig(), NormStats(np.zeros(N_FEATURES), np.ones(N_FEATURES)))
    for net in (model.gen_lh, model.gen_hl):
        for p in net.params:
            p[...] = 0.0
    # zeroed residual generators are exact identities, so the cycle is perfect
    assert cfgan.cycle_error(model, ZL, ZH) == 0.0


def test_partition_must_use_classifier_stats(small_corpus, small_split, small_clf):
    train, _ = small_split
    other = normalize_dataset(small_corpus, fit_normalizer(small_corpus))
    with pytest.raises(EngageError) as exc:
        cfgan.train_gan(other.with_class(LOW), train.with_class(HIGH), small_clf, GanConfig(epochs=1))
    assert exc.value.code == "invalid-input"
    with pytest.raises(EngageError) as exc:
        cfgan.train_gan(train.with_class(LOW).subset([]), train.with_class(HIGH), small_clf, GanConfig(epochs=1))
    assert exc.value.code == "empty-dataset"


def test_huge_learning_rate_diverges(small_split, small_clf):
    train, _ = small_split
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged):
        cfgan.train_gan(train.with_class(LOW), train.with_class(HIGH), small_clf,
                        GanConfig(epochs=3, learning_rate=1e200))


@pytest.mark.parametrize("field,value", [("lambda_cycle", -1.0), ("epochs", 0), ("batch_size", 0),
                                         ("beta1", 1.0), ("learning_rate", -1e-4), ("gen_hidden", (0,))])
def test_invalid_gan_config(field, value):
    with pytest.raises(EngageError) as exc:
        GanConfig(**{field: value})
    assert exc.value.code == "invalid-config"
    assert field in str(exc.value)


def test_save_load_round_trip(tmp_path, small_gan, small_split):
    _, test = small_split
    path = tmp_path / "gan.json"
    cfgan.save_model(small_gan, path, extra={"k": 1})
    back = cfgan.load_model(path)
    assert back.config == small_gan.config
    assert back.norm_stats == small_gan.norm_stats
    assert back.loss_traces == small_gan.loss_traces
    for d in Direction:
        assert np.array_equal(back.transform(test.X, d), small_gan.transform(test.X, d))


def test_load_rejects_bad_files(small_gan):
    d = cfgan.model_to_dict(small_gan)
    d["version"] = "nope"
    with pytest.raises(EngageError) as exc:
        cfgan.model_from_dict(d)
    assert exc.value.code == "invalid-file"
    d = cfgan.model_to_dict(small_gan)
    del d["networks"]["disc_h"]
    with pytest.raises(EngageError) as exc:
        cfgan.model_from_dict(d)
    assert exc.value.code == "invalid-file"
