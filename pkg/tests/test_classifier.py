import math

import numpy as np
import pytest

from fed_dpgan.classifier import (
    ClassifierConfig,
    default_classifier_spec,
    evaluate_accuracy,
    evaluate_loss,
    local_train,
    loss_and_gradient,
    softmax,
    softmax_cross_entropy,
    train_centralized,
)
from fed_dpgan.data import ClientShard, LabeledDataset, synth_dataset, train_test_split
from fed_dpgan.errors import DataError, ParameterError, StructuralError
from fed_dpgan.nn import ModelSpec, ParameterVector, init_params, numeric_gradient


@pytest.fixture
def spec():
    return default_classifier_spec(16, width=8, depth=3, residual_layers=(2, 3))


@pytest.fixture
def cfg(spec):
    return ClassifierConfig(spec=spec, alpha=0.05, local_epochs=1, batch=5)


def test_default_spec_layout():
    spec = default_classifier_spec(64)
    assert [layer.residual for layer in spec.layers] == [False, True, True, False, False]
    assert spec.output_width == 3


def test_config_requires_residual_and_matching_output():
    with pytest.raises(StructuralError):
        ClassifierConfig(spec=ModelSpec.mlp([4, 4, 3], ["relu", "identity"]))
    with pytest.raises(StructuralError):
        ClassifierConfig(spec=default_classifier_spec(4, classes=2))


# ─── loss ────────────────────────────────────────────────────────────────────


def test_uniform_logits_give_log3():
    loss, _ = softmax_cross_entropy(np.zeros((4, 3)), np.array([0, 1, 2, 0]))
    assert loss == pytest.approx(math.log(3))


def test_confident_correct_logits_lower_the_loss():
    logits = np.array([[5.0, 0.0, 0.0], [0.0, 5.0, 0.0]])
    assert softmax_cross_entropy(logits, np.array([0, 1]))[0] < math.log(3)


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    _, grad = softmax_cross_entropy(logits, labels)
    numeric = numeric_gradient(lambda z: softmax_cross_entropy(z, labels)[0], logits, h=1e-6)
    np.testing.assert_allclose(grad, numeric, atol=1e-5)


def test_label_out_of_range():
    with pytest.raises(ParameterError):
        softmax_cross_entropy(np.zeros((1, 3)), np.array([3]))


def test_softmax_rows_sum_to_one():
    probs = softmax(np.random.default_rng(1).normal(scale=50.0, size=(20, 3)))
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


# ─── training ────────────────────────────────────────────────────────────────


def test_zero_learning_rate_leaves_params(spec, small_dataset):
    cfg = ClassifierConfig(spec=spec, alpha=0.0, local_epochs=2, batch=7)
    params = init_params(spec, 0)
    out = local_train(params, ClientShard(0, small_dataset), cfg, np.random.default_rng(0))
    assert np.array_equal(out.values, params.values)


def test_single_full_batch_epoch_is_one_gradient_step(spec, small_dataset):
    cfg = ClassifierConfig(spec=spec, alpha=0.1, local_epochs=1, batch=len(small_dataset))
    params = init_params(spec, 2)
    out = local_train(params, ClientShard(0, small_dataset), cfg, np.random.default_rng(0))
    _, grad = loss_and_gradient(spec, params, small_dataset.samples, small_dataset.labels)
    np.testing.assert_allclose(out.values, params.values - 0.1 * grad.values, atol=1e-12)


def test_empty_shard_rejected(cfg):
    empty = ClientShard(0, LabeledDataset(np.zeros((0, 16)), np.zeros(0)))
    with pytest.raises(DataError):
        local_train(init_params(cfg.spec), empty, cfg, np.random.default_rng(0))


def test_training_lowers_loss(spec, small_dataset):
    cfg = ClassifierConfig(spec=spec, alpha=0.05, batch=10)
    params = init_params(spec, 3)
    before = evaluate_loss(params, spec, small_dataset)
    trained, losses = train_centralized(params, small_dataset, cfg, np.random.default_rng(3), epochs=10)
    assert len(losses) == 10 * 6
    assert evaluate_loss(trained, spec, small_dataset) < before


@pytest.mark.slow
def test_first_epoch_loss_is_non_increasing_for_small_rates(spec):
    passed = 0
    for seed in range(5):
        ds = synth_dataset((40, 30, 10), d=16, seed=seed)
        cfg = ClassifierConfig(spec=spec, alpha=0.005, local_epochs=1, batch=10)
        params = init_params(spec, seed)
        trained = local_train(params, ClientShard(0, ds), cfg, np.random.default_rng(seed))
        passed += evaluate_loss(trained, spec, ds) <= evaluate_loss(params, spec, ds)
    assert passed >= 4


# ─── evaluation ──────────────────────────────────────────────────────────────


def constant_classifier(spec, label):
    """Zero weights with one positive output bias."""
    values = np.zeros(spec.n_params)
    offset, length = spec.layout()[-1]
    values[offset + length - spec.output_width + label] = 1.0
    return ParameterVector(values, spec.layout())


def test_always_class_zero_scores_class_share(spec):
    labels = np.array([0] * 4 + [1] * 3 + [2] * 3)
    test = LabeledDataset(np.random.default_rng(0).uniform(size=(10, 16)), labels)
    assert evaluate_accuracy(constant_classifier(spec, 0), spec, test) == pytest.approx(0.4)


def test_ties_go_to_lowest_class(spec):
    test = LabeledDataset(np.ones((3, 16)), np.array([0, 0, 1]))
    zeros = ParameterVector(np.zeros(spec.n_params), spec.layout())
    assert evaluate_accuracy(zeros, spec, test) == pytest.approx(2 / 3)


def test_memorizing_classifier_scores_one(spec):
    """Input unit c routes straight to logit c through identity residual layers."""
    values = np.zeros(spec.n_params)
    first, last = spec.layout()[0], spec.layout()[-1]
    w_in = values[first[0] : first[0] + 16 * 8].reshape(16, 8)
    w_in[np.arange(3), np.arange(3)] = 1.0
    w_out = values[last[0] : last[0] + 8 * 3].reshape(8, 3)
    w_out[np.arange(3), np.arange(3)] = 1.0
    params = ParameterVector(values, spec.layout())

    labels = np.array([0, 1, 2, 2, 1, 0, 2])
    samples = np.zeros((labels.size, 16))
    samples[np.arange(labels.size), labels] = 1.0 + np.arange(labels.size)
    assert evaluate_accuracy(params, spec, LabeledDataset(samples, labels)) == 1.0


def test_empty_test_set(spec):
    with pytest.raises(DataError):
        evaluate_accuracy(init_params(spec), spec, LabeledDataset(np.zeros((0, 16)), np.zeros(0)))


def test_label_permutation_leaves_accuracy(spec, small_dataset):
    train, test = train_test_split(small_dataset, 0.3, seed=0)
    cfg = ClassifierConfig(spec=spec, alpha=0.05, batch=10)
    perm = np.array([2, 0, 1])

    params = init_params(spec, 0)
    values = params.values.copy()
    offset, length = params.layout[-1]
    width = spec.layers[-1].in_width
    w = params.values[offset : offset + width * 3].reshape(width, 3)
    b = params.values[offset + width * 3 : offset + length]
    w_perm, b_perm = np.empty_like(w), np.empty_like(b)
    w_perm[:, perm], b_perm[perm] = w, b
    values[offset : offset + length] = np.concatenate([w_perm.reshape(-1), b_perm])
    permuted_params = params.with_values(values)

    def relabel(ds):
        return LabeledDataset(ds.samples, perm[ds.labels])

    def fit(start, ds):
        return train_centralized(start, ds, cfg, np.random.default_rng(0), epochs=3)[0]

    base = evaluate_accuracy(fit(params, train), spec, test)
    permuted = evaluate_accuracy(fit(permuted_params, relabel(train)), spec, relabel(test))
    assert permuted == pytest.approx(base)


@pytest.mark.slow
def test_random_weights_score_about_a_third():
    spec = default_classifier_spec(16, width=8, depth=3)
    ds = synth_dataset((1000, 1000, 1000), d=16, seed=0)
    accuracies = [evaluate_accuracy(init_params(spec, s), spec, ds) for s in range(10)]
    assert abs(np.mean(accuracies) - 1 / 3) <= 0.1
