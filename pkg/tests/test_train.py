import math

import numpy as np
import pytest

from qrover.attack import encode
from qrover.qcore import check_density
from qrover.train import (TrainConfig, VariationalModel, accuracy, adversarial_retrain, ansatz,
                          critical_samples, generate_lcei, generate_synthetic, harvest_adversarial,
                          rlb_for_label, train)
from qrover.verify import LabeledDataset


def toy_data():
    # ry-encoded angles either side of pi/2
    xs = [0.2, 0.5, 0.8, 2.3, 2.6, 2.9]
    return LabeledDataset([(encode([x], 1), int(x > math.pi / 2)) for x in xs])


def test_ansatz_layout():
    c = ansatz(3, 2, readout=2)
    assert len(c.slots) == 2 * 2 * 3 + 1
    assert c.measured_qubits == (2,)
    assert sum(op.kind == "cx" for op in c.gates) == 4


def test_model_validates_theta_length():
    with pytest.raises(ValueError):
        VariationalModel(1, 1, np.zeros(2))


def test_separable_toy_is_learned():
    model = VariationalModel.init(1, 1, seed=0)
    res = train(model, toy_data(), TrainConfig(epochs=50, learning_rate=0.3))
    assert accuracy(res.model, toy_data()) == 1.0
    assert res.losses[-1] < res.losses[0]


def test_zero_epochs_is_identity():
    model = VariationalModel.init(2, 1, seed=4)
    res = train(model, toy_data_2q(), TrainConfig(epochs=0))
    assert np.array_equal(res.model.theta, model.theta)
    assert len(res.losses) == 1


def toy_data_2q():
    return generate_synthetic(2, 8, seed=1)


def test_training_is_deterministic():
    model = VariationalModel.init(2, 1, seed=2)
    cfg = TrainConfig(epochs=5, batch=3, seed=9)
    r1 = train(model, toy_data_2q(), cfg)
    r2 = train(model, toy_data_2q(), cfg)
    assert all(np.array_equal(a, b) for a, b in zip(r1.theta_history, r2.theta_history))
    assert r1.losses == r2.losses


def test_empty_adversarial_set_matches_clean_training():
    model = VariationalModel.init(2, 1, seed=2)
    data = toy_data_2q()
    cfg = TrainConfig(epochs=3, seed=5)
    clean = adversarial_retrain(model, data, [], cfg)
    again = adversarial_retrain(model, data, [], cfg)
    assert np.array_equal(clean.model.theta, again.model.theta)
    # a full run whose harvest comes back empty equals plain training
    plain = train(model, data, cfg)
    adv = train(model, LabeledDataset([(it.state, it.label) for it in data]),
                TrainConfig(epochs=3, seed=5, adversarial=True))
    assert np.array_equal(plain.model.theta, adv.model.theta)
    assert adv.adversarial_items == 0


def test_harvest_from_features_and_witnesses():
    model = train(VariationalModel.init(1, 1, seed=0), toy_data(), TrainConfig(epochs=30, learning_rate=0.3)).model
    adv = harvest_adversarial(model, toy_data(), TrainConfig())
    assert adv and all(w == 1.0 for _, _, w in adv)
    raw = LabeledDataset([(it.state, it.label) for it in toy_data()])
    wit = harvest_adversarial(model, raw, TrainConfig(witness_eps=0.3))
    assert wit and all(0.0 < w <= 1.0 for _, _, w in wit)


def test_lcei_generator():
    data = generate_lcei(3, 20, seed=0)
    assert len(data) == 20
    assert [it.label for it in data] == [i % 2 for i in range(20)]
    for it in data:
        check_density(it.state.matrix)
        alpha = it.features.features[-1]
        assert (alpha > math.pi / 4) == bool(it.label)
    again = generate_lcei(3, 20, seed=0)
    assert all(np.array_equal(x.state.matrix, y.state.matrix) for x, y in zip(data, again))


def test_lcei_alpha_zero_is_non_excited():
    data = generate_lcei(2, 1, alpha_range=(0.0, 1e-12))
    assert data[0].label == 0
    with pytest.raises(ValueError):
        generate_lcei(2, 2, alpha_range=(0.0, 0.1))
    with pytest.raises(ValueError):
        generate_lcei(7, 2)


def test_synthetic_generator():
    data = generate_synthetic(2, 10, seed=3, n_features=4)
    assert len(data) == 10 and data.labels == ("A", "B")
    assert all(len(it.features.features) == 4 for it in data)


def test_critical_samples():
    assert critical_samples([0.3, 0.1, 0.2, 0.4, 0.05]) == [4]
    assert critical_samples([0.3, 0.1, 0.2, 0.4, 0.05, 0.1, 0.5, 0.6, 0.7, 0.8]) == [1, 4]
    assert critical_samples([0.1, 0.1, 0.1, 0.1, 0.1]) == [0]
    assert critical_samples([0.1, 0.2]) == []


def test_rlb_for_label():
    model = VariationalModel(1, 1, np.zeros(3))
    a = model.classifier()
    zero = np.diag([1.0, 0.0])
    assert rlb_for_label(a, zero, 0) == pytest.approx(0.5)
    assert rlb_for_label(a, zero, 1) == 0.0
