import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poupinn import network as nw
from poupinn import train
from poupinn.pou import (
    LearnedField,
    PartitionModel,
    conductivity,
    conductivity_jet,
    fit_supervised,
    hard_partition,
    hard_partition_from_phi,
    phi,
    phi_jet,
)


def _model_with_logits(bias, logc):
    """Partition model whose logits are the constant ``bias`` (zero weights)."""
    spec = nw.mlp(2, (3,), len(bias), "softmax")
    layers = [(np.zeros((3, 2)), np.zeros(3)), (np.zeros((len(bias), 3)), np.asarray(bias, dtype=float))]
    return PartitionModel(spec, nw.NetworkParams(layers), np.asarray(logc, dtype=float))


def test_zero_logits_are_uniform():
    m = PartitionModel.create(nw.mlp(2, (4,), 3, "softmax"), 0)
    m.zeta.layers[-1] = (np.zeros((3, 4)), np.zeros(3))
    assert np.allclose(phi(m, np.array([0.2, 0.3])), 1 / 3, atol=1e-15)


def test_logits_ln2_zero():
    m = _model_with_logits([math.log(2), 0.0], [0.0, 0.0])
    assert np.allclose(phi(m, np.array([0.5, 0.5])), [2 / 3, 1 / 3], atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_unity_and_bounds(seed, n):
    rng = np.random.default_rng(seed)
    m = PartitionModel.create(nw.mlp(2, (10,), n, "softmax"), rng, logc=rng.normal(0, 2, n))
    X = rng.random((200, 2))
    p = phi(m, X)
    assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-12
    assert np.all(p >= 0)
    k = conductivity(m, X)
    lv = m.levels()
    assert np.all(k > 0)
    assert np.all(k >= lv.min() * (1 - 1e-12)) and np.all(k <= lv.max() * (1 + 1e-12))


def test_single_partition_is_constant_one():
    m = PartitionModel.create(nw.mlp(2, (4,), 1, "softmax"), 3)
    X = np.random.default_rng(0).random((20, 2))
    j = conductivity_jet(m, X)
    assert np.allclose(j.v, 1.0, atol=1e-15)
    assert np.max(np.abs(np.concatenate([j.gx, j.gy, j.hxx]))) <= 1e-14


def test_saturated_partition_gives_its_level():
    m = _model_with_logits([60.0, 0.0], [math.log(10), 0.0])
    assert conductivity(m, np.array([0.5, 0.5])) == pytest.approx(10.0, rel=1e-12)


def test_conductivity_jet_matches_fd():
    rng = np.random.default_rng(4)
    m = PartitionModel.create(nw.mlp(2, (12, 12), 3, "softmax"), rng, logc=rng.normal(0, 1, 3))
    x = np.array([0.37, 0.61])
    j = conductivity_jet(m, x)
    h = 1e-6
    f = lambda p: float(conductivity(m, p))
    fd = [(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose([j.gx, j.gy], fd, rtol=1e-6, atol=1e-10)
    pj = phi_jet(m, x)
    assert pj.v.shape == (3,)


def test_hard_partition_rules():
    assert hard_partition_from_phi(np.array([0.9, 0.1])) == 0
    assert hard_partition_from_phi(np.array([0.5, 0.5])) == 0
    rng = np.random.default_rng(0)
    m = PartitionModel.create(nw.mlp(2, (8,), 4, "softmax"), rng)
    X = rng.random((100, 2))
    p = phi(m, X)
    labels = hard_partition(m, X)
    assert np.all(p[np.arange(100), labels] >= p.max(axis=1))


def test_permutation_leaves_conductivity_unchanged():
    rng = np.random.default_rng(11)
    m = PartitionModel.create(nw.mlp(2, (8,), 3, "softmax"), rng, logc=rng.normal(0, 1, 3))
    perm = [2, 0, 1]
    X = rng.random((50, 2))
    assert np.allclose(conductivity(m.permuted(perm), X), conductivity(m, X), rtol=1e-14)
    assert np.allclose(phi(m.permuted(perm), X), phi(m, X)[:, perm], rtol=0, atol=1e-15)


def test_flat_roundtrip_and_validation():
    m = PartitionModel.create(nw.mlp(2, (5,), 2, "softmax"), 1, logc=[0.1, -0.2])
    flat = m.flatten()
    assert flat.size == m.n_params()
    back = PartitionModel.from_flat(m.spec, flat)
    assert np.array_equal(back.flatten(), flat)
    with pytest.raises(ValueError):
        PartitionModel.create(nw.mlp(2, (5,), 2, "linear"), 0)
    with pytest.raises(ValueError):
        PartitionModel(m.spec, m.zeta, np.zeros(3))


def test_learned_field_interface():
    m = PartitionModel.create(nw.mlp(2, (5,), 2, "softmax"), 1)
    fld = LearnedField(m)
    X = np.array([[0.1, 0.2], [0.7, 0.3]])
    assert np.array_equal(fld.value(X), conductivity(m, X))
    assert fld.jet(X).v.shape == (2,)


def test_fit_constant_target_is_exact():
    m = PartitionModel.create(nw.mlp(2, (4,), 1, "softmax"), 0, logc=[0.5])
    data = [((x, y), 1.0) for x, y in np.random.default_rng(0).random((16, 2))]
    cfg = train.TrainConfig(epochs=3000, lr=0.01)
    fitted, history = fit_supervised(m, data, cfg)
    assert len(history) == 3000
    assert abs(fitted.logc[0]) < 1e-5
    X = np.array([p for p, _ in data])
    assert np.mean((conductivity(fitted, X) - 1.0) ** 2) < 1e-10


def test_fit_rejects_bad_data():
    m = PartitionModel.create(nw.mlp(2, (4,), 2, "softmax"), 0)
    with pytest.raises(ValueError):
        fit_supervised(m, [], train.TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        fit_supervised(m, [((0.1, 0.1), -1.0)], train.TrainConfig(epochs=1))
