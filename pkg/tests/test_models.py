"""Network contracts: dense oracles, end-to-end gradients, checkpoint IO."""

import numpy as np
import pytest

from hgloc.errors import ContainerError, DataError
from hgloc.models import (
    CoarseLocalizer,
    HeteroGnn,
    OnlineAdapter,
    SageLayer,
    StackedFeatureEncoder,
    load_checkpoint,
    save_checkpoint,
)
from hgloc.numeric import NeighborMean, cross_entropy, mse_loss
from hgloc.serialize import read_container, write_container

from gradcheck import assert_grads_close, jitter_biases, numerical_grad
from test_numeric import random_neighbor_csr


def dense_mean_operator(indptr, indices, n):
    """D^-1 (A + I) as a dense matrix; the oracle for NeighborMean."""
    m = np.eye(n)
    for v in range(n):
        for u in indices[indptr[v] : indptr[v + 1]]:
            m[v, u] += 1.0
    return m / m.sum(axis=1, keepdims=True)


def toy_graph(rng, n=12, dtype=np.float64):
    indptr, indices = random_neighbor_csr(rng, n, max_deg=4)
    return NeighborMean(indptr, indices, dtype=dtype), indptr, indices


# ---------------------------------------------------------------- sage layer


def test_sage_forward_matches_dense_oracle():
    rng = np.random.default_rng(0)
    n, a, h = 10, 6, 5
    agg, indptr, indices = toy_graph(rng, n)
    layer = SageLayer(a, h, rng, "sage", dtype=np.float64)
    x = rng.normal(size=(n, a))
    out, _ = layer.forward(x, agg)
    m = dense_mean_operator(indptr, indices, n)
    expect = np.maximum(m @ x @ layer.W.value, 0.0)
    np.testing.assert_allclose(out, expect, atol=1e-5)


def test_sage_forward_float32_stays_within_1e5_of_oracle():
    rng = np.random.default_rng(1)
    n, a, h = 14, 8, 6
    indptr, indices = random_neighbor_csr(rng, n, max_deg=4)
    agg = NeighborMean(indptr, indices, dtype=np.float32)
    layer = SageLayer(a, h, rng, "sage", dtype=np.float32)
    x = rng.normal(size=(n, a)).astype(np.float32)
    out, _ = layer.forward(x, agg)
    m = dense_mean_operator(indptr, indices, n)
    expect = np.maximum(m @ x.astype(np.float64) @ layer.W.value.astype(np.float64), 0.0)
    np.testing.assert_allclose(out, expect, atol=1e-5)


def test_sage_isolated_graph_reduces_to_relu_linear():
    rng = np.random.default_rng(2)
    n = 5
    agg = NeighborMean(np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), dtype=np.float64)
    layer = SageLayer(3, 4, rng, "sage", dtype=np.float64)
    x = rng.normal(size=(n, 3))
    out, _ = layer.forward(x, agg)
    np.testing.assert_allclose(out, np.maximum(x @ layer.W.value, 0.0))


def test_sage_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    agg, _, _ = toy_graph(rng, 9)
    layer = SageLayer(4, 3, rng, "sage", dtype=np.float64)
    x = rng.normal(size=(9, 4))
    r = rng.normal(size=(9, 3))

    def loss():
        return float((layer.forward(x, agg)[0] * r).sum())

    loss()
    out, cache = layer.forward(x, agg)
    dx = layer.backward(r, cache)
    assert_grads_close(layer.W.grad, numerical_grad(loss, layer.W.value), label="W")
    assert_grads_close(dx, numerical_grad(loss, x), label="x")


# ---------------------------------------------------------------- coarse model


def coarse_fixture(rng, task, n_buildings=2):
    agg, _, _ = toy_graph(rng, 12)
    model = CoarseLocalizer(
        in_dim=8,
        task=task,
        n_floors=3 if task == "classification" else None,
        n_buildings=n_buildings if task == "classification" else None,
        hidden=16,
        mlp_hidden=(8, 4),
        dropout=0.0,
        seed=7,
        dtype=np.float64,
    )
    x = rng.uniform(0, 1, size=(12, 8))
    return model, agg, x


def test_coarse_regression_shapes_and_determinism():
    rng = np.random.default_rng(4)
    model, agg, x = coarse_fixture(rng, "regression")
    out1 = model.forward(x, agg)
    out2 = model.forward(x, agg)
    assert out1.shape == (12, 2)
    np.testing.assert_array_equal(out1, out2)  # inference is deterministic


def test_coarse_regression_end_to_end_gradients():
    rng = np.random.default_rng(5)
    model, agg, x = coarse_fixture(rng, "regression")
    y = rng.normal(size=(12, 2))
    mask = np.zeros(12, dtype=bool)
    mask[[1, 4, 6, 9]] = True

    def loss():
        pred = model.forward(x, agg)
        return mse_loss(pred[mask], y[mask])[0]

    loss()
    pred = model.forward(x, agg)
    _, dpred = mse_loss(pred[mask], y[mask])
    dout = np.zeros_like(pred)
    dout[mask] = dpred
    model.backward(dout)
    for p in model.params():
        assert_grads_close(p.grad, numerical_grad(loss, p.value), label=p.name)


def test_coarse_classification_heads_and_gradients():
    rng = np.random.default_rng(6)
    model, agg, x = coarse_fixture(rng, "classification")
    floors = rng.integers(0, 3, size=12)
    buildings = rng.integers(0, 2, size=12)
    beta = 0.1

    fl, bl = model.forward(x, agg)
    assert fl.shape == (12, 3) and bl.shape == (12, 2)

    def loss():
        fl, bl = model.forward(x, agg)
        return (1 - beta) * cross_entropy(fl, floors)[0] + beta * cross_entropy(bl, buildings)[0]

    loss()
    fl, bl = model.forward(x, agg)
    _, dfl = cross_entropy(fl, floors)
    _, dbl = cross_entropy(bl, buildings)
    model.backward((1 - beta) * dfl, beta * dbl)
    for p in model.params():
        assert_grads_close(p.grad, numerical_grad(loss, p.value), label=p.name)


def test_coarse_classifier_without_buildings_has_single_head():
    rng = np.random.default_rng(7)
    model, agg, x = coarse_fixture(rng, "classification", n_buildings=None)
    fl, bl = model.forward(x, agg)
    assert bl is None
    assert model.building_params() == []
    with pytest.raises(ValueError):
        model.backward(np.zeros_like(fl), np.zeros((12, 2)))


def test_untrained_regression_mse_tracks_target_variance():
    rng = np.random.default_rng(8)
    indptr, indices = random_neighbor_csr(rng, 300, max_deg=4)
    agg = NeighborMean(indptr, indices, dtype=np.float32)
    model = CoarseLocalizer(in_dim=16, task="regression", hidden=64, dropout=0.0, seed=1)
    x = rng.uniform(0, 1, size=(300, 16)).astype(np.float32)
    y = rng.normal(size=(300, 2))
    y = (y - y.mean(axis=0)) / y.std(axis=0)  # standardized targets
    pred = model.forward(x, agg)
    mse = mse_loss(pred.astype(np.float64), y)[0]
    var = float(np.sum((y - y.mean(axis=0)) ** 2) / len(y))
    assert abs(mse - var) <= 0.30 * var


# ---------------------------------------------------------------- encoder


def test_encoder_transform_nonnegative_and_shape():
    rng = np.random.default_rng(9)
    sfe = StackedFeatureEncoder(ap_count=8, dropout=0.0, seed=2, dtype=np.float64)
    x = rng.uniform(0, 1, size=(10, 8))
    z = sfe.transform(x)
    assert z.shape == (10, 8)
    assert z.min() >= 0.0


def test_encoder_forward_heads():
    sfe = StackedFeatureEncoder(ap_count=6, n_floors=4, dropout=0.0, seed=3, dtype=np.float64)
    x = np.random.default_rng(10).uniform(0, 1, size=(5, 6))
    coords, floors = sfe.forward(x)
    assert coords.shape == (5, 2) and floors.shape == (5, 4)
    coord_only = StackedFeatureEncoder(ap_count=6, dropout=0.0, seed=3, dtype=np.float64)
    coords, floors = coord_only.forward(x)
    assert floors is None


def test_encoder_end_to_end_gradients_with_both_heads():
    rng = np.random.default_rng(11)
    sfe = StackedFeatureEncoder(
        ap_count=7, n_floors=3, aux_hidden=(6, 5), dropout=0.0, seed=4, dtype=np.float64
    )
    jitter_biases(sfe, rng)
    x = rng.uniform(0, 1, size=(9, 7))
    y = rng.normal(size=(9, 2))
    floors = rng.integers(0, 3, size=9)

    def loss():
        coords, fl = sfe.forward(x)
        return mse_loss(coords, y)[0] + cross_entropy(fl, floors)[0]

    loss()
    coords, fl = sfe.forward(x)
    _, dc = mse_loss(coords, y)
    _, df = cross_entropy(fl, floors)
    sfe.backward(dc, df)
    for p in sfe.params():
        assert_grads_close(p.grad, numerical_grad(loss, p.value), label=p.name)


def test_encoder_weight_list_for_l1_excludes_biases():
    sfe = StackedFeatureEncoder(ap_count=5, seed=0)
    names = [p.name for p in sfe.encoder_weights()]
    assert names == ["enc0.W", "enc1.W", "enc2.W"]


# ---------------------------------------------------------------- hetero model


def hetero_fixture(rng, mode="full", n=12, a=8, hidden=10, dtype=np.float64):
    agg_pos, pp, pi = toy_graph(rng, n, dtype=dtype)
    agg_rssi, rp, ri = toy_graph(rng, n, dtype=dtype)
    model = HeteroGnn(
        in_dim=a, out_dim=2, hidden=hidden, mlp_hidden=(6,),
        mode=mode, dropout=0.0, seed=5, dtype=dtype,
    )
    x = rng.uniform(0, 1, size=(n, a)).astype(dtype)
    return model, agg_pos, agg_rssi, x, (pp, pi), (rp, ri)


@pytest.mark.parametrize("mode", ["full", "shared_only", "parallel_only"])
def test_hetero_modes_produce_output_and_gradients(mode):
    rng = np.random.default_rng(12)
    model, agg_pos, agg_rssi, x, _, _ = hetero_fixture(rng, mode=mode)
    y = rng.normal(size=(len(x), 2))

    def loss():
        return mse_loss(model.forward(x, agg_pos, agg_rssi), y)[0]

    loss()
    pred = model.forward(x, agg_pos, agg_rssi)
    assert pred.shape == (len(x), 2)
    _, dpred = mse_loss(pred, y)
    model.backward(dpred)
    for p in model.params():
        assert_grads_close(p.grad, numerical_grad(loss, p.value), label=f"{mode}:{p.name}")


def test_hetero_matches_manual_dense_composition():
    rng = np.random.default_rng(13)
    model, agg_pos, agg_rssi, x, (pp, pi), (rp, ri) = hetero_fixture(rng, n=20)
    out = model.forward(x, agg_pos, agg_rssi)

    mp = dense_mean_operator(pp, pi, 20)
    mr = dense_mean_operator(rp, ri, 20)
    w_shared = model.shared.W.value
    hp = np.maximum(mp @ x @ w_shared, 0)
    hr = np.maximum(mr @ x @ w_shared, 0)
    hp = np.maximum(mp @ hp @ model.p1[0].W.value, 0)
    hr = np.maximum(mr @ hr @ model.p2[0].W.value, 0)
    hr = np.maximum(mr @ hr @ model.p2[1].W.value, 0)
    f = np.concatenate([hp, hr], axis=1) @ model.fusion.W.value + model.fusion.b.value
    f = np.maximum(f, 0)
    t = f @ model.head.linears[0].W.value + model.head.linears[0].b.value
    t = np.where(t > 0, t, 0.01 * t)
    expect = t @ model.head.linears[1].W.value + model.head.linears[1].b.value
    np.testing.assert_allclose(out, expect, atol=1e-5)


def test_shared_layer_perturbation_touches_both_branches():
    rng = np.random.default_rng(14)
    model, agg_pos, agg_rssi, x, _, _ = hetero_fixture(rng)
    model.forward(x, agg_pos, agg_rssi)
    hp0, hr0 = model.branch_outputs
    model.shared.W.value = model.shared.W.value + 0.05
    model.forward(x, agg_pos, agg_rssi)
    hp1, hr1 = model.branch_outputs
    assert not np.allclose(hp0, hp1)
    assert not np.allclose(hr0, hr1)


def test_parallel_branch_isolation():
    rng = np.random.default_rng(15)
    model, agg_pos, agg_rssi, x, _, _ = hetero_fixture(rng)
    model.forward(x, agg_pos, agg_rssi)
    _, hr0 = model.branch_outputs
    model.p1[0].W.value = model.p1[0].W.value + 0.5
    model.forward(x, agg_pos, agg_rssi)
    hp1, hr1 = model.branch_outputs
    np.testing.assert_array_equal(hr0, hr1)  # branch 2 untouched pre-fusion


def test_hetero_rejects_unknown_mode():
    with pytest.raises(ValueError):
        HeteroGnn(in_dim=4, out_dim=2, mode="nope")


# ---------------------------------------------------------------- adapter


def test_adapter_identity_at_init_and_row_masking():
    rng = np.random.default_rng(16)
    x = rng.uniform(0, 1, size=(6, 5)).astype(np.float32)
    mask = np.array([False, True, False, True, False, False])
    adapter = OnlineAdapter(5)
    out = adapter.forward(x, mask)
    np.testing.assert_array_equal(out, x)  # weights start at 1
    adapter.w.value = adapter.w.value * 2
    out = adapter.forward(x, mask)
    np.testing.assert_array_equal(out[~mask], x[~mask])
    np.testing.assert_allclose(out[mask], 2 * x[mask])


def test_adapter_gradients_through_frozen_network():
    rng = np.random.default_rng(17)
    model, agg_pos, agg_rssi, x, _, _ = hetero_fixture(rng)
    adapter = OnlineAdapter(x.shape[1], dtype=np.float64)
    mask = np.zeros(len(x), dtype=bool)
    mask[[2, 5, 7]] = True
    y = rng.normal(size=(3, 2))

    def loss():
        pred = model.forward(adapter.forward(x, mask), agg_pos, agg_rssi)
        return mse_loss(pred[mask], y)[0]

    loss()
    pred = model.forward(adapter.forward(x, mask), agg_pos, agg_rssi)
    _, dp = mse_loss(pred[mask], y)
    dout = np.zeros_like(pred)
    dout[mask] = dp
    dx = model.backward(dout)
    adapter.backward(dx)
    assert_grads_close(adapter.w.grad, numerical_grad(loss, adapter.w.value), label="adapter.w")


def test_adapter_full_matrix_variant():
    rng = np.random.default_rng(18)
    x = rng.uniform(0, 1, size=(4, 3)).astype(np.float64)
    adapter = OnlineAdapter(3, full_matrix=True, dtype=np.float64)
    mask = np.ones(4, dtype=bool)
    np.testing.assert_allclose(adapter.forward(x, mask), x)  # identity init
    r = rng.normal(size=(4, 3))

    def loss():
        return float((adapter.forward(x, mask) * r).sum())

    loss()
    adapter.forward(x, mask)
    adapter.backward(r)
    assert_grads_close(adapter.w.grad, numerical_grad(loss, adapter.w.value))


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(19)
    model, agg, x = coarse_fixture(rng, "classification")
    path = tmp_path / "coarse.ckpt"
    save_checkpoint(path, model, config_fingerprint="fp123", seed=7)
    loaded, meta = load_checkpoint(path, expect_fingerprint="fp123")
    assert meta["seed"] == 7
    for p, q in zip(model.params(), loaded.params()):
        assert p.name == q.name
        np.testing.assert_array_equal(p.value, q.value)
    fl0, bl0 = model.forward(x, agg)
    fl1, bl1 = loaded.forward(x, agg)
    np.testing.assert_array_equal(fl0, fl1)
    np.testing.assert_array_equal(bl0, bl1)


@pytest.mark.parametrize(
    "build",
    [
        lambda: StackedFeatureEncoder(ap_count=6, n_floors=3, seed=1),
        lambda: HeteroGnn(in_dim=5, out_dim=2, hidden=8, mlp_hidden=(4,), seed=2),
        lambda: OnlineAdapter(7),
        lambda: OnlineAdapter(4, full_matrix=True),
    ],
)
def test_checkpoint_round_trip_all_kinds(tmp_path, build):
    model = build()
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    loaded, _ = load_checkpoint(path)
    assert type(loaded) is type(model)
    for p, q in zip(model.params(), loaded.params()):
        np.testing.assert_array_equal(p.value, q.value)
        assert q.value.dtype == p.value.dtype


def test_checkpoint_fingerprint_mismatch_rejected(tmp_path):
    model = OnlineAdapter(3)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, model, config_fingerprint="abc")
    with pytest.raises(DataError, match="fingerprint"):
        load_checkpoint(path, expect_fingerprint="xyz")
    loaded, _ = load_checkpoint(path)  # no expectation: loads fine
    assert isinstance(loaded, OnlineAdapter)


def test_checkpoint_tampered_blob_rejected(tmp_path):
    model = OnlineAdapter(3)
    path = tmp_path / "t.ckpt"
    save_checkpoint(path, model)
    raw = bytearray(path.read_bytes())
    raw[-2] ^= 0x55
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="checksum"):
        load_checkpoint(path)


def test_checkpoint_architecture_mismatch_rejected(tmp_path):
    model = StackedFeatureEncoder(ap_count=5, seed=0)
    path = tmp_path / "s.ckpt"
    save_checkpoint(path, model)
    meta, blobs = read_container(path, expect_kind="checkpoint")
    meta["arch"]["ap_count"] = 6  # lie about the architecture
    write_container(path, "checkpoint", meta, blobs)
    with pytest.raises(DataError, match="shape"):
        load_checkpoint(path)
