import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scilm import numkernel as nk
from scilm.errors import ContractViolation
from scilm.model import (
    ModelConfig,
    SenParams,
    SharedParams,
    attention_weights,
    build_prototypes,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sen_forward,
    shared_embed,
)
from scilm.sampler import BalancedBatch, make_rng, sample_balanced_batch

CFG = ModelConfig(q=4, h=5, p=6, n=3)


def relu(v):
    return [max(0.0, x) for x in v]


def affine(W, b, x):
    return [sum(W[i][j] * x[j] for j in range(len(x))) + b[i] for i in range(len(b))]


def test_init_biases_zero_and_deterministic():
    s1, g1 = init_params(CFG, make_rng(3))
    s2, g2 = init_params(CFG, make_rng(3))
    for arr in (s1.b1, s1.b2, g1.bs):
        assert not arr.any()
    for a, b in zip([*s1.as_dict().values(), *g1.as_dict().values()],
                    [*s2.as_dict().values(), *g2.as_dict().values()]):
        np.testing.assert_array_equal(a, b)
    assert s1.W1.shape == (5, 4) and s1.W2.shape == (6, 5) and g1.Ws.shape == (5, 6)


def test_init_fan_bound():
    for seed in range(100):
        sen, shared = init_params(CFG, make_rng(seed))
        for W in (sen.W1, sen.W2, shared.Ws):
            bound = math.sqrt(6.0 / sum(W.shape))
            assert np.abs(W).max() <= bound


def test_sen_zero_params():
    sen = SenParams(np.zeros((5, 4)), np.zeros(5), np.zeros((6, 5)), np.zeros(6))
    assert not sen_forward(np.ones(4), sen).any()


def test_sen_scalar_hand_case():
    one = SenParams(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1))
    assert sen_forward(np.array([2.0]), one).tolist() == [2.0]
    assert sen_forward(np.array([-2.0]), one).tolist() == [0.0]


def test_sen_vs_loop_reimplementation(rng):
    sen, _ = init_params(CFG, rng)
    sen.b1[:] = rng.standard_normal(5)
    sen.b2[:] = rng.standard_normal(6)
    a = rng.standard_normal(4)
    expected = relu(affine(sen.W2, sen.b2, relu(affine(sen.W1, sen.b1, a))))
    np.testing.assert_allclose(sen_forward(a, sen), expected, rtol=0, atol=1e-12)
    batch = rng.standard_normal((3, 4))
    for row, out in zip(batch, sen_forward(batch, sen)):
        np.testing.assert_allclose(out, relu(affine(sen.W2, sen.b2, relu(affine(sen.W1, sen.b1, row)))),
                                   rtol=0, atol=1e-12)


def test_sen_dimension_mismatch(rng):
    sen, _ = init_params(CFG, rng)
    with pytest.raises(ContractViolation):
        sen_forward(np.ones(3), sen)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32))
def test_sen_output_nonnegative(seed):
    r = make_rng(seed)
    sen, _ = init_params(CFG, r)
    sen.b2[:] = r.standard_normal(6)
    assert sen_forward(r.standard_normal((7, 4)) * 5, sen).min() >= 0


def test_shared_embed_zero_and_oracle(rng):
    zero = SharedParams(np.zeros((5, 6)), np.zeros(5))
    assert not shared_embed(np.ones(6), zero).any()
    _, shared = init_params(CFG, rng)
    shared.bs[:] = rng.standard_normal(5)
    x = rng.standard_normal(6)
    np.testing.assert_allclose(shared_embed(x, shared), relu(affine(shared.Ws, shared.bs, x)), rtol=0, atol=1e-12)
    with pytest.raises(ContractViolation):
        shared_embed(np.ones(5), shared)


def test_shared_embed_is_shared(rng):
    _, shared = init_params(CFG, rng)
    x_hat, x_vis = rng.random(6), rng.random(6)
    before = shared_embed(x_hat, shared), shared_embed(x_vis, shared)
    shared.Ws *= 2.0
    after = shared_embed(x_hat, shared), shared_embed(x_vis, shared)
    assert not np.array_equal(before[0], after[0]) and not np.array_equal(before[1], after[1])


def test_attention_examples(rng):
    S = np.tile(rng.random(4), (5, 1))
    np.testing.assert_allclose(attention_weights(rng.random(4), S), np.full(5, 0.2), atol=1e-15)
    assert attention_weights(rng.random(4), rng.random((1, 4))).tolist() == [1.0]
    alpha = attention_weights(np.array([1.0, 0.0]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    e = math.e
    np.testing.assert_allclose(alpha, [e / (e + 1), 1 / (e + 1)], rtol=0, atol=1e-12)
    assert alpha[0] == pytest.approx(0.7311, abs=1e-4)


def test_attention_degenerate_prototype_is_uniform():
    alpha = attention_weights(np.zeros(3), np.array([[1.0, 0, 0], [0, 1.0, 0]]))
    np.testing.assert_array_equal(alpha, [0.5, 0.5])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.floats(1e-3, 1e3))
def test_attention_simplex_and_sample_scale_invariance(seed, c):
    r = make_rng(seed)
    x_hat, S = r.random((3, 5)) + 0.01, r.random((3, 4, 5)) + 0.01
    alpha = attention_weights(x_hat, S)
    assert alpha.min() >= 0
    np.testing.assert_allclose(alpha.sum(axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(attention_weights(x_hat, c * S), alpha, rtol=0, atol=1e-9)


def brute_prototypes(batch, ds, sen, lam):
    out = []
    for c, idx in zip(batch.class_ids, batch.per_class_indices):
        xh = sen_forward(ds.attributes[c], sen)
        rows = [ds.features[i] for i in idx]
        xa = [sum(r[d] for r in rows) / len(rows) for d in range(ds.p)]
        sims = [float(np.dot(xh, r) / (np.linalg.norm(xh) * np.linalg.norm(r))) for r in rows]
        z = [math.exp(s) for s in sims]
        alpha = [v / sum(z) for v in z]
        xb = [sum(a * r[d] for a, r in zip(alpha, rows)) for d in range(ds.p)]
        xc = [lam * a + (1 - lam) * b for a, b in zip(xa, xb)]
        out.append((xh, xa, xb, xc, alpha))
    return out


def test_build_prototypes_vs_brute_force(small_ds, rng):
    cfg = replace(CFG, q=small_ds.q, p=small_ds.p, h=7)
    sen, _ = init_params(cfg, rng)
    sen.b2[:] = 0.1
    batch = sample_balanced_batch(small_ds, 3, rng)
    protos = build_prototypes(batch, small_ds, sen, 0.4)
    for i, (xh, xa, xb, xc, alpha) in enumerate(brute_prototypes(batch, small_ds, sen, 0.4)):
        np.testing.assert_allclose(protos.x_hat[i], xh, rtol=0, atol=1e-12)
        np.testing.assert_allclose(protos.x_a[i], xa, rtol=0, atol=1e-12)
        np.testing.assert_allclose(protos.x_b[i], xb, rtol=0, atol=1e-12)
        np.testing.assert_allclose(protos.x_c[i], xc, rtol=0, atol=1e-12)
        np.testing.assert_allclose(protos.alpha[i], alpha, rtol=0, atol=1e-12)


def test_fusion_endpoints_and_identical_samples(small_ds, rng):
    cfg = replace(CFG, q=small_ds.q, p=small_ds.p)
    sen, _ = init_params(cfg, rng)
    batch = sample_balanced_batch(small_ds, 4, rng)
    one = build_prototypes(batch, small_ds, sen, 1.0)
    zero = build_prototypes(batch, small_ds, sen, 0.0)
    np.testing.assert_array_equal(one.x_c, one.x_a)
    np.testing.assert_array_equal(zero.x_c, zero.x_b)
    same = BalancedBatch(batch.class_ids, np.repeat(batch.per_class_indices[:, :1], 4, axis=1))
    p = build_prototypes(same, small_ds, sen, 0.3)
    first = small_ds.features[same.per_class_indices[:, 0]]
    for arr in (p.x_a, p.x_b, p.x_c):
        np.testing.assert_allclose(arr, first, rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 1))
def test_fusion_lies_between_prototypes(seed, lam):
    from scilm.data import SyntheticSpec, make_synthetic_longtail

    r = make_rng(seed)
    ds = make_synthetic_longtail(SyntheticSpec(k_seen=3, t_unseen=0, p=4, q=3, head_count=6, tail_count=2,
                                               attr_link=0, test_per_class=0, seed=seed))
    sen, _ = init_params(ModelConfig(q=3, p=4, h=5), r)
    p = build_prototypes(sample_balanced_batch(ds, 3, r), ds, sen, lam)
    lo, hi = np.minimum(p.x_a, p.x_b), np.maximum(p.x_a, p.x_b)
    assert np.all(p.x_c >= lo - 1e-12) and np.all(p.x_c <= hi + 1e-12)


def test_prototypes_on_tape_match_plain(small_ds, rng):
    cfg = replace(CFG, q=small_ds.q, p=small_ds.p)
    sen, _ = init_params(cfg, rng)
    batch = sample_balanced_batch(small_ds, 3, rng)
    plain = build_prototypes(batch, small_ds, sen, 0.5)
    tape = nk.Tape()
    recorded = build_prototypes(batch, small_ds, SenParams(**{k: tape.param(v, k) for k, v in sen.as_dict().items()}),
                                0.5)
    np.testing.assert_array_equal(nk.value(recorded.x_c), plain.x_c)


def test_checkpoint_round_trip(tmp_path, rng):
    cfg = replace(CFG, lambda_p=0.3, gamma=0.5, variant="b")
    sen, shared = init_params(cfg, rng)
    path = tmp_path / "m.bin"
    save_checkpoint(path, cfg, sen, shared)
    raw = path.read_bytes()
    assert raw[:4] == b"SCLM" and int.from_bytes(raw[4:6], "little") == 1
    back = load_checkpoint(path)
    assert back.variant == "b" and back.config.gamma == 0.5 and back.config.lambda_p == 0.3
    for a, b in zip([*sen.as_dict().values(), *shared.as_dict().values()],
                    [*back.sen.as_dict().values(), *back.shared.as_dict().values()]):
        np.testing.assert_array_equal(a, b)
    size = 4 + 2 + 12 + 40 + 1 + 8 * (5 * 4 + 5 + 6 * 5 + 6 + 5 * 6 + 5)
    assert len(raw) == size
