import numpy as np
import pytest

from greenhouse_xai import autodiff as ad
from greenhouse_xai.autodiff import Tensor
from greenhouse_xai.tft import (
    ForwardOutput, ModelConfig, ModelError, TftModel,
)


def tiny_config(**kw):
    base = dict(n_features=3, window=4, n_classes=3, d_model=8, n_heads=2,
                dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    return ad.tmean(ad.neg(ad.log(ad.gather_last(probs, labels))))


def numpy_layer_norm(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


GRN_WEIGHT_KEYS = ("w1", "b1", "w2", "b2", "wg", "bg", "wv", "bv")


def test_config_validation():
    with pytest.raises(ModelError, match="divisible"):
        ModelConfig(3, 4, 3, d_model=10, n_heads=4).validate()
    with pytest.raises(ModelError, match="dropout"):
        ModelConfig(3, 4, 3, dropout=1.0).validate()
    with pytest.raises(ModelError, match="classes"):
        ModelConfig(3, 4, 1).validate()


# -- gated residual network ---------------------------------------------------


def test_grn_zero_weights_is_layernorm_of_residual():
    model = TftModel(tiny_config(), seed=0)
    for key in GRN_WEIGHT_KEYS:
        model.params[f"vsn.feat0.{key}"].data[...] = 0.0
    x = np.random.default_rng(1).normal(size=(5, 8))
    out = model._grn(model.params, "vsn.feat0", Tensor(x), False, None)
    assert np.allclose(out.data, numpy_layer_norm(x), atol=1e-12)


def test_grn_output_width_is_d_model():
    model = TftModel(tiny_config(), seed=0)
    wide = Tensor(np.random.default_rng(2).normal(size=(7, 24)))
    out = model._grn(model.params, "vsn.sel", wide, False, None)
    assert out.shape == (7, 3)          # selection GRN projects to F logits
    narrow = Tensor(np.random.default_rng(3).normal(size=(7, 8)))
    out2 = model._grn(model.params, "vsn.feat1", narrow, False, None)
    assert out2.shape == (7, 8)


def test_grn_gradient_check():
    model = TftModel(tiny_config(), seed=4)
    x = np.random.default_rng(5).normal(size=(3, 8))
    w = np.random.default_rng(6).normal(size=(3, 8))
    names = [f"vsn.feat2.{k}" for k in GRN_WEIGHT_KEYS] + \
            ["vsn.feat2.ln_g", "vsn.feat2.ln_b"]
    params = [model.params[n] for n in names]

    def f(ps):
        out = model._grn(model.params, "vsn.feat2", Tensor(x), False, None)
        return (out * Tensor(w)).sum()

    assert ad.grad_check(f, params) < 1e-4


# -- variable selection --------------------------------------------------------


def test_vsn_single_feature_weight_is_one():
    model = TftModel(tiny_config(n_features=1), seed=0)
    frames = Tensor(np.random.default_rng(0).normal(size=(6, 1)))
    _, weights = model._vsn(model.params, frames, False, None)
    assert np.all(weights.data == 1.0)


def test_vsn_symmetric_init_uniform_weights():
    f, d = 4, 8
    model = TftModel(tiny_config(n_features=f), seed=7)
    p = model.params
    for i in range(1, f):
        p[f"embed{i}.w"].data[...] = p["embed0.w"].data
        p[f"embed{i}.b"].data[...] = p["embed0.b"].data
        for k in GRN_WEIGHT_KEYS + ("ln_g", "ln_b"):
            p[f"vsn.feat{i}.{k}"].data[...] = p[f"vsn.feat0.{k}"].data
    # tile the selection GRN so every logit sees the same computation
    rng = np.random.default_rng(8)
    p["vsn.sel.w1"].data[...] = np.tile(rng.normal(size=(1, d, d)), (f, 1, 1)
                                        ).reshape(f * d, d)
    p["vsn.sel.w2"].data[...] = np.tile(rng.normal(size=(d, 1)), (1, f))
    p["vsn.sel.wg"].data[...] = 0.3
    p["vsn.sel.wv"].data[...] = -0.7
    p["vsn.sel.ws"].data[...] = np.tile(rng.normal(size=(d, 1)), (f, f))
    for b in ("b1", "b2", "bg", "bv", "bs", "ln_b"):
        p[f"vsn.sel.{b}"].data[...] = 0.0
    frames = Tensor(np.full((5, f), 1.37))
    _, weights = model._vsn(model.params, frames, False, None)
    assert np.allclose(weights.data, 1.0 / f, atol=1e-12)


def test_vsn_weights_sum_to_one_property():
    model = TftModel(tiny_config(n_features=5, window=20), seed=9)
    x = np.random.default_rng(10).normal(size=(50, 20, 5))
    out = model.forward(x)
    sums = out.vsn_weights.data.sum(axis=-1)
    assert sums.size == 1000
    assert np.abs(sums - 1.0).max() <= 1e-9


# -- lstm ------------------------------------------------------------------------


def test_lstm_zero_weights_zero_states():
    model = TftModel(tiny_config(), seed=0)
    for k in ("lstm.wx", "lstm.wh", "lstm.b"):
        model.params[k].data[...] = 0.0
    x = Tensor(np.random.default_rng(1).normal(size=(2, 4, 8)))
    states = model._lstm(model.params, x, False)
    assert np.all(states.data == 0.0)


def test_lstm_output_shape():
    for w in (1, 3, 7):
        model = TftModel(tiny_config(window=w), seed=0)
        x = Tensor(np.zeros((2, w, 8)))
        assert model._lstm(model.params, x, False).shape == (2, w, 8)


def test_lstm_gradient_check_three_steps():
    model = TftModel(tiny_config(window=3, d_model=4, n_heads=2), seed=11)
    x = np.random.default_rng(12).normal(size=(2, 3, 4))
    w = np.random.default_rng(13).normal(size=(2, 3, 4))
    params = [model.params[k] for k in ("lstm.wx", "lstm.wh", "lstm.b")]

    def f(ps):
        out = model._lstm(model.params, Tensor(x), False)
        return (out * Tensor(w)).sum()

    assert ad.grad_check(f, params) < 1e-4


# -- attention -------------------------------------------------------------------


def test_mha_zero_qk_uniform_attention():
    model = TftModel(tiny_config(n_heads=1, window=5), seed=0)
    model.params["mha.wq0"].data[...] = 0.0
    model.params["mha.wk0"].data[...] = 0.0
    states = Tensor(np.random.default_rng(2).normal(size=(3, 5, 8)))
    _, attn = model._mha(model.params, states, False)
    assert np.allclose(attn.data, 1.0 / 5, atol=1e-15)


def test_mha_identical_heads_equal_single_head():
    model = TftModel(tiny_config(n_heads=2), seed=3)
    p = model.params
    p["mha.wq1"].data[...] = p["mha.wq0"].data
    p["mha.wk1"].data[...] = p["mha.wk0"].data
    states_np = np.random.default_rng(4).normal(size=(2, 4, 8))
    out, attn = model._mha(p, Tensor(states_np), False)
    assert np.array_equal(attn.data[:, 0], attn.data[:, 1])
    # average of identical heads == one head, recomputed independently
    q = states_np @ p["mha.wq0"].data
    k = states_np @ p["mha.wk0"].data
    scores = q @ k.swapaxes(-1, -2) / np.sqrt(4)
    e = np.exp(scores - scores.max(-1, keepdims=True))
    a = e / e.sum(-1, keepdims=True)
    v = states_np @ p["mha.wv"].data
    single = (a @ v) @ p["mha.wo"].data + states_np
    expect = numpy_layer_norm(single) * p["mha.ln_g"].data + p["mha.ln_b"].data
    assert np.allclose(out.data, expect, atol=1e-9)


def test_attention_rows_sum_to_one():
    model = TftModel(tiny_config(), seed=5)
    x = np.random.default_rng(6).normal(size=(8, 4, 3))
    out = model.forward(x)
    sums = out.attn_weights.data.sum(axis=-1)
    assert np.abs(sums - 1.0).max() <= 1e-9


# -- full model -------------------------------------------------------------------


def test_forward_probs_on_simplex_property():
    model = TftModel(tiny_config(), seed=14)
    x = np.random.default_rng(15).normal(size=(1000, 4, 3))
    probs = model.predict_proba(x)
    assert probs.shape == (1000, 3)
    assert (probs >= 0).all()
    assert np.abs(probs.sum(axis=1) - 1.0).max() <= 1e-9


def test_forward_rejects_bad_shape():
    model = TftModel(tiny_config(), seed=0)
    with pytest.raises(ModelError, match="window"):
        model.forward(np.zeros((2, 5, 3)))


def test_forward_names_nonfinite_layer():
    model = TftModel(tiny_config(), seed=0)
    model.params["embed0.w"].data[0] = np.inf
    with np.errstate(invalid="ignore"):
        with pytest.raises(ModelError, match="variable selection"):
            model.forward(np.ones((1, 4, 3)))


def test_eval_forward_deterministic_bitwise():
    model = TftModel(tiny_config(dropout=0.3), seed=16)
    x = np.random.default_rng(17).normal(size=(4, 4, 3))
    a = model.forward(x).probs.data
    b = model.forward(x).probs.data
    assert np.array_equal(a, b)


def test_dropout_is_only_train_eval_divergence():
    model = TftModel(tiny_config(dropout=0.0), seed=18)
    x = np.random.default_rng(19).normal(size=(4, 4, 3))
    train_out = model.forward(x, train_flag=True,
                              rng=np.random.default_rng(0))
    eval_out = model.forward(x, train_flag=False)
    assert np.array_equal(train_out.probs.data, eval_out.probs.data)


def test_feature_permutation_symmetry():
    cfg = tiny_config()
    model = TftModel(cfg, seed=20)
    perm = [2, 0, 1]
    permuted = TftModel(cfg, seed=20)
    p, q = model.params, permuted.params
    f, d = cfg.n_features, cfg.d_model
    for new, old in enumerate(perm):
        q[f"embed{new}.w"].data[...] = p[f"embed{old}.w"].data
        q[f"embed{new}.b"].data[...] = p[f"embed{old}.b"].data
        for k in GRN_WEIGHT_KEYS + ("ln_g", "ln_b"):
            q[f"vsn.feat{new}.{k}"].data[...] = p[f"vsn.feat{old}.{k}"].data
    # selection GRN: permute input row-blocks and output columns
    q["vsn.sel.w1"].data[...] = p["vsn.sel.w1"].data.reshape(f, d, -1)[perm
                                                                       ].reshape(f * d, -1)
    q["vsn.sel.w2"].data[...] = p["vsn.sel.w2"].data[:, perm]
    q["vsn.sel.b2"].data[...] = p["vsn.sel.b2"].data[perm]
    q["vsn.sel.wg"].data[...] = p["vsn.sel.wg"].data[np.ix_(perm, perm)]
    q["vsn.sel.bg"].data[...] = p["vsn.sel.bg"].data[perm]
    q["vsn.sel.wv"].data[...] = p["vsn.sel.wv"].data[np.ix_(perm, perm)]
    q["vsn.sel.bv"].data[...] = p["vsn.sel.bv"].data[perm]
    q["vsn.sel.ws"].data[...] = p["vsn.sel.ws"].data.reshape(f, d, -1)[perm
                                                                       ].reshape(f * d, -1)[:, perm]
    q["vsn.sel.bs"].data[...] = p["vsn.sel.bs"].data[perm]
    q["vsn.sel.ln_g"].data[...] = p["vsn.sel.ln_g"].data[perm]
    q["vsn.sel.ln_b"].data[...] = p["vsn.sel.ln_b"].data[perm]

    x = np.random.default_rng(21).normal(size=(6, 4, 3))
    base = model.forward(x).probs.data
    swapped = permuted.forward(x[:, :, perm]).probs.data
    assert np.abs(base - swapped).max() <= 1e-9


def test_gradient_flows_to_every_parameter():
    model = TftModel(tiny_config(), seed=22)
    rng = np.random.default_rng(23)
    x = rng.normal(size=(6, 4, 3))
    y = rng.integers(0, 3, size=6)
    for t in model.params.values():
        t.grad = None
    out = model.forward(x, train_flag=True, rng=rng, record_graph=True)
    cross_entropy(out.probs, y).backward()
    for name, t in model.params.items():
        assert t.grad is not None, f"no gradient reached {name}"
        assert np.linalg.norm(t.grad) > 0, f"zero gradient at {name}"


def test_full_model_gradient_check_tiny_config():
    model = TftModel(tiny_config(), seed=24)
    rng = np.random.default_rng(25)
    x = rng.normal(size=(2, 4, 3))
    y = np.array([0, 2])

    def f(ps):
        out = model.forward(x, train_flag=False, record_graph=True)
        return cross_entropy(out.probs, y)

    err = ad.grad_check(f, model.param_list(), eps=1e-5)
    assert err < 1e-4


# -- persistence ---------------------------------------------------------------


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = TftModel(tiny_config(dropout=0.1), seed=26)
    path = tmp_path / "ckpt.json"
    model.save(path)
    clone = TftModel.load(path)
    assert clone.config == model.config
    for name, t in model.params.items():
        assert np.array_equal(clone.params[name].data, t.data)
    x = np.random.default_rng(27).normal(size=(3, 4, 3))
    assert np.array_equal(model.predict_proba(x), clone.predict_proba(x))


def test_checkpoint_version_guard(tmp_path):
    model = TftModel(tiny_config(), seed=0)
    path = tmp_path / "ckpt.json"
    model.save(path)
    import json
    blob = json.loads(path.read_text())
    blob["format_version"] = 99
    path.write_text(json.dumps(blob))
    with pytest.raises(ModelError, match="version"):
        TftModel.load(path)
