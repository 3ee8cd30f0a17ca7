import numpy as np
import pytest

from greenhouse_xai import autodiff as ad
from conftest import fd_gradient, rel_err


def test_softmax_symmetry():
    out = ad.softmax(ad.Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 5))
    out = ad.matmul(ad.Tensor(np.eye(3)), ad.Tensor(a))
    assert np.array_equal(out.data, np.eye(3) @ a)
    assert np.allclose(out.data, a)


def test_sigmoid_at_zero():
    assert float(ad.sigmoid(ad.Tensor([0.0])).data[0]) == 0.5


def test_backward_elementwise_square():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    loss = (x * x).sum()
    loss.backward()
    assert np.allclose(x.grad, [2.0, 4.0])


def test_backward_sigmoid_at_zero():
    w = ad.Tensor([0.0], requires_grad=True)
    loss = ad.sigmoid(w).sum()
    loss.backward()
    assert np.allclose(w.grad, [0.25])


def test_backward_rejects_nonscalar():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * x).backward()


def test_shape_mismatch_names_shapes():
    a = ad.Tensor(np.zeros((2, 3)))
    b = ad.Tensor(np.zeros((4, 5)))
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\)"):
        ad.matmul(a, b)
    with pytest.raises(ad.ShapeError, match=r"\(4, 5\)"):
        ad.add(a, b)


def _fd_check_unary(op, x, eps=1e-5, tol=1e-6, weight_seed=7):
    """Every primitive's backward must match central differences on a
    random weighted sum of its outputs."""
    w = np.random.default_rng(weight_seed).normal(size=op(ad.Tensor(x)).shape)

    def scalar(arr):
        return float((op(ad.Tensor(arr)).data * w).sum())

    t = ad.Tensor(x, requires_grad=True)
    (op(t) * ad.Tensor(w)).sum().backward()
    numeric = fd_gradient(lambda a: scalar(a), x.copy(), eps)
    assert rel_err(t.grad, numeric) <= tol


PRIMITIVES = {
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "elu": ad.elu,
    "softmax": ad.softmax,
    "log": lambda t: ad.log(ad.add(ad.mul(t, t), ad.Tensor(0.5))),
    "mean_axis": lambda t: ad.tmean(t, axis=1),
    "sum_axis": lambda t: ad.tsum(t, axis=0),
    "slice": lambda t: t[1:, :2],
    "reshape": lambda t: t.reshape(-1),
    "swapaxes": lambda t: ad.swapaxes(t, 0, 1),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_fd(name):
    # >= 100 random points across the parametrized primitives combined;
    # each primitive gets 12 independent trials.
    op = PRIMITIVES[name]
    for trial in range(12):
        rng = np.random.default_rng(1000 * trial + hash(name) % 1000)
        x = rng.normal(size=(3, 4))
        if name == "elu":
            x = x + np.sign(x) * 0.1  # keep away from the kink
        _fd_check_unary(op, x, weight_seed=trial)


@pytest.mark.parametrize("trial", range(12))
def test_binary_primitive_gradients_match_fd(trial):
    rng = np.random.default_rng(trial)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3,))       # broadcast add/mul
    m = rng.normal(size=(3, 5))
    w = rng.normal(size=(4, 5))

    def scalar(arrs):
        aa, bb, mm = arrs
        t = (ad.Tensor(aa) + ad.Tensor(bb)) * ad.Tensor(2.0)
        out = ad.matmul(t, ad.Tensor(mm))
        return float((out.data * w).sum())

    ta = ad.Tensor(a, requires_grad=True)
    tb = ad.Tensor(b, requires_grad=True)
    tm = ad.Tensor(m, requires_grad=True)
    out = ad.matmul((ta + tb) * ad.Tensor(2.0), tm)
    (out * ad.Tensor(w)).sum().backward()

    for t, arr, i in ((ta, a, 0), (tb, b, 1), (tm, m, 2)):
        def f(x, i=i):
            arrs = [a.copy(), b.copy(), m.copy()]
            arrs[i] = x
            return scalar(arrs)
        assert rel_err(t.grad, fd_gradient(f, arr.copy())) <= 1e-6


@pytest.mark.parametrize("trial", range(6))
def test_batched_matmul_gradients_match_fd(trial):
    rng = np.random.default_rng(trial + 50)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))
    w = rng.normal(size=(2, 3, 5))
    ta = ad.Tensor(a, requires_grad=True)
    tb = ad.Tensor(b, requires_grad=True)
    (ad.matmul(ta, tb) * ad.Tensor(w)).sum().backward()
    fa = fd_gradient(lambda x: float(((x @ b) * w).sum()), a.copy())
    fb = fd_gradient(lambda x: float(((a @ x) * w).sum()), b.copy())
    assert rel_err(ta.grad, fa) <= 1e-6
    assert rel_err(tb.grad, fb) <= 1e-6


@pytest.mark.parametrize("trial", range(6))
def test_concat_gather_layernorm_gradients(trial):
    rng = np.random.default_rng(trial + 99)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 2))
    gain = rng.normal(size=(6,)) + 2.0
    bias = rng.normal(size=(6,))
    idx = rng.integers(0, 6, size=3)
    w = rng.normal(size=(3,))

    def fwd(arrs):
        aa, bb, gg, ss = arrs
        cat = ad.concat([ad.Tensor(aa) if not isinstance(aa, ad.Tensor) else aa,
                         ad.Tensor(bb) if not isinstance(bb, ad.Tensor) else bb], axis=1)
        ln = ad.layer_norm(cat,
                           gg if isinstance(gg, ad.Tensor) else ad.Tensor(gg),
                           ss if isinstance(ss, ad.Tensor) else ad.Tensor(ss))
        return (ad.gather_last(ln, idx) * ad.Tensor(w)).sum()

    tensors = [ad.Tensor(x, requires_grad=True) for x in (a, b, gain, bias)]
    fwd(tensors).backward()
    arrays = [a, b, gain, bias]
    for i, (t, arr) in enumerate(zip(tensors, arrays)):
        def f(x, i=i):
            arrs = [v.copy() for v in arrays]
            arrs[i] = x
            return float(fwd(arrs).data)
        assert rel_err(t.grad, fd_gradient(f, arr.copy())) <= 1e-6


def test_softmax_rows_normalized_property():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        x = rng.uniform(-50, 50, size=(5, 7))
        y = ad.softmax(ad.Tensor(x)).data
        assert (y >= 0).all()
        assert np.abs(y.sum(axis=-1) - 1.0).max() <= 1e-9


def test_dropout_eval_is_exact_identity():
    x = ad.Tensor(np.random.default_rng(3).normal(size=(4, 4)))
    out = ad.dropout(x, 0.5, train_flag=False)
    assert out is x
    out2 = ad.dropout(x, 0.0, train_flag=True)
    assert out2 is x


def test_dropout_train_scales_and_replays():
    x = ad.Tensor(np.ones((100, 100)), requires_grad=True)
    a = ad.dropout(x, 0.25, True, np.random.default_rng(9))
    b = ad.dropout(x, 0.25, True, np.random.default_rng(9))
    assert np.array_equal(a.data, b.data)  # bitwise replay
    kept = a.data[a.data != 0]
    assert np.allclose(kept, 1.0 / 0.75)


def test_dropout_needs_rng_in_train():
    with pytest.raises(ValueError, match="rng"):
        ad.dropout(ad.Tensor([1.0]), 0.5, True)


def test_graph_replay_bitwise_identical():
    def run():
        rng = np.random.default_rng(77)
        x = ad.Tensor(np.linspace(-1, 1, 12).reshape(3, 4), requires_grad=True)
        h = ad.dropout(ad.tanh(x), 0.3, True, rng)
        loss = (h * h).sum()
        loss.backward()
        return loss.data.copy(), x.grad.copy()
    l1, g1 = run()
    l2, g2 = run()
    assert np.array_equal(l1, l2)
    assert np.array_equal(g1, g2)


def test_grad_check_quadratic_exact():
    w = ad.Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)

    def f(params):
        p = params[0]
        return (p * p).sum()

    assert ad.grad_check(f, [w]) < 1e-8


def test_grad_check_constant_function():
    w = ad.Tensor(np.array([3.0, 4.0]), requires_grad=True)

    def f(params):
        return ad.Tensor(np.zeros(())) + ad.Tensor(1.5)

    assert ad.grad_check(f, [w]) == 0.0
    w2 = ad.Tensor(np.array([3.0]), requires_grad=True)
    loss = (w2 * ad.Tensor(0.0)).sum() + ad.Tensor(1.0)
    loss.backward()
    assert np.allclose(w2.grad, 0.0)


def test_grad_check_rejects_bad_eps():
    w = ad.Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError, match="eps"):
        ad.grad_check(lambda ps: (ps[0] * ps[0]).sum(), [w], eps=0.5)


def test_grad_check_reports_nonfinite():
    w = ad.Tensor([0.0], requires_grad=True)

    def f(params):
        return ad.log(params[0]).sum()  # log(+-eps) -> nan on the minus side

    with np.errstate(divide="ignore", invalid="ignore"):
        with pytest.raises(ad.GradCheckError, match="parameter 0"):
            ad.grad_check(f, [w])


def test_detach_shares_data_without_graph():
    x = ad.Tensor(np.arange(4.0), requires_grad=True)
    d = x.detach()
    assert d.data is x.data
    assert not d.requires_grad
    out = (d * d).sum()
    assert out._vjp is None
