import math

import numpy as np
import pytest

from opflab.autodiff import (
    AdamState,
    BatchNorm,
    BatchNormState,
    CheckpointError,
    NonFiniteGradient,
    ShapeError,
    Tensor,
    adam_step,
    add,
    batchnorm,
    bce,
    cheb_layer,
    concat,
    conv2d,
    edge_mask,
    flatten,
    gat_layer,
    gcn_layer,
    graphconv_layer,
    leaky_relu,
    load_checkpoint,
    masked_softmax,
    matmul,
    maxpool1d,
    mean,
    mse,
    mul,
    relu,
    reshape,
    save_checkpoint,
    sigmoid,
    sub,
    take,
    transpose,
    tsum,
)
from opflab.grid import gcn_normalize, scaled_laplacian

INSTANCES = 20


def numeric_grad(fn, arrays, i, h=1e-6):
    base = [a.copy() for a in arrays]
    g = np.zeros_like(base[i])
    it = np.nditer(base[i], flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = base[i][idx]
        base[i][idx] = orig + h
        fp = fn(*[Tensor(a) for a in base]).data.sum()
        base[i][idx] = orig - h
        fm = fn(*[Tensor(a) for a in base]).data.sum()
        base[i][idx] = orig
        g[idx] = (fp - fm) / (2 * h)
    return g


def check_gradients(fn, arrays, tol=1e-4, wrt=None, seed=0):
    """Compare tape gradients of sum(fn(...) * R) with central differences."""
    rng = np.random.default_rng(seed)
    out_shape = fn(*[Tensor(a) for a in arrays]).shape
    r = rng.normal(size=out_shape)

    def scalar(*ts):
        return tsum(mul(fn(*ts), r))

    ts = [Tensor(a, requires_grad=True) for a in arrays]
    scalar(*ts).backward()
    worst = 0.0
    for i in wrt if wrt is not None else range(len(arrays)):
        num = numeric_grad(scalar, arrays, i)
        ana = ts[i].grad if ts[i].grad is not None else np.zeros_like(arrays[i])
        err = np.linalg.norm(ana - num) / max(np.linalg.norm(ana) + np.linalg.norm(num), 1e-12)
        worst = max(worst, err)
    assert worst <= tol, worst
    return worst


def random_graph(rng, n, p=0.4, weighted=True):
    a = np.triu(rng.random((n, n)) < p, 1).astype(float)
    if weighted:
        a *= rng.uniform(0.5, 2.0, size=a.shape)
    a = a + a.T
    # keep it connected with a path
    for i in range(n - 1):
        if a[i, i + 1] == 0:
            a[i, i + 1] = a[i + 1, i] = 1.0
    return a


def shapes(rng, lo=2, hi=6, k=2):
    return tuple(int(v) for v in rng.integers(lo, hi + 1, size=k))


# -- forward values ---------------------------------------------------------------------

def test_relu_values():
    np.testing.assert_array_equal(relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_identity_conv_kernel():
    x = np.random.default_rng(1).normal(size=(2, 1, 5, 7))
    w = np.zeros((1, 1, 3, 1))
    w[0, 0, 1, 0] = 1.0
    np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv_zero_padding_edges():
    x = np.arange(4.0).reshape(1, 1, 4, 1)
    w = np.ones((1, 1, 3, 1))
    np.testing.assert_array_equal(conv2d(Tensor(x), Tensor(w)).data.ravel(), [1, 3, 6, 5])


def test_maxpool_drops_remainder():
    x = np.array([[1.0, 3.0, 2.0, 0.0, 9.0]])
    out = maxpool1d(Tensor(x), 2, axis=1)
    np.testing.assert_array_equal(out.data, [[3.0, 2.0]])


def test_maxpool_ceil_keeps_tail():
    x = np.array([[1.0, 3.0, 2.0, 0.0, -9.0]])
    out = maxpool1d(Tensor(x), 2, axis=1, ceil=True)
    np.testing.assert_array_equal(out.data, [[3.0, 2.0, -9.0]])


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
    with pytest.raises(ShapeError, match=r"\(3, 2\).*\(4, 4\)"):
        gcn_layer(np.ones((3, 2)), np.eye(4), np.ones((2, 2)))
    with pytest.raises(ShapeError, match=r"\(3,\).*\(2,\)"):
        mse(np.ones(3), np.ones(2))


def test_gcn_edgeless_is_linear_map():
    rng = np.random.default_rng(2)
    x, w = rng.normal(size=(5, 3)), rng.normal(size=(3, 4))
    out = gcn_layer(x, gcn_normalize(np.zeros((5, 5))), w).data
    np.testing.assert_allclose(out, x @ w, rtol=0, atol=1e-14)


def test_gcn_two_node_hand_value():
    a_hat = gcn_normalize(np.array([[0.0, 1.0], [1.0, 0.0]]))
    out = gcn_layer(np.array([[1.0], [0.0]]), a_hat, np.array([[1.0]])).data
    np.testing.assert_allclose(out, [[0.5], [0.5]], atol=1e-15)


def test_cheb_k1_and_zero_laplacian():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(6, 2))
    ws = [rng.normal(size=(2, 3)) for _ in range(4)]
    np.testing.assert_allclose(cheb_layer(x, np.eye(6) * 0.3, ws[:1]).data, x @ ws[0], atol=1e-14)
    # T_k(0) = 1, 0, -1, 0
    out = cheb_layer(x, np.zeros((6, 6)), ws).data
    np.testing.assert_allclose(out, x @ ws[0] - x @ ws[2], atol=1e-14)


def test_cheb_matches_explicit_polynomials():
    rng = np.random.default_rng(4)
    for n in range(2, 9):
        for _ in range(3):
            lap = scaled_laplacian(random_graph(rng, n))
            x = rng.normal(size=(n, 3))
            ws = [rng.normal(size=(3, 2)) for _ in range(4)]
            # explicit T_k from the closed form cos(k arccos) on the eigenvalues
            lam, vec = np.linalg.eigh(lap)
            lam = np.clip(lam, -1.0, 1.0)
            expect = sum(
                vec @ np.diag(np.cos(k * np.arccos(lam))) @ vec.T @ x @ ws[k] for k in range(4)
            )
            got = cheb_layer(x, lap, ws).data
            assert np.linalg.norm(got - expect) / np.linalg.norm(expect) <= 1e-10


def test_graphconv_cases():
    rng = np.random.default_rng(5)
    x, wn, ws = rng.normal(size=(5, 3)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    np.testing.assert_allclose(graphconv_layer(x, np.zeros((5, 5)), wn, ws).data, x @ ws, atol=1e-14)
    a = random_graph(rng, 5)
    np.testing.assert_allclose(
        graphconv_layer(x, a, wn, np.zeros((3, 2))).data, gcn_layer(x, a, wn).data, atol=1e-13
    )
    x2 = rng.normal(size=(5, 3))
    lhs = graphconv_layer(2.0 * x - 3.0 * x2, a, wn, ws).data
    rhs = 2.0 * graphconv_layer(x, a, wn, ws).data - 3.0 * graphconv_layer(x2, a, wn, ws).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def path_edges(n):
    src = list(range(n - 1)) + list(range(1, n)) + list(range(n))
    dst = list(range(1, n)) + list(range(n - 1)) + list(range(n))
    return np.array([src, dst])


def test_gat_uniform_attention_on_equal_features():
    x = np.ones((4, 3))
    rng = np.random.default_rng(6)
    _, alpha = gat_layer(x, path_edges(4), rng.normal(size=(3, 2)), rng.normal(size=4), return_attention=True)
    deg = np.array([2, 3, 3, 2])
    mask = edge_mask(path_edges(4), 4)
    np.testing.assert_allclose(alpha.data, mask / deg[:, None], atol=1e-15)


def test_gat_rows_sum_to_one():
    rng = np.random.default_rng(7)
    for _ in range(INSTANCES):
        n = int(rng.integers(2, 9))
        mask = random_graph(rng, n) > 0
        np.fill_diagonal(mask, True)
        _, alpha = gat_layer(
            rng.normal(size=(n, 3)), mask, rng.normal(size=(3, 4)), rng.normal(size=8), return_attention=True
        )
        assert np.max(np.abs(alpha.data.sum(axis=1) - 1.0)) <= 1e-12
        assert np.all(alpha.data[~mask] == 0)


def test_gat_three_node_path_hand_value():
    # W = I (1 channel), a = (1, 2): score(i <- j) = leaky(x_i + 2 x_j)
    x = np.array([[1.0], [0.0], [-1.0]])
    w = np.array([[1.0]])
    att = np.array([1.0, 2.0])
    out = gat_layer(x, path_edges(3), w, att).data.ravel()

    def lrelu(v):
        return v if v > 0 else 0.2 * v

    expect = []
    nbrs = {0: [0, 1], 1: [0, 1, 2], 2: [1, 2]}
    for i in range(3):
        s = np.array([lrelu(x[i, 0] + 2 * x[j, 0]) for j in nbrs[i]])
        a = np.exp(s) / np.exp(s).sum()
        expect.append(sum(a[k] * x[j, 0] for k, j in enumerate(nbrs[i])))
    np.testing.assert_allclose(out, expect, atol=1e-15)
    # node 0: scores 3 and 1
    assert out[0] == pytest.approx(math.exp(3) / (math.exp(3) + math.exp(1)))


def test_gat_requires_self_loops():
    with pytest.raises(ValueError, match="self-loop"):
        gat_layer(np.ones((2, 1)), np.array([[0, 1], [1, 0]]), np.ones((1, 1)), np.ones(2))


@pytest.mark.parametrize("layer", ["gcn", "cheb", "graphconv", "gat"])
def test_graph_layers_permutation_equivariant(layer):
    rng = np.random.default_rng(8)
    for _ in range(INSTANCES):
        n = int(rng.integers(3, 9))
        a = random_graph(rng, n)
        x = rng.normal(size=(n, 3))
        perm = rng.permutation(n)
        p = np.eye(n)[perm]
        w1, w2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))

        def run(xx, aa):
            if layer == "gcn":
                return gcn_layer(xx, gcn_normalize(aa), w1).data
            if layer == "cheb":
                return cheb_layer(xx, scaled_laplacian(aa), [w1, w2, w1, w2]).data
            if layer == "graphconv":
                return graphconv_layer(xx, aa, w1, w2).data
            mask = aa > 0
            np.fill_diagonal(mask, True)
            return gat_layer(xx, mask, w1, rng_att).data

        rng_att = rng.normal(size=4)
        np.testing.assert_allclose(run(p @ x, p @ a @ p.T), p @ run(x, a), atol=1e-12)


def test_batched_graph_operator_matches_loop():
    rng = np.random.default_rng(9)
    xs = rng.normal(size=(4, 5, 3))
    lap = np.stack([scaled_laplacian(random_graph(rng, 5)) for _ in range(4)])
    ws = [rng.normal(size=(3, 2)) for _ in range(4)]
    batched = cheb_layer(xs, lap, ws).data
    for b in range(4):
        np.testing.assert_allclose(batched[b], cheb_layer(xs[b], lap[b], ws).data, atol=1e-13)


def test_batchnorm_eval_is_fixed_affine_map():
    rng = np.random.default_rng(10)
    bn = BatchNorm("bn", 3)
    for _ in range(5):
        bn(Tensor(rng.normal(2.0, 3.0, size=(8, 3))), training=True)
    x = Tensor(rng.normal(size=(6, 3)))
    a, b = bn(x, training=False).data, bn(x, training=False).data
    assert np.array_equal(a, b)
    before = bn.state.running_mean.copy()
    bn(x, training=False)
    assert np.array_equal(before, bn.state.running_mean)


def test_batchnorm_running_statistics():
    x = np.array([[0.0], [2.0]])
    st = BatchNormState(1)
    out = batchnorm(Tensor(x), Tensor([1.0]), Tensor([0.0]), st, training=True).data
    np.testing.assert_allclose(out.ravel(), [-1, 1], atol=1e-5)
    assert st.running_mean[0] == pytest.approx(0.1)
    # unbiased variance 2 folded in with momentum 0.1
    assert st.running_var[0] == pytest.approx(0.9 + 0.1 * 2.0)


# -- gradient checks -----------------------------------------------------------------------

def gradient_cases():
    rng = np.random.default_rng(11)

    def case_add():
        m, n = shapes(rng)
        return (lambda a, b: add(a, b)), [rng.normal(size=(m, n)), rng.normal(size=(n,))]

    def case_sub():
        m, n = shapes(rng)
        return (lambda a, b: sub(a, b)), [rng.normal(size=(m, 1)), rng.normal(size=(m, n))]

    def case_mul():
        m, n = shapes(rng)
        return (lambda a, b: mul(a, b)), [rng.normal(size=(m, n)), rng.normal(size=(1, n))]

    def case_matmul():
        b, m, k = shapes(rng, k=3)
        return (lambda x, y: matmul(x, y)), [rng.normal(size=(b, m, k)), rng.normal(size=(k, 3))]

    def case_relu():
        return relu, [rng.normal(size=shapes(rng, 5, 7))]

    def case_leaky():
        return (lambda a: leaky_relu(a, 0.2)), [rng.normal(size=shapes(rng, 5, 7))]

    def case_sigmoid():
        return sigmoid, [rng.normal(scale=3.0, size=shapes(rng, 5, 7))]

    def case_sum():
        ax = int(rng.integers(0, 2))
        return (lambda a: tsum(a, axis=ax)), [rng.normal(size=shapes(rng))]

    def case_mean():
        return (lambda a: mean(a, axis=1, keepdims=True)), [rng.normal(size=shapes(rng))]

    def case_reshape():
        m, n = shapes(rng)
        return (lambda a: reshape(a, (n, m))), [rng.normal(size=(m, n))]

    def case_transpose():
        return (lambda a: transpose(a, (2, 0, 1))), [rng.normal(size=shapes(rng, k=3))]

    def case_flatten():
        return flatten, [rng.normal(size=shapes(rng, k=3))]

    def case_concat():
        m, n, k = shapes(rng, k=3)
        return (lambda a, b: concat([a, b], axis=1)), [rng.normal(size=(m, n)), rng.normal(size=(m, k))]

    def case_take():
        m, n = shapes(rng)
        idx = rng.integers(0, n, size=4)
        return (lambda a: take(a, idx, axis=1)), [rng.normal(size=(m, n))]

    def case_conv():
        b, c, o = shapes(rng, 1, 3, k=3)
        h, w = shapes(rng, 5, 7)
        return (lambda x, k, bb: conv2d(x, k, bb)), [
            rng.normal(size=(b, c, h, w)), rng.normal(size=(o, c, 3, 1)), rng.normal(size=o)]

    def case_pool():
        return (lambda a: maxpool1d(a, 2, axis=1)), [rng.normal(size=shapes(rng, 5, 7))]

    def case_pool_ceil():
        # odd lengths leave a one-element tail window
        m = int(rng.integers(2, 4))
        n = 2 * int(rng.integers(2, 4)) + 1
        return (lambda a: maxpool1d(a, 2, axis=2, ceil=True)), [rng.normal(size=(m, 2, n, 3))]

    def case_bn_train():
        m, c = shapes(rng, 3, 7)
        st = BatchNormState(c)
        return (lambda x, g, b: batchnorm(x, g, b, st, True)), [
            rng.normal(size=(m, c)), rng.normal(size=c), rng.normal(size=c)]

    def case_bn_eval():
        c = int(rng.integers(2, 5))
        st = BatchNormState(c)
        st.running_mean, st.running_var = rng.normal(size=c), rng.uniform(0.5, 2, size=c)
        return (lambda x, g, b: batchnorm(x, g, b, st, False, axis=1)), [
            rng.normal(size=(3, c, 4)), rng.normal(size=c), rng.normal(size=c)]

    def case_softmax():
        m, n = shapes(rng, 3, 6)
        mask = rng.random((m, n)) < 0.6
        mask[:, 0] = True
        return (lambda s: masked_softmax(s, mask)), [rng.normal(size=(m, n))]

    def case_gcn():
        n = int(rng.integers(3, 8))
        a_hat = gcn_normalize(random_graph(rng, n))
        return (lambda x, w: gcn_layer(x, a_hat, w)), [rng.normal(size=(n, 3)), rng.normal(size=(3, 2))]

    def case_cheb():
        n = int(rng.integers(3, 8))
        lap = scaled_laplacian(random_graph(rng, n))
        return (lambda x, *ws: cheb_layer(x, lap, ws)), [rng.normal(size=(n, 2))] + [
            rng.normal(size=(2, 3)) for _ in range(4)]

    def case_graphconv():
        n = int(rng.integers(3, 8))
        a = random_graph(rng, n)
        return (lambda x, w1, w2: graphconv_layer(x, a, w1, w2)), [
            rng.normal(size=(n, 3)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))]

    def case_gat():
        n = int(rng.integers(3, 8))
        mask = random_graph(rng, n) > 0
        np.fill_diagonal(mask, True)
        mask = np.stack([mask, mask.T])
        return (lambda x, w, a: gat_layer(x, mask, w, a)), [
            rng.normal(size=(2, n, 3)), rng.normal(size=(3, 2)), rng.normal(size=4)]

    makers = {k[5:]: v for k, v in locals().items() if k.startswith("case_")}
    return makers


CASES = gradient_cases()


@pytest.mark.parametrize("op", sorted(CASES))
def test_op_gradients(op):
    for i in range(INSTANCES):
        fn, arrays = CASES[op]()
        check_gradients(fn, arrays, tol=1e-4, seed=i)


def test_loss_gradients():
    rng = np.random.default_rng(12)
    for i in range(INSTANCES):
        shape = shapes(rng, 1, 6)
        y = rng.normal(size=shape)
        check_gradients(lambda p: mse(y, p), [rng.normal(size=shape)], tol=1e-6, seed=i)
        c = (rng.random(shape) < 0.5).astype(float)
        check_gradients(lambda p: bce(c, p), [rng.uniform(0.05, 0.95, size=shape)], tol=1e-6, seed=i)


def test_loss_values():
    y = np.array([1.0, -2.0])
    assert mse(y, y).data == 0.0
    assert bce(np.array([1.0]), np.array([0.5])).data == pytest.approx(math.log(2), abs=1e-12)
    # clamping keeps the loss finite at saturated predictions
    assert np.isfinite(bce(np.array([1.0, 0.0]), np.array([0.0, 1.0])).data)


def test_backward_through_shared_node():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = mul(x, x)
    z = tsum(add(y, y))
    z.backward()
    np.testing.assert_allclose(x.grad, [8.0])


# -- optimizer ----------------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_parameters():
    p = {"w": np.array([1.0, -2.0])}
    st = AdamState()
    adam_step(p, {"w": np.zeros(2)}, st)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert st.t == 1


def test_adam_first_step_closed_form():
    # m1 = (1-b1) g, v1 = (1-b2) g^2, bias-corrected ratio g / (|g| + eps)
    g = np.array([0.3, -2.0, 1e-3])
    p = {"w": np.zeros(3)}
    adam_step(p, {"w": g}, AdamState())
    np.testing.assert_allclose(p["w"], -1e-4 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adam_deterministic_and_rejects_nonfinite():
    def run():
        rng = np.random.default_rng(0)
        p = {"a": rng.normal(size=3)}
        st = AdamState()
        for _ in range(10):
            adam_step(p, {"a": np.sin(p["a"])}, st)
        return p["a"]

    assert np.array_equal(run(), run())
    p = {"layer1.weight": np.ones(2), "layer2.bias": np.ones(1)}
    with pytest.raises(NonFiniteGradient, match="layer2.bias"):
        adam_step(p, {"layer1.weight": np.ones(2), "layer2.bias": np.array([np.nan])}, AdamState())
    np.testing.assert_array_equal(p["layer1.weight"], [1.0, 1.0])


# -- checkpoints ---------------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    blocks = {"conv1.weight": rng.normal(size=(3, 2)), "conv1.bias": rng.normal(size=3), "s": np.array(1.5)}
    bin_path, man_path = save_checkpoint(tmp_path / "model", blocks, {"family": "GCN"})
    assert bin_path.stat().st_size == 8 * 10
    # little-endian float64 payload in manifest order
    raw = np.frombuffer(bin_path.read_bytes(), dtype="<f8")
    np.testing.assert_array_equal(raw[:6], blocks["conv1.weight"].ravel())
    got, meta = load_checkpoint(tmp_path / "model")
    assert meta == {"family": "GCN"}
    for k, v in blocks.items():
        assert np.array_equal(got[k], v) and got[k].shape == v.shape


def test_checkpoint_detects_corruption(tmp_path):
    save_checkpoint(tmp_path / "m", {"w": np.ones(4)})
    path = tmp_path / "m.bin"
    data = bytearray(path.read_bytes())
    data[3] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path / "m")
