import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from camadapt import diffcore as dc
from camadapt import perception as pc
from camadapt.diffcore import Graph, ShapeError, Tensor
from conftest import numeric_grad, rel_err


def naive_encode(params, x, channel, draws=None):
    """Loop convolution used as an independent reference."""
    h = np.asarray(x, dtype=np.float64)
    for layer in (1, 2):
        w = params[f"{channel}.conv{layer}.w"]
        b = params[f"{channel}.conv{layer}.b"]
        bsz, width, cin = h.shape
        cout = w.shape[1]
        kern = w.reshape(pc.KERNEL, cin, cout)
        length = pc.conv_length(width)
        z = np.zeros((bsz, length, cout))
        for i in range(length):
            for k in range(pc.KERNEL):
                src = i * pc.STRIDE + k - pc.PAD
                if 0 <= src < width:
                    z[:, i, :] += h[:, src, :] @ kern[k]
        z += b
        if draws is not None:
            eps, rho = draws[layer - 1]
            z = z * eps.reshape(-1) + rho.reshape(-1)
        h = np.tanh(z)
    return h.reshape(h.shape[0], -1) @ params[f"{channel}.fc.w"] + params[f"{channel}.fc.b"]


@pytest.fixture(scope="module")
def enc():
    return pc.init_encoders(0)


def test_output_lengths():
    assert pc.output_lengths(64) == (32, 16)
    assert pc.output_lengths(8) == (4, 2)
    assert pc.conv_length(9) == 5


def test_parameter_shapes(enc):
    assert enc["rgb.conv1.w"].shape == (15, 16)
    assert enc["depth.conv1.w"].shape == (5, 16)
    assert enc["rgb.conv2.w"].shape == (80, 32)
    assert enc["rgb.fc.w"].shape == (16 * 32, 64)
    at = pc.init_at()
    assert at["at.rgb.eps2"].shape == (32, 1) and len(at.names()) == 8


@pytest.mark.parametrize("channel", ["rgb", "depth"])
def test_encode_matches_loop_convolution(enc, channel):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 64, pc.IN_CHANNELS[channel]))
    out = pc.encode(enc, x, channel)
    np.testing.assert_allclose(out.data, naive_encode(enc, x, channel), atol=1e-12)
    assert out.shape == (3, 64)


def test_encode_with_at_matches_loop(enc):
    at = pc.init_at(0.3)
    x = np.random.default_rng(2).normal(size=(2, 64, 3))
    out = pc.encode(enc, x, "rgb", at=(at, np.random.default_rng(9)))
    draws = pc.sample_at(at, "rgb", np.random.default_rng(9))
    ref = naive_encode(enc, x, "rgb", [(e.data, r.data) for e, r in draws])
    np.testing.assert_allclose(out.data, ref, atol=1e-12)


def test_identity_at_is_bitwise_noop(enc):
    x = np.random.default_rng(3).normal(size=(4, 64, 1))
    plain = pc.encode(enc, x, "depth").data
    with_at = pc.encode(enc, x, "depth", at=(pc.init_at(1.0), np.random.default_rng(0)),
                        at_identity=True).data
    assert np.array_equal(plain, with_at)


def test_eps_mean_and_std():
    at = pc.init_at(-1.0)
    rng = np.random.default_rng(0)
    eps = np.concatenate([pc.sample_at(at, "rgb", rng)[0][0].data.ravel() for _ in range(100_000 // 16)])
    assert abs(eps.mean() - 1.0) < 0.01
    assert eps.std() == pytest.approx(np.log1p(np.exp(-1.0)), rel=0.02)


def test_modulate_example():
    z = Tensor(np.arange(6.0).reshape(2, 3))
    out = pc.modulate(z, np.array([[2.0], [0.5]]), np.array([[1.0], [-1.0]]))
    np.testing.assert_allclose(out.data, [[1, 3, 5], [0.5, 1, 1.5]])
    with pytest.raises(ShapeError):
        pc.modulate(z, np.ones((3, 1)), np.zeros((3, 1)))


def test_at_chain_rule_one_parameter():
    # z_hat = (1 + softplus(t) n) z; dz_hat/dt = sigmoid(t) n z
    t0, n, z = 0.37, 1.3, -0.8
    g = Graph()
    t = g.leaf(np.array(t0))
    eps = dc.softplus(t) * n + 1.0
    (dt,) = g.backward(eps * z, [t])
    assert dt.item() == pytest.approx(1 / (1 + np.exp(-t0)) * n * z, abs=1e-12)


def test_encoder_gradient_matches_finite_differences(enc):
    rng = np.random.default_rng(4)
    small = pc.init_encoder("depth", rng, width=8, dim=4)
    x = rng.normal(size=(2, 8, 1))
    target = rng.normal(size=(2, 4))
    for name in small.names():
        def f(v, name=name):
            p = dict(small.items())
            p[name] = v
            with dc.no_grad():
                return dc.tsum(dc.tanh(pc.encode(p, x, "depth")) * target).item()
        g = Graph()
        leaves = small.attach(g)
        (grad,) = g.backward(dc.tsum(dc.tanh(pc.encode(leaves, x, "depth")) * target), [leaves[name]])
        assert rel_err(grad.data, numeric_grad(f, small[name])) < 1e-6


def test_width_mismatch_is_reported(enc):
    with pytest.raises(ShapeError, match="width 32"):
        pc.encode(enc, np.zeros((1, 32, 3)), "rgb")
    with pytest.raises(ShapeError):
        pc.encode(enc, np.zeros((1, 64, 1)), "rgb")
    with pytest.raises(ValueError):
        pc.encode(enc, np.zeros((1, 64, 1)), "thermal")


def test_feature_loss_is_l1_sum():
    a, b = np.array([[1.0, -2.0]]), np.array([[0.5, 1.0]])
    assert pc.feature_loss(a, b).item() == 3.5
    with pytest.raises(ShapeError):
        pc.feature_loss(a, np.zeros(2))


def test_prepare_inputs():
    rgb, depth = pc.prepare_inputs(np.full((2, 8, 3), 0.5), np.full((2, 8), 5.0), 10.0)
    assert np.all(rgb == 0.0) and depth.shape == (2, 8, 1) and np.all(depth == 0.5)


def test_at_usage_counter(enc):
    before = pc.AT_USAGE.calls
    pc.encode(enc, np.zeros((1, 64, 3)), "rgb")
    assert pc.AT_USAGE.calls == before
    pc.encode(enc, np.zeros((1, 64, 3)), "rgb", at=(pc.init_at(), np.random.default_rng(0)))
    assert pc.AT_USAGE.calls == before + 1


def test_at_draws_differ_across_seeds(enc):
    x = np.random.default_rng(5).normal(size=(1, 64, 3))
    at = pc.init_at(-1.0)
    outs = [pc.encode(enc, x, "rgb", at=(at, np.random.default_rng(s))).data.tobytes() for s in range(100)]
    assert len(set(outs)) == 100


def test_sample_at_closed_forms():
    at = pc.init_at(0.0)

    class ZeroRng:
        def standard_normal(self, shape):
            return np.zeros(shape)

    (eps, rho), _ = pc.sample_at(at, "depth", ZeroRng())
    assert np.all(eps.data == 1.0) and np.all(rho.data == 0.0)
    g = Graph()
    t = g.leaf(np.array(0.0))
    assert dc.softplus(t).item() == pytest.approx(0.693147, abs=1e-6)


def test_modulate_channel_example():
    out = pc.modulate(np.array([[1.0], [-2.0]]), np.array([[2.0], [2.0]]), np.array([[0.5], [0.5]]))
    np.testing.assert_allclose(out.data, [[2.5], [-3.5]])
    z = np.random.default_rng(0).normal(size=(3, 4))
    assert np.array_equal(pc.modulate(z, np.ones((3, 1)), np.zeros((3, 1))).data, z)


def test_modulate_gradient_wrt_scale():
    rng = np.random.default_rng(1)
    z, e0, r0, w = rng.normal(size=(3, 4)), rng.normal(size=(3, 1)), rng.normal(size=(3, 1)), rng.normal(size=(3, 4))
    g = Graph()
    eps, rho = g.leaf(e0), g.leaf(r0)
    ge, gr = g.backward(dc.tsum(pc.modulate(z, eps, rho) * w), [eps, rho])
    np.testing.assert_allclose(ge.data[:, 0], np.sum(z * w, axis=1), atol=1e-14)
    f = lambda e: float(np.sum((z * e + r0) * w))
    assert rel_err(ge.data, numeric_grad(f, e0)) < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_feature_loss_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.normal(size=(2, 5)) for _ in range(3))
    d = lambda u, v: pc.feature_loss(u, v).item()
    assert d(a, a) == 0.0 and d(a, b) > 0.0
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-12


def test_feature_loss_example():
    assert pc.feature_loss(np.array([1.0, 2.0]), np.array([0.0, 4.0])).item() == 3.0


def test_both_encoders_match_finite_differences_tiny_width():
    rng = np.random.default_rng(6)
    small = pc.init_encoder("rgb", rng, 8, 4).merged(pc.init_encoder("depth", rng, 8, 4))
    ref = pc.init_encoder("rgb", rng, 8, 4).merged(pc.init_encoder("depth", rng, 8, 4))
    rgb, depth = rng.normal(size=(2, 8, 3)), rng.uniform(0, 1, (2, 8, 1))
    t_rgb, t_depth = pc.encode_pair(ref, rgb, depth)

    def loss(p):
        a, b = pc.encode_pair(p, rgb, depth)
        return pc.feature_loss(t_rgb, a) + pc.feature_loss(t_depth, b)

    g = Graph()
    leaves = small.attach(g)
    names = small.names()
    grads = dict(zip(names, g.backward(loss(leaves), [leaves[n] for n in names])))
    for name in names:
        def f(v, name=name):
            p = dict(small.items())
            p[name] = v
            with dc.no_grad():
                return loss(p).item()
        assert rel_err(grads[name].data, numeric_grad(f, small[name])) < 1e-5
