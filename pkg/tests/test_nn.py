import numpy as np
import pytest

from sspose.coordmap import softmax
from sspose.nn import (Adam, NetConfig, PoseNet, SGD, grad_check,
                       load_checkpoint, make_optimizer, save_checkpoint)
from sspose.nn import tensor as T
from sspose.nn.optim import OptimizerError


@pytest.fixture(autouse=True)
def nan_check_mode():
    T.NAN_CHECK[0] = True
    yield
    T.NAN_CHECK[0] = False


SMALL = NetConfig(in_size=16, enc_channels=(4, 6, 8, 8), dec_channels=(8, 8))


def rand_img(size, seed=0):
    return np.random.default_rng(seed).uniform(0, 1, (size, size, 3))


def test_forward_shape_contract():
    net = PoseNet(NetConfig())
    coord, seg = net.forward(rand_img(64))
    assert coord.shape == (16, 16, 3, 65)
    assert seg.shape == (16, 16, 2)
    assert 3 * 65 + 2 == 197


def test_forward_resolution_mismatch_errors():
    net = PoseNet(SMALL)
    with pytest.raises(T.AutodiffError):
        net.forward(rand_img(32))


def test_zero_head_gives_uniform_scores():
    net = PoseNet(SMALL)
    net.head.w.data[:] = 0.0
    net.head.b.data[:] = 0.0
    coord, seg = net.forward(rand_img(16))
    probs = softmax(coord.data, axis=3)
    assert np.allclose(probs, 1.0 / 65, atol=1e-15)
    assert np.allclose(softmax(seg.data, axis=2), 0.5, atol=1e-15)


def test_forward_deterministic():
    net = PoseNet(SMALL)
    img = rand_img(16, seed=3)
    a, _ = net.forward(img)
    b, _ = net.forward(img)
    assert a.data.tobytes() == b.data.tobytes()


def test_backward_sum_loss_bias_gradient():
    net = PoseNet(SMALL)
    net.zero_grad()
    coord, seg = net.forward(rand_img(16))
    loss = T.add(T.tsum(coord), T.tsum(seg))
    loss.backward()
    h = w = net.out_size
    assert np.allclose(net.head.b.grad, h * w)


def test_backward_without_forward_errors():
    t = T.constant(np.zeros(()))
    with pytest.raises(T.AutodiffError):
        t.backward()


def test_two_identical_branches_double_gradient():
    net = PoseNet(SMALL)
    img = rand_img(16, seed=5)

    def loss_of(n_branches):
        net.zero_grad()
        terms = []
        for _ in range(n_branches):
            coord, seg = net.forward(img)
            terms.append(T.add(T.tsum(T.mul(coord, coord)), T.tsum(T.mul(seg, seg))))
        total = terms[0]
        for t in terms[1:]:
            total = T.add(total, t)
        total.backward()
        return [p.grad.copy() for p in net.parameters()]

    single = loss_of(1)
    double = loss_of(2)
    for g1, g2 in zip(single, double):
        assert np.allclose(g2, 2 * g1, rtol=1e-12, atol=1e-15)


def test_shared_parameter_store_is_siamese():
    net = PoseNet(SMALL)
    img = rand_img(16, seed=7)
    a, _ = net.forward(img)
    net.head.b.data[:] += 1.0
    b, _ = net.forward(img)
    assert not np.allclose(a.data, b.data)


def test_gradients_match_finite_differences():
    net = PoseNet(SMALL)
    img = rand_img(16, seed=11)
    labels = np.random.default_rng(2).integers(0, 65, (4, 4, 3))
    mask = np.random.default_rng(3).uniform(0, 1, (4, 4)) > 0.4

    def loss_fn():
        from sspose.losses import syn_loss
        coord, seg = net.forward(img)
        return syn_loss(coord, seg, labels, mask, tau=1.0)

    result = grad_check(net, loss_fn, probes=200, seed=0)
    assert result.n_checked >= 150
    assert result.max_rel_error < 1e-4, str(result)


def test_grad_check_linear_head_near_exact():
    # conv-free path: probe only the final pointwise head of a tiny net
    net = PoseNet(SMALL)
    img = rand_img(16, seed=13)
    labels = np.zeros((4, 4, 3), dtype=np.int64)
    mask = np.ones((4, 4), dtype=bool)

    class HeadOnly:
        def parameters(self):
            return net.head.params()

        def zero_grad(self):
            net.zero_grad()

    def loss_fn():
        from sspose.losses import syn_loss
        coord, seg = net.forward(img)
        return syn_loss(coord, seg, labels, mask, tau=1.0)

    result = grad_check(HeadOnly(), loss_fn, probes=60, seed=1)
    assert result.max_rel_error < 1e-6, str(result)


def test_grad_check_skips_relu_kink():
    class OneParamNet:
        def __init__(self):
            self.w = T.parameter(np.zeros(1), name="w")

        def parameters(self):
            return [self.w]

        def zero_grad(self):
            self.w.zero_grad()

    net = OneParamNet()

    def loss_fn():
        # pre-activation is exactly w: probing w crosses the kink at 0
        return T.tsum(T.relu(T.mul(net.w, 1.0)))

    result = grad_check(net, loss_fn, probes=5, seed=0)
    assert result.n_skipped > 0
    assert result.n_checked == 0


def test_sgd_step_and_zero_grad():
    p = T.parameter(np.array([1.0, 2.0]), name="p")
    opt = SGD([p], lr=1.0, momentum=0.0)
    p.zero_grad()
    opt.step()
    assert np.array_equal(p.data, [1.0, 2.0])     # zero gradient: unchanged
    p.grad = np.array([0.5, -0.5])
    opt.step()
    assert np.allclose(p.data, [0.5, 2.5])        # theta' = theta - g at lr 1


def test_adam_quadratic_bowl_converges():
    rng = np.random.default_rng(0)
    p = T.parameter(rng.normal(size=12), name="theta")
    opt = Adam([p], lr=0.05)
    for _ in range(200):
        p.zero_grad()
        loss = T.tsum(T.mul(p, p))
        loss.backward()
        opt.step()
    assert float((p.data ** 2).sum()) < 1e-6


def test_nan_gradient_raises_with_path():
    p = T.parameter(np.zeros(3), name="layer.weight")
    p.grad = np.array([0.0, np.nan, 0.0])
    opt = SGD([p])
    with pytest.raises(OptimizerError, match="layer.weight"):
        opt.step()


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = PoseNet(SMALL)
    img = rand_img(16, seed=17)
    opt = Adam(net.parameters(), lr=1e-3)
    for step in range(3):
        net.zero_grad()
        coord, seg = net.forward(img)
        T.add(T.tsum(T.mul(coord, coord)), T.tsum(seg)).backward()
        opt.step()
    path = tmp_path / "ckpt.sspt"
    save_checkpoint(path, net, opt, step=3, extra={"note": "test"})
    net2, opt2, step, extra = load_checkpoint(path, make_optimizer)
    assert step == 3 and extra["note"] == "test"
    for a, b in zip(net.parameters(), net2.parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    # one more identical step on both must stay bit-identical
    for n, o in ((net, opt), (net2, opt2)):
        n.zero_grad()
        coord, seg = n.forward(img)
        T.add(T.tsum(T.mul(coord, coord)), T.tsum(seg)).backward()
        o.step()
    for a, b in zip(net.parameters(), net2.parameters()):
        assert a.data.tobytes() == b.data.tobytes()


def test_upsample_and_groupnorm_gradients():
    rng = np.random.default_rng(19)

    class Tiny:
        def __init__(self):
            self.x = T.parameter(rng.normal(size=(4, 3, 3)), name="x")
            self.gamma = T.parameter(np.ones(4), name="gamma")
            self.beta = T.parameter(np.zeros(4), name="beta")

        def parameters(self):
            return [self.x, self.gamma, self.beta]

        def zero_grad(self):
            for p in self.parameters():
                p.zero_grad()

    tiny = Tiny()
    target = rng.normal(size=(4, 6, 6))

    def loss_fn():
        y = T.group_norm(tiny.x, tiny.gamma, tiny.beta, groups=2)
        up = T.upsample2x(y)
        diff = T.add(up, T.constant(-target))
        return T.tsum(T.mul(diff, diff))

    result = grad_check(tiny, loss_fn, probes=40, seed=2)
    assert result.max_rel_error < 1e-6, str(result)
