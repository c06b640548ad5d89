import numpy as np
import pytest

from bfno import autodiff as ad
from bfno import spectral
from bfno.autodiff import Tape


def _fd_for(build, x0, eps=1e-6):
    """Max relative FD error for a scalar-valued graph over one real leaf."""
    x0 = np.asarray(x0, dtype=np.float64)

    def f(theta, need_grad):
        tape = Tape()
        leaf = tape.leaf(theta.reshape(x0.shape))
        out = build(tape, leaf)
        if need_grad:
            tape.backward(out)
            g = leaf.grad if leaf.grad is not None else np.zeros_like(x0)
            return float(out.value), np.asarray(g).ravel()
        return float(out.value), None

    return ad.finite_diff_check(f, x0.ravel(), eps)


def _rng(seed):
    return np.random.default_rng(seed)


# ------------------------------------------------------------ tape basics


def test_record_add_forward():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    y = tape.leaf(np.array([10.0, 20.0]))
    out = ad.record("add", x, y)
    assert out.value.tolist() == [11.0, 22.0]


def test_recording_n_ops_yields_n_nodes():
    tape = Tape()
    x = tape.leaf(np.arange(3.0))
    base = len(tape.nodes)
    ad.record("relu", ad.record("add", x, x))
    assert len(tape.nodes) - base == 2


def test_replay_identical_outputs():
    def run():
        tape = Tape()
        x = tape.leaf(np.array([0.3, -0.4, 1.2]))
        return ad.tanh(ad.mul(x, x)).value

    assert run().tobytes() == run().tobytes()


def test_shape_mismatch_names_op():
    tape = Tape()
    x = tape.leaf(np.zeros(3))
    y = tape.leaf(np.zeros(4))
    with pytest.raises(ValueError, match="add"):
        ad.add(x, y)


def test_unknown_primitive_rejected():
    with pytest.raises(ValueError, match="nonsense"):
        ad.record("nonsense")


# ------------------------------------------------------------ backward


def test_product_rule():
    tape = Tape()
    x = tape.leaf(np.array(3.0))
    y = tape.leaf(np.array(4.0))
    tape.backward(ad.mul(x, y))
    assert float(x.grad) == 4.0
    assert float(y.grad) == 3.0


def test_relu_subgradient_zero_at_negative():
    tape = Tape()
    x = tape.leaf(np.array([-1.0, 2.0]))
    tape.backward(ad.sum_all(ad.relu(x)))
    assert x.grad.tolist() == [0.0, 1.0]


def test_relu_derivative_at_zero_is_zero():
    tape = Tape()
    x = tape.leaf(np.array([0.0]))
    tape.backward(ad.sum_all(ad.relu(x)))
    assert x.grad.tolist() == [0.0]


def test_backward_linear_in_cotangent():
    def grads(scale):
        tape = Tape()
        x = tape.leaf(np.array([0.5, -1.5, 2.0]))
        out = ad.tanh(x)
        tape.backward(out, scale * np.ones(3))
        return x.grad

    assert np.allclose(grads(3.0), 3.0 * grads(1.0), atol=1e-14)


def test_fanout_accumulates():
    err = _fd_for(lambda t, x: ad.sum_all(ad.add(ad.mul(x, x), ad.scale(x, 2.0))),
                  _rng(0).standard_normal(5))
    assert err < 1e-6


def test_cotangent_shape_mismatch_rejected():
    tape = Tape()
    x = tape.leaf(np.zeros(3))
    out = ad.relu(x)
    with pytest.raises(ValueError):
        tape.backward(out, np.zeros(4))


def test_backward_nonscalar_needs_cotangent():
    tape = Tape()
    x = tape.leaf(np.zeros(3))
    with pytest.raises(ValueError):
        tape.backward(ad.relu(x))


# ------------------------------------------------------------ per-primitive FD

# every primitive gets an isolated central-difference check on 10 random inputs


@pytest.mark.parametrize("seed", range(10))
def test_fd_elementwise_ops(seed):
    r = _rng(seed)
    x = r.standard_normal(6)
    x = np.where(np.abs(x) < 0.1, x + 0.2, x)  # keep relu inputs off the kink
    w = r.standard_normal(6)
    y = r.standard_normal(6)

    assert _fd_for(lambda t, a: ad.weighted_sum(ad.add(a, t.leaf(y)), w), x) < 1e-6
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.sub(a, t.leaf(y)), w), x) < 1e-6
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.mul(a, t.leaf(y)), w), x) < 1e-6
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.scale(a, -1.7), w), x) < 1e-6
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.relu(a), w), x) < 1e-6
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.tanh(a), w), x) < 1e-6
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.softplus(a), w), x) < 1e-6


@pytest.mark.parametrize("kind", ["relu", "tanh", "softplus", "identity"])
def test_fd_act_add(kind):
    r = _rng(hash(kind) % 1000)
    x = r.standard_normal(8) + 0.3
    y = r.standard_normal(8)
    w = r.standard_normal(8)
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.act_add(a, t.leaf(y), kind), w), x) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_fd_channel_map(seed):
    # positive constants keep every gradient coordinate away from zero so the
    # per-coordinate relative metric is well conditioned; the VJP being
    # checked is the same linear map either way
    r = _rng(100 + seed)
    x = np.abs(r.standard_normal((2, 3, 4, 4))) + 0.1
    wgt = np.abs(r.standard_normal((5, 3))) + 0.1
    wsum = np.abs(r.standard_normal((2, 5, 4, 4))) + 0.1
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.channel_map(a, t.leaf(wgt)), wsum), x) < 1e-6
    assert _fd_for(lambda t, ww: ad.weighted_sum(ad.channel_map(t.leaf(x), ww), wsum), wgt) < 1e-6


def test_fd_bias_and_affine():
    r = _rng(7)
    x = r.standard_normal((3, 2, 4, 4))
    b = r.standard_normal(2)
    wsum = r.standard_normal(x.shape)
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.bias_channel(a, t.leaf(b)), wsum), x) < 1e-6
    assert _fd_for(lambda t, bb: ad.weighted_sum(ad.bias_channel(t.leaf(x), bb), wsum), b) < 1e-6

    xf = r.standard_normal((4, 6))
    w = r.standard_normal((3, 6))
    bias = r.standard_normal(3)
    wsum2 = r.standard_normal((4, 3))
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.affine(a, t.leaf(w), t.leaf(bias)), wsum2), xf) < 1e-6
    assert _fd_for(lambda t, ww: ad.weighted_sum(ad.affine(t.leaf(xf), ww, t.leaf(bias)), wsum2), w) < 1e-6
    assert _fd_for(lambda t, bb: ad.weighted_sum(ad.affine(t.leaf(xf), t.leaf(w), bb), wsum2), bias) < 1e-6


def test_fd_conv3x3():
    r = _rng(11)
    x = r.standard_normal((2, 2, 5, 5))
    w = r.standard_normal((3, 2, 3, 3))
    wsum = r.standard_normal((2, 3, 5, 5))
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.conv3x3(a, t.leaf(w)), wsum), x) < 1e-6
    assert _fd_for(lambda t, ww: ad.weighted_sum(ad.conv3x3(t.leaf(x), ww), wsum), w) < 1e-6


def test_fd_shape_ops():
    r = _rng(13)
    x = r.standard_normal((2, 2, 3, 3))
    w8 = r.standard_normal((2, 2, 4, 4))
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.pad_spatial(a, 4, 4), w8), x) < 1e-6
    x2 = r.standard_normal((2, 2, 4, 4))
    w3 = r.standard_normal((2, 2, 3, 3))
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.crop_spatial(a, 3, 3), w3), x2) < 1e-6
    wt = r.standard_normal((2, 3, 4, 4))
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.concat_time(a, 0.7), wt), x2) < 1e-6
    wf = r.standard_normal((2, 2 * 4 * 4))
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.flatten_spatial(a), wf), x2) < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_fd_rfft2_and_irfft2(seed):
    r = _rng(300 + seed)
    x = r.standard_normal((2, 2, 4, 4))
    wc = r.standard_normal((2, 2, 4, 3)) + 1j * r.standard_normal((2, 2, 4, 3))
    assert _fd_for(lambda t, a: ad.weighted_sum(ad.rfft2(a), wc), x) < 1e-6

    re = r.standard_normal((2, 2, 4, 3))
    im = r.standard_normal((2, 2, 4, 3))
    wr = r.standard_normal((2, 2, 4, 4))
    assert _fd_for(
        lambda t, a: ad.weighted_sum(ad.irfft2(ad.make_complex(a, t.leaf(im)), 4, 4), wr), re
    ) < 1e-6
    assert _fd_for(
        lambda t, b: ad.weighted_sum(ad.irfft2(ad.make_complex(t.leaf(re), b), 4, 4), wr), im
    ) < 1e-6


def test_fd_spectral_filter_and_kernels():
    r = _rng(17)
    x = r.standard_normal((2, 3, 4, 4))
    kr = r.standard_normal((2, 3, 4, 3))
    ki = r.standard_normal((2, 3, 4, 3))
    agg = r.standard_normal((3, 2))
    wc = r.standard_normal((2, 3, 4, 3)) + 1j * r.standard_normal((2, 3, 4, 3))

    def graph(tape, leaf, which):
        leaves = {"x": tape.leaf(x), "kr": tape.leaf(kr), "ki": tape.leaf(ki), "agg": tape.leaf(agg)}
        leaves[which] = leaf
        spec = ad.rfft2(leaves["x"])
        kernel = ad.combine_branch_kernels(leaves["kr"], leaves["ki"], leaves["agg"])
        return ad.weighted_sum(ad.spectral_filter(spec, kernel), wc)

    assert _fd_for(lambda t, a: graph(t, a, "x"), x) < 1e-6
    assert _fd_for(lambda t, a: graph(t, a, "kr"), kr) < 1e-6
    assert _fd_for(lambda t, a: graph(t, a, "ki"), ki) < 1e-6
    assert _fd_for(lambda t, a: graph(t, a, "agg"), agg) < 1e-6


def test_fd_complex_mul_and_mask():
    r = _rng(19)
    re = r.standard_normal((2, 4, 3))
    im = r.standard_normal((2, 4, 3))
    other = r.standard_normal((2, 4, 3)) + 1j * r.standard_normal((2, 4, 3))
    wc = r.standard_normal((2, 4, 3)) + 1j * r.standard_normal((2, 4, 3))
    mask = (r.random((2, 4, 3)) > 0.4).astype(float)

    def build(tape, a):
        z = ad.make_complex(a, tape.leaf(im))
        z = ad.complex_mul(z, tape.leaf(other.real))  # complex leaves stay real pairs
        z = ad.complex_mul(z, ad.make_complex(tape.leaf(other.real), tape.leaf(other.imag)))
        return ad.weighted_sum(ad.spectrum_mask(z, mask), wc)

    assert _fd_for(build, re) < 1e-6


def test_fd_cross_entropy():
    r = _rng(23)
    logits = r.standard_normal((4, 5))
    labels = np.array([0, 3, 2, 4])
    assert _fd_for(lambda t, a: ad.cross_entropy_mean(a, labels), logits) < 1e-6


# ------------------------------------------------------------ rfft VJP contract


def test_vjp_rfft_sum_of_real_parts_at_delta():
    # the map is linear, so central differences are exact up to roundoff and
    # the comparison can be made absolutely (the gradient has exact zeros)
    n = 8
    x = np.zeros(n)
    x[0] = 1.0
    grad = spectral.vjp_rfft_1d(np.ones(n // 2 + 1, dtype=complex), n)
    eps = 1e-6
    for i in range(n):
        bump = np.zeros(n)
        bump[i] = eps
        fp = np.sum(spectral.rfft_1d(x + bump).real)
        fm = np.sum(spectral.rfft_1d(x - bump).real)
        assert abs((fp - fm) / (2 * eps) - grad[i]) < 1e-8


def test_vjp_rfft_parseval_energy_gradient():
    # d/dx of (1/n) sum over the full spectrum of |X|^2 must be exactly 2x
    rng = _rng(29)
    n = 16
    x = rng.standard_normal(n)
    spec = spectral.rfft_1d(x)
    weights = np.ones(n // 2 + 1)
    weights[1:-1] = 2.0
    cotangent = (2.0 / n) * weights * spec
    grad = spectral.vjp_rfft_1d(cotangent, n)
    assert np.abs(grad - 2 * x).max() < 1e-12


def test_vjp_rfft_zero_cotangent():
    g = spectral.vjp_rfft_1d(np.zeros(9, dtype=complex), 16)
    assert np.abs(g).max() == 0.0


# ------------------------------------------------------------ FD harness itself


def test_fd_quadratic_tight():
    def f(theta, need_grad):
        return float(np.sum(theta**2)), (2 * theta if need_grad else None)

    theta = _rng(31).standard_normal(6)
    assert ad.finite_diff_check(f, theta, eps=1e-5) < 1e-9


def test_fd_softmax_cross_entropy():
    r = _rng(37)
    logits = r.standard_normal((3, 7))
    labels = np.array([1, 0, 6])
    err = _fd_for(lambda t, a: ad.cross_entropy_mean(a, labels), logits)
    assert err < 1e-6
