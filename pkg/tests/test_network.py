import numpy as np
import pytest

from deepaec import tensor as T
from deepaec.complexnn import ComplexTensor
from deepaec.errors import DataError, InvalidArgumentError
from deepaec.network import (D2Block, D3Spec, MaskNet, NetConfig,
                             d2_receptive_field, impulse_support, load_config,
                             parse_config, receptive_field, save_config)
from deepaec.tensor import Tensor, grad_check

MICRO = dict(bnc_out=4, d3_blocks=[D3Spec(1, 2, 2)], transitions=[4])


def micro_config(**kw):
    args = {**MICRO, **kw}
    return NetConfig(**args)


def random_input(rng, channels=4, f=8, k=8):
    return ComplexTensor.from_arrays(rng.standard_normal((channels, f, k)),
                                     rng.standard_normal((channels, f, k)))


class TestConfigIO:
    def test_round_trip(self, tmp_path):
        cfg = NetConfig(mask_mode="single", bnc_out=10,
                        d3_blocks=[D3Spec(2, 3, 5), D3Spec(1, 2, 4)],
                        transitions=[12, 8], leaky_slope=0.05, init_seed=42)
        path = tmp_path / "net.cfg"
        save_config(cfg, path)
        assert load_config(path) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(DataError):
            parse_config("bnc_out = 4\nd3_blocks = 1:1:1\ntransitions = 4\npooling = yes")

    def test_malformed_line_rejected(self):
        with pytest.raises(DataError):
            parse_config("bnc_out 4")

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config(
            "# a comment\n\nbnc_out = 4  # trailing\nd3_blocks = 1:2:2\n"
            "transitions = 4\n")
        assert cfg.bnc_out == 4
        assert cfg.d3_blocks == [D3Spec(1, 2, 2)]

    def test_transition_count_must_match(self):
        with pytest.raises(InvalidArgumentError):
            NetConfig(d3_blocks=[D3Spec(1, 1, 1)], transitions=[4, 4])

    def test_mask_mode_validated(self):
        with pytest.raises(InvalidArgumentError):
            NetConfig(mask_mode="triple")


class TestShapes:
    @pytest.mark.parametrize("f,k", [(8, 8), (5, 11), (1, 7), (16, 1)])
    def test_resolution_preserved(self, rng, f, k):
        net = MaskNet(micro_config())
        masks = net.forward(random_input(rng, 4, f, k))
        assert masks.A.shape == (f, k)
        assert masks.B.shape == (f, k)

    def test_mask_channel_count_by_mode(self, rng):
        dual = MaskNet(micro_config(mask_mode="dual"))
        single = MaskNet(micro_config(mask_mode="single"))
        x = random_input(rng)
        assert dual.forward(x).B is not None
        assert single.forward(x).B is None

    def test_wrong_input_channels_rejected(self, rng):
        net = MaskNet(micro_config())
        with pytest.raises(InvalidArgumentError):
            net.forward(random_input(rng, channels=3))

    def test_d2_channel_bookkeeping(self, rng):
        spec = D3Spec(1, 3, 8)
        block = D2Block(4, spec, 0.1, 1e-5, 0.1)
        out = block.forward(random_input(rng, 4, 6, 6), "train")
        assert out.shape == (24, 6, 6)  # L * g

    def test_d3_channel_bookkeeping(self, rng):
        from deepaec.network import D3Block

        spec = D3Spec(2, 3, 4)
        block = D3Block(4, spec, 0.1, 1e-5, 0.1)
        out = block.forward(random_input(rng, 4, 6, 6), "train")
        assert out.shape == (2 * 3 * 4, 6, 6)  # M * L * g

    def test_single_d2_equals_d3_with_m1(self, rng):
        from deepaec.network import D3Block

        spec = D3Spec(1, 2, 3)
        x = random_input(rng, 4, 6, 6)
        rng_a = np.random.default_rng(7)
        rng_b = np.random.default_rng(7)
        d2 = D2Block(4, spec, 0.1, 1e-5, 0.1)
        d2.init(rng_a)
        d3 = D3Block(4, spec, 0.1, 1e-5, 0.1)
        d3.init(rng_b)
        np.testing.assert_array_equal(d2.forward(x, "eval").re.data,
                                      d3.forward(x, "eval").re.data)


class TestDeterminism:
    def test_same_seed_bitwise_identical(self, rng):
        x = random_input(rng)
        a = MaskNet(micro_config()).forward(x)
        b = MaskNet(micro_config()).forward(x)
        np.testing.assert_array_equal(a.A.re.data, b.A.re.data)
        np.testing.assert_array_equal(a.A.im.data, b.A.im.data)

    def test_different_seed_differs(self, rng):
        a = MaskNet(micro_config(init_seed=0))
        b = MaskNet(micro_config(init_seed=1))
        wa = next(p for n, p in a.named_params() if n.endswith("bnc.conv.w_r"))
        wb = next(p for n, p in b.named_params() if n.endswith("bnc.conv.w_r"))
        assert not np.array_equal(wa.data, wb.data)


class TestReceptiveField:
    def test_single_bnc_like_layer(self):
        cfg = micro_config()
        # one D2 layer chain: bnc(3) + d2(L=2: 1+2*3=7) + final(3)
        assert receptive_field(cfg) == (3 + 6 + 2, 3 + 6 + 2)

    def test_d2_l4_impulse_support_is_31(self):
        spec = D3Spec(1, 4, 2)
        assert d2_receptive_field(spec) == 31
        block = D2Block(1, spec, 0.2, 1e-5, 0.1)
        block.init(np.random.default_rng(3))
        got = impulse_support(lambda z: block.forward(z, "eval"), 1, 71)
        assert got == (31, 31)

    @pytest.mark.parametrize("seed,kwargs", [
        (0, dict(bnc_out=3, d3_blocks=[D3Spec(1, 2, 2)], transitions=[4])),
        (1, dict(bnc_out=3, d3_blocks=[D3Spec(2, 2, 2)], transitions=[4])),
        (2, dict(bnc_out=3, d3_blocks=[D3Spec(1, 2, 2), D3Spec(1, 3, 2)],
                 transitions=[4, 4])),
    ])
    def test_measured_support_matches_analytic(self, seed, kwargs):
        cfg = NetConfig(init_seed=seed, leaky_slope=0.2, **kwargs)
        net = MaskNet(cfg)
        randomize_head(net, np.random.default_rng(seed + 50))
        rf = receptive_field(cfg)
        grid = rf[0] + 10

        measured = impulse_support(
            lambda z: _as3(net.forward(z, mode="eval").A), 4, grid)
        assert measured == rf

    def test_composition_rule(self):
        # cascading two blocks composes extents as r1 + r2 - 1
        one = NetConfig(bnc_out=3, d3_blocks=[D3Spec(1, 2, 2)], transitions=[4])
        two = NetConfig(bnc_out=3, d3_blocks=[D3Spec(1, 2, 2), D3Spec(1, 2, 2)],
                        transitions=[4, 4])
        r1 = receptive_field(one)[0]
        r2 = receptive_field(two)[0]
        d2_extent = d2_receptive_field(D3Spec(1, 2, 2))
        assert r2 == r1 + (d2_extent - 1)


def _as3(ct):
    return ComplexTensor(T.reshape(ct.re, (1,) + ct.re.data.shape),
                         T.reshape(ct.im, (1,) + ct.im.data.shape))


def randomize_head(net, rng):
    """Replace the zero passthrough head with random weights so the final
    layer contributes to the impulse response."""
    net.final.init(rng)


class TestParameterBudget:
    def test_default_dual_config(self):
        from deepaec import packaged_config

        net = MaskNet(packaged_config("default_dual"))
        n = net.param_count()
        assert n == 356580
        assert abs(n - 354000) / 354000 < 0.15

    def test_dual_exceeds_single(self):
        from deepaec import packaged_config

        dual = MaskNet(packaged_config("default_dual")).param_count()
        single = MaskNet(packaged_config("default_single")).param_count()
        assert dual > single

    def test_tiny_config_size(self):
        from deepaec import packaged_config

        n = MaskNet(packaged_config("tiny")).param_count()
        assert 25000 <= n <= 35000


class TestGradients:
    def test_bnc_gradient(self, rng):
        from deepaec.network import BNCBlock

        block = BNCBlock(2, 3, 3, 0.1, 1e-5, 0.1)
        block.init(np.random.default_rng(0))
        zr = rng.standard_normal((2, 6, 6))
        zi = rng.standard_normal((2, 6, 6))

        def f(v):
            out = block.forward(ComplexTensor(v, Tensor(zi)), "train")
            return T.add(T.tsum(T.mul(out.re, out.re)),
                         T.tsum(T.mul(out.im, out.im)))

        assert grad_check(f, Tensor(zr)) < 1e-6

    def test_d3_gradient_tiny(self, rng):
        from deepaec.network import D3Block

        block = D3Block(2, D3Spec(2, 2, 2), 0.1, 1e-5, 0.1)
        block.init(np.random.default_rng(1))
        zr = rng.standard_normal((2, 8, 8))
        zi = rng.standard_normal((2, 8, 8))

        def f(v):
            out = block.forward(ComplexTensor(v, Tensor(zi)), "train")
            return T.add(T.tsum(T.mul(out.re, out.re)),
                         T.tsum(T.mul(out.im, out.im)))

        assert grad_check(f, Tensor(zr), sample=40) < 1e-4

    def test_network_param_gradient(self, rng):
        net = MaskNet(micro_config())
        x = random_input(rng, 4, 6, 6)
        w = next(p for n, p in net.named_params() if n.endswith("final.w_r"))

        def loss():
            masks = net.forward(x, mode="eval")
            return T.add(T.tsum(T.mul(masks.A.re, masks.A.re)),
                         T.tsum(T.mul(masks.B.im, masks.B.im)))

        err = param_grad_check(net, w, loss)
        assert err < 1e-5


def param_grad_check(net, param, loss_fn, h=1e-5, stride=7):
    """Finite differences vs the graph gradient for one parameter tensor."""
    for _, p in net.named_params():
        p.zero_grad()
    loss_fn().backward()
    analytic = param.grad.reshape(-1).copy()
    flat = param.data.reshape(-1)
    worst = 0.0
    for i in range(0, flat.size, stride):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss_fn().item()
        flat[i] = orig - h
        fm = loss_fn().item()
        flat[i] = orig
        cd = (fp - fm) / (2 * h)
        worst = max(worst,
                    abs(analytic[i] - cd) / max(abs(analytic[i]), abs(cd), 1e-12))
    return worst
