"""The mask-estimation network: BNC stem, multidilated dense blocks,
densely connected block groups, and the sequential pooling-free assembly.

Every convolution is pseudocomplex, stride 1, and 'same'-padded, so the
F x K resolution is preserved end to end.  Dense-block skip inputs are
convolved with exponentially growing dilations (2^i for the group
produced by layer i); block groups concatenate their members' outputs and
are followed by 1x1 transition convolutions that bound channel growth.
The final convolution emits 1 (single) or 2 (dual) complex mask channels
with no activation, so masks span the whole complex plane.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .complexnn import ComplexTensor, PCBatchNorm, PCConv, count_params, pc_leaky_relu
from .enhancement import MaskPair
from .errors import DataError, InvalidArgumentError
from .tensor import ConvSpec


@dataclass(frozen=True)
class D3Spec:
    """One densely connected group: M dense blocks of L layers, growth g."""

    num_d2: int
    d2_layers: int
    growth: int
    kernel: int = 3

    def __post_init__(self):
        if self.num_d2 < 1 or self.d2_layers < 1 or self.growth < 1:
            raise InvalidArgumentError("D3Spec counts must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidArgumentError("kernel must be odd (same padding)")


@dataclass
class NetConfig:
    """Full architectural description of one mask network."""

    mask_mode: str = "dual"
    input_channels: int = 4
    bnc_out: int = 28
    d3_blocks: list = field(default_factory=lambda: [D3Spec(3, 4, 9), D3Spec(3, 4, 9)])
    transitions: list = field(default_factory=lambda: [44, 44])
    final_kernel: int = 3
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    init_seed: int = 0

    def __post_init__(self):
        if self.mask_mode not in ("single", "dual"):
            raise InvalidArgumentError(f"mask_mode must be single|dual, got {self.mask_mode!r}")
        if len(self.transitions) != len(self.d3_blocks):
            raise InvalidArgumentError("need one transition width per d3 block")
        if not self.d3_blocks:
            raise InvalidArgumentError("at least one d3 block required")
        if not (0.0 < self.leaky_slope < 1.0):
            raise InvalidArgumentError("leaky_slope must be in (0,1)")

    @property
    def mask_channels(self):
        return 2 if self.mask_mode == "dual" else 1


def save_config(config, path):
    lines = [
        "# deepaec network config (key = value, '#' starts a comment)",
        f"mask_mode = {config.mask_mode}",
        f"input_channels = {config.input_channels}",
        f"bnc_out = {config.bnc_out}",
        "d3_blocks = " + " ".join(
            f"{s.num_d2}:{s.d2_layers}:{s.growth}" for s in config.d3_blocks
        ),
        "transitions = " + " ".join(str(t) for t in config.transitions),
        f"kernel = {config.d3_blocks[0].kernel}",
        f"final_kernel = {config.final_kernel}",
        f"leaky_slope = {config.leaky_slope!r}",
        f"bn_eps = {config.bn_eps!r}",
        f"bn_momentum = {config.bn_momentum!r}",
        f"init_seed = {config.init_seed}",
    ]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def parse_config(text):
    kv = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {ln}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in kv:
            raise DataError(f"config line {ln}: duplicate key {key!r}")
        kv[key] = value

    known = {
        "mask_mode", "input_channels", "bnc_out", "d3_blocks", "transitions",
        "kernel", "final_kernel", "leaky_slope", "bn_eps", "bn_momentum",
        "init_seed",
    }
    unknown = set(kv) - known
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")

    try:
        kernel = int(kv.get("kernel", 3))
        blocks = []
        for tok in kv.get("d3_blocks", "").split():
            m, l, g = (int(v) for v in tok.split(":"))
            blocks.append(D3Spec(m, l, g, kernel))
        transitions = [int(v) for v in kv.get("transitions", "").split()]
        return NetConfig(
            mask_mode=kv.get("mask_mode", "dual"),
            input_channels=int(kv.get("input_channels", 4)),
            bnc_out=int(kv["bnc_out"]),
            d3_blocks=blocks,
            transitions=transitions,
            final_kernel=int(kv.get("final_kernel", 3)),
            leaky_slope=float(kv.get("leaky_slope", 0.01)),
            bn_eps=float(kv.get("bn_eps", 1e-5)),
            bn_momentum=float(kv.get("bn_momentum", 0.1)),
            init_seed=int(kv.get("init_seed", 0)),
        )
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad config: {exc}") from exc


def load_config(path):
    with open(path) as f:
        return parse_config(f.read())


def _same_conv_spec(cin, cout, kernel, dilation=1, bias=True):
    pad = dilation * (kernel - 1) // 2
    return ConvSpec(cin, cout, (kernel, kernel), (dilation, dilation), (pad, pad), bias)


class BNCBlock:
    """Batch normalization, then convolution, then leaky ReLU."""

    def __init__(self, cin, cout, kernel, slope, eps, momentum):
        self.bn = PCBatchNorm(cin, eps, momentum)
        self.conv = PCConv(_same_conv_spec(cin, cout, kernel))
        self.slope = slope

    def forward(self, z, mode):
        return pc_leaky_relu(self.conv.forward(self.bn.forward(z, mode)), self.slope)

    def init(self, rng):
        self.conv.init(rng)

    def named_params(self, prefix):
        yield from self.bn.named_params(prefix + ".bn")
        yield from self.conv.named_params(prefix + ".conv")

    def named_buffers(self, prefix):
        yield from self.bn.named_buffers(prefix + ".bn")


class MultiDilatedLayer:
    """One dense-block layer: per-group dilated convolutions summed into
    g channels, then BN and leaky ReLU.

    Group 0 is the block input (dilation 1); group i is the output of
    dense layer i (dilation 2^i).  Only group 0 carries the bias.
    """

    def __init__(self, block_in, layer_index, growth, kernel, slope, eps, momentum):
        self.convs = []
        dims = [block_in] + [growth] * (layer_index - 1)
        for i, cin in enumerate(dims):
            spec = _same_conv_spec(cin, growth, kernel, dilation=2 ** i, bias=(i == 0))
            self.convs.append(PCConv(spec))
        self.bn = PCBatchNorm(growth, eps, momentum)
        self.slope = slope

    def forward(self, groups, mode):
        acc = self.convs[0].forward(groups[0])
        for conv, z in zip(self.convs[1:], groups[1:]):
            out = conv.forward(z)
            acc = ComplexTensor(T.add(acc.re, out.re), T.add(acc.im, out.im))
        return pc_leaky_relu(self.bn.forward(acc, mode), self.slope)

    def init(self, rng):
        # fan-in counts every input channel feeding the summed output
        total_in = sum(c.spec.in_channels for c in self.convs)
        k = self.convs[0].spec.kernel[0]
        bound = 1.0 / np.sqrt(total_in * k * k)
        for conv in self.convs:
            conv.w_r.data[...] = rng.uniform(-bound, bound, conv.w_r.data.shape)
            conv.w_i.data[...] = rng.uniform(-bound, bound, conv.w_i.data.shape)

    def named_params(self, prefix):
        for i, conv in enumerate(self.convs):
            yield from conv.named_params(f"{prefix}.g{i}")
        yield from self.bn.named_params(prefix + ".bn")

    def named_buffers(self, prefix):
        yield from self.bn.named_buffers(prefix + ".bn")


class D2Block:
    """Multidilated dense block of L layers; output concatenates all
    layer outputs (L * growth channels)."""

    def __init__(self, cin, spec, slope, eps, momentum):
        self.spec = spec
        self.layers = [
            MultiDilatedLayer(cin, l, spec.growth, spec.kernel, slope, eps, momentum)
            for l in range(1, spec.d2_layers + 1)
        ]

    @property
    def out_channels(self):
        return self.spec.d2_layers * self.spec.growth

    def forward(self, z, mode):
        groups = [z]
        outs = []
        for layer in self.layers:
            out = layer.forward(groups, mode)
            outs.append(out)
            groups.append(out)
        if len(outs) == 1:
            return outs[0]
        return ComplexTensor(
            T.concat_channels([o.re for o in outs]),
            T.concat_channels([o.im for o in outs]),
        )

    def init(self, rng):
        for layer in self.layers:
            layer.init(rng)

    def named_params(self, prefix):
        for i, layer in enumerate(self.layers, 1):
            yield from layer.named_params(f"{prefix}.layer{i}")

    def named_buffers(self, prefix):
        for i, layer in enumerate(self.layers, 1):
            yield from layer.named_buffers(f"{prefix}.layer{i}")


class D3Block:
    """Densely connected sequence of M dense blocks; block m sees the
    concatenation of the group input and all previous block outputs."""

    def __init__(self, cin, spec, slope, eps, momentum):
        self.spec = spec
        self.blocks = []
        ch = cin
        for _ in range(spec.num_d2):
            block = D2Block(ch, spec, slope, eps, momentum)
            self.blocks.append(block)
            ch += block.out_channels

    @property
    def out_channels(self):
        return sum(b.out_channels for b in self.blocks)

    def forward(self, z, mode):
        feats = [z]
        outs = []
        for block in self.blocks:
            if len(feats) == 1:
                x = feats[0]
            else:
                x = ComplexTensor(
                    T.concat_channels([f.re for f in feats]),
                    T.concat_channels([f.im for f in feats]),
                )
            out = block.forward(x, mode)
            outs.append(out)
            feats.append(out)
        if len(outs) == 1:
            return outs[0]
        return ComplexTensor(
            T.concat_channels([o.re for o in outs]),
            T.concat_channels([o.im for o in outs]),
        )

    def init(self, rng):
        for block in self.blocks:
            block.init(rng)

    def named_params(self, prefix):
        for i, block in enumerate(self.blocks, 1):
            yield from block.named_params(f"{prefix}.d2_{i}")

    def named_buffers(self, prefix):
        for i, block in enumerate(self.blocks, 1):
            yield from block.named_buffers(f"{prefix}.d2_{i}")


class MaskNet:
    """Sequential pooling-free mask estimator over [4, F, K] complex input.

    Initialization: trunk convolutions draw U(+/-1/sqrt(fan_in)); the mask
    head starts at exact passthrough (zero weights, bias = mask A of 1+0j)
    so an untrained model reproduces its input.
    """

    def __init__(self, config):
        self.config = config
        slope, eps, mom = config.leaky_slope, config.bn_eps, config.bn_momentum
        self.bnc = BNCBlock(config.input_channels, config.bnc_out,
                            config.d3_blocks[0].kernel, slope, eps, mom)
        self.d3 = []
        self.trans = []
        ch = config.bnc_out
        for spec, width in zip(config.d3_blocks, config.transitions):
            block = D3Block(ch, spec, slope, eps, mom)
            self.d3.append(block)
            self.trans.append(PCConv(_same_conv_spec(block.out_channels, width, 1)))
            ch = width
        self.final = PCConv(_same_conv_spec(ch, config.mask_channels, config.final_kernel))
        self.init(np.random.default_rng(config.init_seed))

    def init(self, rng):
        self.bnc.init(rng)
        for block, trans in zip(self.d3, self.trans):
            block.init(rng)
            trans.init(rng)
        # the mask head starts at exact passthrough: zero weights, biases
        # combining to mask channel 0 = 1+0j (and B = 0 when present)
        self.final.w_r.data[...] = 0.0
        self.final.w_i.data[...] = 0.0
        self.final.b_r.data[0] = 0.5
        self.final.b_i.data[0] = -0.5

    def forward(self, z, mode="eval"):
        if z.shape[0] != self.config.input_channels:
            raise InvalidArgumentError(
                f"expected {self.config.input_channels} complex channels, got {z.shape[0]}"
            )
        h = self.bnc.forward(z, mode)
        for block, trans in zip(self.d3, self.trans):
            h = trans.forward(block.forward(h, mode))
        m = self.final.forward(h)
        F, K = m.shape[1], m.shape[2]
        a = ComplexTensor(
            T.reshape(T.channel_slice(m.re, 0, 1), (F, K)),
            T.reshape(T.channel_slice(m.im, 0, 1), (F, K)),
        )
        if self.config.mask_mode == "single":
            return MaskPair(a, None)
        b = ComplexTensor(
            T.reshape(T.channel_slice(m.re, 1, 2), (F, K)),
            T.reshape(T.channel_slice(m.im, 1, 2), (F, K)),
        )
        return MaskPair(a, b)

    def named_params(self, prefix=""):
        base = prefix or "net"
        yield from self.bnc.named_params(base + ".bnc")
        for i, (block, trans) in enumerate(zip(self.d3, self.trans), 1):
            yield from block.named_params(f"{base}.d3_{i}")
            yield from trans.named_params(f"{base}.trans_{i}")
        yield from self.final.named_params(base + ".final")

    def named_buffers(self, prefix=""):
        base = prefix or "net"
        yield from self.bnc.named_buffers(base + ".bnc")
        for i, block in enumerate(self.d3, 1):
            yield from block.named_buffers(f"{base}.d3_{i}")

    def param_count(self):
        return count_params(self)

    def set_precision(self, dtype):
        """Cast all parameters to float32 or float64 in place.

        Running statistics stay float64; batch_norm casts them at use.
        """
        dtype = np.dtype(dtype)
        if dtype not in (np.float32, np.float64):
            raise InvalidArgumentError("precision must be float32 or float64")
        for _, p in self.named_params():
            p.data = np.ascontiguousarray(p.data.astype(dtype))
        return self


def d2_receptive_field(spec):
    return 1 + (spec.kernel - 1) * (2 ** spec.d2_layers - 1)


def receptive_field(config):
    """Analytic receptive-field extent (freq, time) of the assembled net."""
    r = config.d3_blocks[0].kernel  # BNC stem
    for spec in config.d3_blocks:
        r += spec.num_d2 * (d2_receptive_field(spec) - 1)
    r += config.final_kernel - 1
    return (r, r)


def impulse_support(forward_fn, in_channels, grid, dtype=np.float64):
    """Measured nonzero support (freq, time extents) of a network's response
    to a centered unit impulse, relative to its zero-input response.

    The forward callable must map a ComplexTensor to a ComplexTensor and
    hold BN in eval mode so the response is local.
    """
    center = grid // 2
    zero = ComplexTensor.from_arrays(
        np.zeros((in_channels, grid, grid)), np.zeros((in_channels, grid, grid)),
        dtype=dtype,
    )
    base = forward_fn(zero)
    imp = np.zeros((in_channels, grid, grid))
    imp[0, center, center] = 1.0
    hit = forward_fn(ComplexTensor.from_arrays(imp, np.zeros_like(imp), dtype=dtype))
    diff = np.abs(hit.re.data - base.re.data) + np.abs(hit.im.data - base.im.data)
    mask = diff.sum(axis=0) > 1e-12
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        return (0, 0)
    return (int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1))
