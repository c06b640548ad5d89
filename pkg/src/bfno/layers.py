"""Spectral operator layers and the ODE right-hand-side they assemble into.

The state field ``h`` of shape (B, C, H, W) is encoded into a wider
``hidden_channels``-wide representation on a power-of-two padded grid, pushed
through ``num_layers`` branched spectral blocks, and decoded back to a
derivative field of h's shape. Two ablation bodies ride along: a classic
truncated-mode spectral layer and a three-stage 3x3 convolution stack.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import spectral
from .autodiff import Node, Tape
from .tensor import ParamStore, Prng, init_param

VARIANTS = ("bfno", "fno", "conv")
ACTIVATIONS = ("relu", "tanh", "softplus", "identity")

KERNEL_INIT_STD = 0.02
MIX_INIT_NOISE = 0.1


@dataclass
class OdeFunctionConfig:
    """Shape of the learned time-derivative operator."""

    variant: str = "bfno"
    num_layers: int = 2
    branches: int = 2
    hidden_channels: int = 16
    state_channels: int = 1
    augment: int = 0
    activation: str = "relu"
    kernel_sharing: str = "per-channel"  # or "shared"
    fno_modes: int = 8
    conv_channels: int = 0  # 0 -> hidden_channels

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kernel_sharing not in ("per-channel", "shared"):
            raise ValueError(f"unknown kernel_sharing {self.kernel_sharing!r}")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        if self.branches < 1:
            raise ValueError("branches must be >= 1")
        if not (self.hidden_channels >= self.state_channels >= 1):
            raise ValueError("need hidden_channels >= state_channels >= 1")
        if self.augment < 0:
            raise ValueError("augment must be >= 0")


# ------------------------------------------------------------ plain helpers


def dynamic_global_conv(spec, kernels_re, kernels_im, mix):
    """Branched spectral filtering of a half spectrum.

    Every branch multiplies the spectrum elementwise by its own complex
    kernel; the branch outcomes are aggregated per channel by the real
    ``mix`` matrix (C, L). Aggregation commutes with the multiplies, so the
    fused form combines the kernels first and multiplies once.
    """
    kernels_re = np.asarray(kernels_re)
    kernels_im = np.asarray(kernels_im)
    mix = np.asarray(mix)
    if mix.shape[1] != kernels_re.shape[0]:
        raise ValueError(
            f"mix has {mix.shape[1]} branch columns but {kernels_re.shape[0]} kernels given"
        )
    kernel = _combine_kernels_plain(kernels_re, kernels_im, mix)
    return spectral.hermitianize_special_columns(spec * kernel, inplace=True)


def dynamic_global_conv_reference(spec, kernels_re, kernels_im, mix):
    """Unfused reference: explicit branch outcomes, then aggregation."""
    branches = kernels_re.shape[0]
    out = np.zeros_like(np.asarray(spec, dtype=np.complex128))
    for i in range(branches):
        k = kernels_re[i] + 1j * kernels_im[i]
        outcome = spec * k  # broadcast over the batch axis if present
        out = out + mix[:, i][:, None, None] * outcome
    return spectral.hermitianize_special_columns(out)


def _combine_kernels_plain(kr, ki, mix):
    if kr.shape[1] == 1 and mix.shape[0] != 1:  # shared across channels
        re = np.einsum("cl,lhw->chw", mix, kr[:, 0])
        im = np.einsum("cl,lhw->chw", mix, ki[:, 0])
    else:
        re = np.einsum("cl,lchw->chw", mix, kr)
        im = np.einsum("cl,lchw->chw", mix, ki)
    return re + 1j * im


def fno_mode_rows(height: int, modes: int) -> np.ndarray:
    """Row indices of the kept frequencies |k| < modes along a full axis."""
    rows = set(range(min(modes, height)))
    rows |= {(height - k) % height for k in range(1, modes)}
    return np.array(sorted(rows), dtype=np.int64)


def fno_mode_geometry(pad_h: int, pad_w: int, modes: int):
    half_w = pad_w // 2 + 1
    max_modes = min(pad_h // 2 + 1, half_w)
    if modes < 1 or modes > max_modes:
        raise ValueError(
            f"fno_modes={modes} out of range for a {pad_h}x{pad_w} grid (max {max_modes})"
        )
    rows = fno_mode_rows(pad_h, modes)
    cols = min(modes, half_w)
    return rows, cols


# ------------------------------------------------------------ graph builders


def scatter_modes(re: Node, im: Node, rows: np.ndarray, cols: int, pad_h: int, half_w: int) -> Node:
    """Place a compact (C, len(rows), cols) kernel into a zero full spectrum."""
    tape = re.tape
    c = re.value.shape[0]
    out = np.zeros((c, pad_h, half_w), dtype=np.complex128)
    out[:, rows[:, None], np.arange(cols)] = re.value + 1j * im.value

    def vjp(g):
        sl = g[:, rows[:, None], np.arange(cols)]
        return sl.real.copy(), sl.imag.copy()

    return tape.emit(out, (re, im), vjp)


class OdeFunction:
    """Learned map (h, t, params) -> dh/dt over a fixed state geometry."""

    def __init__(self, config: OdeFunctionConfig, state_shape: tuple[int, int, int]):
        config.validate()
        self.config = config
        self.channels, self.height, self.width = state_shape
        if self.channels != config.state_channels:
            raise ValueError(
                f"state has {self.channels} channels, config expects {config.state_channels}"
            )
        self.pad_h = spectral.next_power_of_two(self.height)
        self.pad_w = spectral.next_power_of_two(self.width)
        self.half_w = self.pad_w // 2 + 1
        if config.variant == "fno":
            self.fno_rows, self.fno_cols = fno_mode_geometry(
                self.pad_h, self.pad_w, config.fno_modes
            )

    # -------------------------------------------------- parameters

    def build_params(self, store: ParamStore, rng: Prng):
        cfg = self.config
        if cfg.variant == "conv":
            cc = cfg.conv_channels or cfg.hidden_channels
            c_in = self.channels + 1  # time rides along as a channel
            store.add("conv0.weight", init_param((cc, c_in, 3, 3), c_in * 9, rng))
            store.add("conv0.bias", init_param((cc,), c_in * 9, rng))
            store.add("conv1.weight", init_param((cc, cc, 3, 3), cc * 9, rng))
            store.add("conv1.bias", init_param((cc,), cc * 9, rng))
            store.add("conv2.weight", init_param((self.channels, cc, 3, 3), cc * 9, rng))
            store.add("conv2.bias", init_param((self.channels,), cc * 9, rng))
            return

        c_in = self.channels + 1
        hid = cfg.hidden_channels
        store.add("encoder.weight", init_param((hid, c_in), c_in, rng))
        store.add("encoder.bias", init_param((hid,), c_in, rng))
        for i in range(cfg.num_layers):
            if cfg.variant == "bfno":
                kc = 1 if cfg.kernel_sharing == "shared" else hid
                shape = (cfg.branches, kc, self.pad_h, self.half_w)
                kr = rng.normal(shape, std=KERNEL_INIT_STD)
                ki = rng.normal(shape, std=KERNEL_INIT_STD)
                # identity-like start: unit DC gain, everything else near zero
                kr[:, :, 0, 0] = 1.0
                ki[:, :, 0, 0] = 0.0
                store.add(f"layer{i}.kernels_re", kr)
                store.add(f"layer{i}.kernels_im", ki)
                mix = 1.0 / cfg.branches + MIX_INIT_NOISE * init_param(
                    (hid, cfg.branches), cfg.branches, rng
                )
                store.add(f"layer{i}.mix", mix)
            else:  # fno
                shape = (hid, len(self.fno_rows), self.fno_cols)
                kr = rng.normal(shape, std=KERNEL_INIT_STD)
                ki = rng.normal(shape, std=KERNEL_INIT_STD)
                kr[:, 0, 0] = 1.0
                ki[:, 0, 0] = 0.0
                store.add(f"layer{i}.kernel_re", kr)
                store.add(f"layer{i}.kernel_im", ki)
            store.add(f"layer{i}.weight", init_param((hid, hid), hid, rng))
        store.add("decoder.weight", init_param((self.channels, hid), hid, rng))
        store.add("decoder.bias", init_param((self.channels,), hid, rng))

    def param_count(self) -> int:
        store = ParamStore()
        self.build_params(store, Prng(0))
        return store.total_size

    # -------------------------------------------------- graph pieces

    def encode_graph(self, pnodes, h: Node, t: float) -> Node:
        x = ad.concat_time(h, t)
        x = ad.pad_spatial(x, self.pad_h, self.pad_w)
        x = ad.channel_map(x, pnodes["encoder.weight"])
        return ad.bias_channel(x, pnodes["encoder.bias"])

    def bfno_layer_graph(self, pnodes, i: int, g: Node, act: str) -> Node:
        spec = ad.rfft2(g)
        kernel = ad.combine_branch_kernels(
            pnodes[f"layer{i}.kernels_re"],
            pnodes[f"layer{i}.kernels_im"],
            pnodes[f"layer{i}.mix"],
        )
        filtered = ad.spectral_filter(spec, kernel)
        spatial = ad.irfft2(filtered, self.pad_h, self.pad_w)
        wpath = ad.channel_map(g, pnodes[f"layer{i}.weight"])
        return ad.act_add(spatial, wpath, act)

    def fno_layer_graph(self, pnodes, i: int, g: Node, act: str) -> Node:
        spec = ad.rfft2(g)
        kernel = scatter_modes(
            pnodes[f"layer{i}.kernel_re"],
            pnodes[f"layer{i}.kernel_im"],
            self.fno_rows,
            self.fno_cols,
            self.pad_h,
            self.half_w,
        )
        filtered = ad.spectral_filter(spec, kernel)
        spatial = ad.irfft2(filtered, self.pad_h, self.pad_w)
        wpath = ad.channel_map(g, pnodes[f"layer{i}.weight"])
        return ad.act_add(spatial, wpath, act)

    def decode_graph(self, pnodes, g: Node) -> Node:
        x = ad.channel_map(g, pnodes["decoder.weight"])
        x = ad.bias_channel(x, pnodes["decoder.bias"])
        return ad.crop_spatial(x, self.height, self.width)

    def conv_body_graph(self, pnodes, h: Node, t: float) -> Node:
        act = self.config.activation
        x = ad.concat_time(h, t)
        x = ad.conv3x3(x, pnodes["conv0.weight"])
        x = ad.activation(ad.bias_channel(x, pnodes["conv0.bias"]), act)
        x = ad.conv3x3(x, pnodes["conv1.weight"])
        x = ad.activation(ad.bias_channel(x, pnodes["conv1.bias"]), act)
        x = ad.conv3x3(x, pnodes["conv2.weight"])
        return ad.bias_channel(x, pnodes["conv2.bias"])

    def rhs_graph(self, pnodes, h: Node, t: float) -> Node:
        cfg = self.config
        if cfg.variant == "conv":
            return self.conv_body_graph(pnodes, h, t)
        g = self.encode_graph(pnodes, h, t)
        layer = self.bfno_layer_graph if cfg.variant == "bfno" else self.fno_layer_graph
        for i in range(cfg.num_layers):
            g = layer(pnodes, i, g, cfg.activation)
        return self.decode_graph(pnodes, g)

    # -------------------------------------------------- plain evaluation

    def bind(self, store: ParamStore, tape: Tape) -> dict:
        return {name: tape.leaf(value) for name, value in store.items()}

    def rhs(self, store: ParamStore, h: np.ndarray, t: float) -> np.ndarray:
        """Derivative field for a plain array state (no gradient recording)."""
        tape = Tape(recording=False)
        pnodes = self.bind(store, tape)
        return self.rhs_graph(pnodes, tape.leaf(h), t).value


# ------------------------------------------------------------ array wrappers
#
# thin non-recording entry points used by tests and oracles


def _run_plain(build):
    tape = Tape(recording=False)
    return build(tape)


def encode(h: np.ndarray, t: float, weight: np.ndarray, bias: np.ndarray,
           pad_h: int, pad_w: int) -> np.ndarray:
    def build(tape):
        x = ad.concat_time(tape.leaf(h), t)
        x = ad.pad_spatial(x, pad_h, pad_w)
        x = ad.channel_map(x, tape.leaf(weight))
        return ad.bias_channel(x, tape.leaf(bias)).value

    return _run_plain(build)


def decode(g: np.ndarray, weight: np.ndarray, bias: np.ndarray,
           height: int, width: int) -> np.ndarray:
    def build(tape):
        x = ad.channel_map(tape.leaf(g), tape.leaf(weight))
        x = ad.bias_channel(x, tape.leaf(bias))
        return ad.crop_spatial(x, height, width).value

    return _run_plain(build)


def bfno_layer(g: np.ndarray, kernels_re, kernels_im, mix, weight,
               activation: str = "relu") -> np.ndarray:
    """One branched spectral block on a plain (B, C, H, W) array."""
    b, c, h, w = g.shape
    spec = spectral.rfft_2d(g)
    filtered = dynamic_global_conv(spec, kernels_re, kernels_im, mix)
    spatial = spectral.irfft_2d(filtered, h, w)
    gr = g.reshape(b, c, h * w)
    wpath = np.matmul(np.asarray(weight), gr).reshape(b, -1, h, w)
    return ad._ACT_FORWARD[activation](spatial + wpath)


def fno_layer(g: np.ndarray, kernel_re, kernel_im, weight, modes: int,
              activation: str = "relu") -> np.ndarray:
    """Truncated-mode spectral block; kernel arrays are compact (C, rows, cols)."""
    b, c, h, w = g.shape
    rows, cols = fno_mode_geometry(h, w, modes)
    if kernel_re.shape[1] != len(rows) or kernel_re.shape[2] != cols:
        raise ValueError(
            f"kernel shape {kernel_re.shape} does not match {len(rows)}x{cols} kept modes"
        )
    full = np.zeros((c, h, w // 2 + 1), dtype=np.complex128)
    full[:, rows[:, None], np.arange(cols)] = kernel_re + 1j * kernel_im
    spec = spectral.rfft_2d(g)
    filtered = spectral.hermitianize_special_columns(spec * full)
    spatial = spectral.irfft_2d(filtered, h, w)
    gr = g.reshape(b, c, h * w)
    wpath = np.matmul(np.asarray(weight), gr).reshape(b, -1, h, w)
    return ad._ACT_FORWARD[activation](spatial + wpath)


def conv_odefunc(h: np.ndarray, t: float, store: ParamStore,
                 activation: str = "relu") -> np.ndarray:
    cfg = OdeFunctionConfig(
        variant="conv",
        state_channels=h.shape[1],
        hidden_channels=max(h.shape[1], 1),
        activation=activation,
    )
    func = OdeFunction(cfg, (h.shape[1], h.shape[2], h.shape[3]))
    return func.rhs(store, h, t)


def ode_function_eval(h: np.ndarray, t: float, store: ParamStore,
                      config: OdeFunctionConfig) -> np.ndarray:
    func = OdeFunction(config, (h.shape[1], h.shape[2], h.shape[3]))
    return func.rhs(store, h, t)
