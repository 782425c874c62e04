"""Layer primitives, the compact layer-spec notation and the predictor networks.

Activations are laid out as ``[batch, time, channels]`` (a missing batch axis
is accepted by every layer).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

F0_SPEC = "C:3x150, C:3x300x2, C:5x150, C:3x120, C:3x600x5, C:1x120, C:3x500x5, C:1x100, C3:50, L:2"
VTF_SPEC = "C:3x400, C:1x600, C:1x400, C:1x400, C:1x160"
# desk-scale F0 net with the same 2*5*5*2 upsampling chain
TOY_F0_SPEC = "C:3x64, C:3x128x2, C:3x160x5, C:3x80x5, C:1x32, C:3x16, L:2"
TOY_VTF_SPEC = "C:3x64, C:1x96, C:1x160"


@dataclass(frozen=True)
class LayerSpec:
    kind: str           # "conv" or "linear_upsample"
    kernel: int = 1
    channels: int = 0
    upsample: int = 1

    @property
    def out_channels(self) -> int:
        return self.channels // self.upsample if self.kind == "conv" else 0

    def __str__(self) -> str:
        if self.kind == "linear_upsample":
            return f"L:{self.upsample}"
        tail = f"x{self.upsample}" if self.upsample != 1 else ""
        return f"C:{self.kernel}x{self.channels}{tail}"


_CONV = re.compile(r"^C:(\d+)x(\d+)(?:x(\d+))?$")
_CONV_ALIAS = re.compile(r"^C(\d+):(\d+)$")
_LINEAR = re.compile(r"^L:(\d+)$")


def parse_spec(spec: str) -> list[LayerSpec]:
    """Parse ``"C:3x240x2, L:2"``-style layer strings (``C3:50`` reads as ``C:3x50``)."""
    layers = []
    for raw in spec.split(","):
        tok = raw.strip().replace(" ", "")
        if not tok:
            raise ValueError(f"empty token in {spec!r}")
        if m := _CONV.match(tok):
            k, c, u = int(m[1]), int(m[2]), int(m[3] or 1)
        elif m := _CONV_ALIAS.match(tok):
            k, c, u = int(m[1]), int(m[2]), 1
        elif m := _LINEAR.match(tok):
            u = int(m[1])
            if u < 1:
                raise ValueError(f"bad upsampling factor in {tok!r}")
            layers.append(LayerSpec("linear_upsample", upsample=u))
            continue
        else:
            raise ValueError(f"malformed layer token {tok!r}")
        if k < 1 or k % 2 == 0 or c < 1 or u < 1:
            raise ValueError(f"invalid conv parameters in {tok!r} (kernel must be odd)")
        if c % u:
            raise ValueError(f"{tok!r}: {c} channels not divisible by upsampling {u}")
        layers.append(LayerSpec("conv", k, c, u))
    return layers


def total_upsampling(layers: list[LayerSpec]) -> int:
    return int(np.prod([layer.upsample for layer in layers]))


# primitives ---------------------------------------------------------------------

def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return x.reshape((1,) + x.shape), True
    if x.ndim != 3:
        raise ValueError("expected [time, channels] or [batch, time, channels]")
    return x, False


def conv1d(x, weights, bias=None, dilation: int = 1) -> Tensor:
    """Same-padded 1-D cross-correlation; ``weights`` is ``[kernel, ch_in, ch_out]``."""
    x, squeeze = _batched(ad.as_tensor(x))
    weights = ad.as_tensor(weights)
    k, cin, cout = weights.shape
    if k % 2 == 0:
        raise ValueError("kernel size must be odd")
    if x.shape[2] != cin:
        raise ValueError(f"input has {x.shape[2]} channels, weights expect {cin}")
    if bias is not None and ad.as_tensor(bias).shape != (cout,):
        raise ValueError("bias must be [ch_out]")
    xd, wd = x.data, weights.data
    b, t, _ = xd.shape
    pad = dilation * (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (pad, pad), (0, 0)))
    cols = np.stack([xp[:, j * dilation:j * dilation + t] for j in range(k)], axis=2)
    cols2 = cols.reshape(b * t, k * cin)
    out = (cols2 @ wd.reshape(k * cin, cout)).reshape(b, t, cout)

    def vjp(g):
        g2 = g.reshape(b * t, cout)
        gw = (cols2.T @ g2).reshape(k, cin, cout)
        gcols = (g2 @ wd.reshape(k * cin, cout).T).reshape(b, t, k, cin)
        gxp = np.zeros_like(xp, dtype=np.result_type(g, xp))
        for j in range(k):
            gxp[:, j * dilation:j * dilation + t] += gcols[:, :, j]
        return gxp[:, pad:pad + t], gw

    y = ad.record_op("conv1d", out, (x, weights), vjp)
    if bias is not None:
        y = y + bias
    return y.reshape(y.shape[1:]) if squeeze else y


def reshape_upsample(x, factor: int) -> Tensor:
    """Fold channel groups into time: ``[T, C] -> [T * factor, C / factor]``."""
    x = ad.as_tensor(x)
    t, c = x.shape[-2:]
    if factor < 1 or c % factor:
        raise ValueError(f"{c} channels not divisible by factor {factor}")
    return x.reshape(x.shape[:-2] + (t * factor, c // factor))


def reshape_downsample(x, factor: int) -> Tensor:
    """Inverse of :func:`reshape_upsample`."""
    x = ad.as_tensor(x)
    t, c = x.shape[-2:]
    if t % factor:
        raise ValueError(f"{t} frames not divisible by factor {factor}")
    return x.reshape(x.shape[:-2] + (t // factor, c * factor))


def linear_upsample(x, factor: int) -> Tensor:
    """Piecewise-linear interpolation along time, holding the last frame.

    Equivalent to a transposed convolution with the fixed triangular kernel
    ``1 - |j| / factor``; the weights are not trainable.
    """
    x = ad.as_tensor(x)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if factor == 1:
        return x
    xd = x.data
    t = xd.shape[-2]
    frac = (np.arange(factor) / factor)[:, None]
    nxt = np.concatenate([xd[..., 1:, :], xd[..., -1:, :]], axis=-2)
    lead = xd.shape[:-2]
    out = (xd[..., :, None, :] * (1 - frac) + nxt[..., :, None, :] * frac)
    out = out.reshape(lead + (t * factor, xd.shape[-1]))

    def vjp(g):
        g = g.reshape(lead + (t, factor, xd.shape[-1]))
        gx = (g * (1 - frac)).sum(-2)
        gn = (g * frac).sum(-2)
        gx[..., 1:, :] += gn[..., :-1, :]
        gx[..., -1, :] += gn[..., -1, :]
        return (gx,)

    return ad.record_op("linear_upsample", out, (x,), vjp)


def resample_linear(x, n_out: int, ratio: float) -> Tensor:
    """Sample 1-D ``x`` at positions ``arange(n_out) * ratio`` by linear interpolation."""
    x = ad.as_tensor(x)
    pos = np.minimum(np.arange(n_out) * ratio, x.shape[0] - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, x.shape[0] - 1)
    a = pos - i0
    return ad.gather(x, i0) * (1 - a) + ad.gather(x, i1) * a


def gated_block(x, params: dict, dilation: int = 1, cond=None):
    """WaveNet layer ``tanh(conv_f) * sigmoid(conv_g)``; returns ``(residual, skip)``.

    ``params`` holds ``filter_w/filter_b``, ``gate_w/gate_b`` (kernel 3),
    ``res_w/res_b`` and ``skip_w/skip_b`` (kernel 1) and optionally
    ``cond_f/cond_g`` 1x1 weights applied to ``cond``.
    """
    x = ad.as_tensor(x)
    f = conv1d(x, params["filter_w"], params.get("filter_b"), dilation)
    g = conv1d(x, params["gate_w"], params.get("gate_b"), dilation)
    if cond is not None:
        f = f + conv1d(cond, params["cond_f"])
        g = g + conv1d(cond, params["cond_g"])
    z = ad.tanh(f) * ad.sigmoid(g)
    residual = x + conv1d(z, params["res_w"], params.get("res_b"))
    skip = conv1d(z, params["skip_w"], params.get("skip_b"))
    return residual, skip


def receptive_field(kernel: int, dilations) -> int:
    return 1 + sum((kernel - 1) * d for d in dilations)


# networks -----------------------------------------------------------------------

def _init(rng: np.random.Generator, shape, fan_in: int, gain: float) -> np.ndarray:
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Network:
    """Parameter container shared by the predictor networks.

    Parameters are stored in insertion order; ``forward`` is defined by the
    subclasses.
    """

    spec: str
    params: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    kind: str = "base"

    @property
    def dtype(self) -> str:
        return self.config.get("dtype", "float32")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def with_params(self, arrays: dict) -> "Network":
        new = type(self)(self.spec, {}, dict(self.config), self.kind)
        for name, arr in arrays.items():
            new.params[name] = Tensor(arr, requires_grad=True, dtype=np.dtype(self.dtype))
        return new

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def __call__(self, *args, **kw):
        return self.forward(*args, **kw)

    def forward(self, *args, **kw):
        raise NotImplementedError


def _conv_stack(spec_layers, in_channels, rng, dtype, prefix="layer", last_gain=1.0):
    params = {}
    cin = in_channels
    conv_ids = [i for i, l in enumerate(spec_layers) if l.kind == "conv"]
    for i, layer in enumerate(spec_layers):
        if layer.kind != "conv":
            continue
        gain = last_gain if i == conv_ids[-1] else np.sqrt(2.0)
        fan_in = layer.kernel * cin
        params[f"{prefix}{i}.w"] = Tensor(_init(rng, (layer.kernel, cin, layer.channels), fan_in, gain),
                                          requires_grad=True, dtype=dtype)
        params[f"{prefix}{i}.b"] = Tensor(np.zeros(layer.channels), requires_grad=True, dtype=dtype)
        cin = layer.out_channels
    return params, cin


class F0Net(Network):
    """Mel frames ``[.., frames, 80]`` to F0 in Hz at ``frames * upsampling`` points."""

    def forward(self, mel) -> Tensor:
        x = ad.as_tensor(mel)
        layers = parse_spec(self.spec)
        last_conv = max(i for i, l in enumerate(layers) if l.kind == "conv")
        project = self.config.get("project_output", False)
        for i, layer in enumerate(layers):
            if layer.kind == "linear_upsample":
                x = linear_upsample(x, layer.upsample)
                continue
            x = conv1d(x, self.params[f"layer{i}.w"], self.params[f"layer{i}.b"])
            x = ad.sigmoid(x) if (i == last_conv and not project) else ad.relu(x)
            x = reshape_upsample(x, layer.upsample)
            if i == last_conv and project:
                x = ad.sigmoid(conv1d(x, self.params["out.w"], self.params["out.b"]))
        lo, hi = self.config["f0_min"], self.config["f0_max"]
        x = x * (hi - lo) + lo
        return x.reshape(x.shape[:-1])


def build_f0_net(spec: str = F0_SPEC, f0_min: float = 45.0, f0_max: float = 1400.0,
                 in_channels: int = 80, seed: int = 0, dtype: str = "float32",
                 project_output: bool | None = None) -> F0Net:
    """Relu convolutions, a logistic output scaled into ``[f0_min, f0_max]``.

    When the last convolution folds to more than one channel (as in the
    published spec, which ends in 50 channels) a 1x1 projection to a single
    channel carries the sigmoid; ``project_output=False`` forbids this.
    """
    layers = parse_spec(spec)
    convs = [l for l in layers if l.kind == "conv"]
    if not convs:
        raise ValueError("F0 spec needs at least one convolution")
    needs = convs[-1].out_channels != 1
    if project_output is None:
        project_output = needs
    if needs and not project_output:
        raise ValueError(f"F0 spec folds to {convs[-1].out_channels} output channels, expected 1")
    rng = np.random.default_rng(seed)
    params, cout = _conv_stack(layers, in_channels, rng, np.dtype(dtype),
                               last_gain=np.sqrt(2.0) if project_output else 1.0)
    if project_output:
        params["out.w"] = Tensor(_init(rng, (1, cout, 1), cout, 1.0), requires_grad=True, dtype=dtype)
        params["out.b"] = Tensor(np.zeros(1), requires_grad=True, dtype=dtype)
    config = dict(f0_min=f0_min, f0_max=f0_max, in_channels=in_channels, seed=seed,
                  dtype=dtype, project_output=bool(project_output),
                  upsampling=total_upsampling(layers))
    return F0Net(spec, params, config, "f0")


class VTFNet(Network):
    """Mel frames to cepstral frames; no activation after the last layer."""

    def forward(self, mel) -> Tensor:
        x = ad.as_tensor(mel)
        layers = parse_spec(self.spec)
        for i, layer in enumerate(layers):
            x = conv1d(x, self.params[f"layer{i}.w"], self.params[f"layer{i}.b"])
            if i < len(layers) - 1:
                x = ad.relu(x)
        return x


def build_vtf_net(spec: str = VTF_SPEC, in_channels: int = 80, seed: int = 0,
                  dtype: str = "float32") -> VTFNet:
    layers = parse_spec(spec)
    if any(l.kind != "conv" or l.upsample != 1 for l in layers):
        raise ValueError("VTF spec must be plain convolutions without upsampling")
    params, _ = _conv_stack(layers, in_channels, np.random.default_rng(seed), np.dtype(dtype))
    config = dict(in_channels=in_channels, seed=seed, dtype=dtype)
    return VTFNet(spec, params, config, "vtf")


class ToyWaveNet(Network):
    """Pulse-shaping WaveNet at configurable (toy) width, followed by the PostNet."""

    def forward(self, x, cond=None) -> Tensor:
        c = self.config
        h = conv1d(x, self.params["in.w"], self.params["in.b"])
        skips = None
        for i, d in enumerate(c["dilations"]):
            block = {k.split(".", 1)[1]: v for k, v in self.params.items() if k.startswith(f"block{i}.")}
            h, s = gated_block(h, block, d, cond if c["cond_channels"] else None)
            skips = s if skips is None else skips + s
        out = ad.relu(skips)
        return conv1d(out, self.params["post.w"], self.params["post.b"])


def build_wavenet(in_channels: int = 30, channels: int = 16, out_channels: int = 15,
                  cond_channels: int = 0, blocks: int = 2, layers_per_block: int = 5,
                  seed: int = 0, dtype: str = "float32") -> ToyWaveNet:
    rng = np.random.default_rng(seed)
    p = {}

    def add(name, shape, fan_in, gain=1.0):
        p[name] = Tensor(_init(rng, shape, fan_in, gain), requires_grad=True, dtype=dtype)

    def zeros(name, n):
        p[name] = Tensor(np.zeros(n), requires_grad=True, dtype=dtype)

    add("in.w", (1, in_channels, channels), in_channels)
    zeros("in.b", channels)
    dilations = [2 ** j for _ in range(blocks) for j in range(layers_per_block)]
    for i in range(len(dilations)):
        for gate in ("filter", "gate"):
            add(f"block{i}.{gate}_w", (3, channels, channels), 3 * channels)
            zeros(f"block{i}.{gate}_b", channels)
        if cond_channels:
            add(f"block{i}.cond_f", (1, cond_channels, channels), cond_channels)
            add(f"block{i}.cond_g", (1, cond_channels, channels), cond_channels)
        add(f"block{i}.res_w", (1, channels, channels), channels)
        zeros(f"block{i}.res_b", channels)
        add(f"block{i}.skip_w", (1, channels, channels), channels)
        zeros(f"block{i}.skip_b", channels)
    add("post.w", (1, channels, out_channels), channels)
    zeros("post.b", out_channels)
    config = dict(in_channels=in_channels, channels=channels, out_channels=out_channels,
                  cond_channels=cond_channels, dilations=dilations, seed=seed, dtype=dtype)
    return ToyWaveNet(f"wavenet:{blocks}x{layers_per_block}", p, config, "wavenet")


_KINDS = {"f0": F0Net, "vtf": VTFNet, "wavenet": ToyWaveNet}


# checkpoints --------------------------------------------------------------------

def save_checkpoint(net: Network, path, extra: dict | None = None) -> Path:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian raw parameters).

    Runtime (float32) networks are stored as f4; float64 networks as f8 so that
    reloads are bit-exact in either mode.
    """
    path = Path(path)
    blob_dtype = "<f8" if net.dtype == "float64" else "<f4"
    entries, offset, chunks = [], 0, []
    for name, t in net.params.items():
        arr = np.ascontiguousarray(t.data, dtype=blob_dtype)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
        chunks.append(arr.tobytes())
    manifest = {"kind": net.kind, "spec": net.spec, "config": net.config,
                "blob_dtype": blob_dtype, "params": entries, "extra": extra or {}}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    path.with_suffix(".bin").write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path) -> tuple[Network, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    blob = path.with_suffix(".bin").read_bytes()
    dt = np.dtype(manifest["blob_dtype"])
    cls = _KINDS[manifest["kind"]]
    net = cls(manifest["spec"], {}, manifest["config"], manifest["kind"])
    for e in manifest["params"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(blob, dtype=dt, count=n, offset=e["offset"]).reshape(e["shape"])
        net.params[e["name"]] = Tensor(arr, requires_grad=True, dtype=np.dtype(net.dtype))
    return net, manifest.get("extra", {})
