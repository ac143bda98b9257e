"""Triple-cue descriptor fusion: texture, surface normal and semantic cues.

Forward pass only; every weight arrives as data (see :class:`UtcfParams`).
Stages:

1. project the normal and semantic cues and recalibrate each cue's channels
   with its own squeeze-and-excitation MLP;
2. a per-pixel gate, computed from all three calibrated cues, blends texture
   and normal features;
3. a scaled semantic increment is added, passed through an output projection,
   summed with the initial descriptor and rescaled by the attention map.
"""
from dataclasses import dataclass, fields

import numpy as np

from gess import gtf
from gess.numerics import BatchNorm, ConvSpec, ShapeError, conv2d, global_avg_pool, relu, sigmoid

SEMANTIC_CHANNELS = 48
GATE_HIDDEN = 128
DEFAULT_CHANNELS = 128
DEFAULT_REDUCTION = 4
DEFAULT_MU = 0.1


@dataclass
class ChannelMLP:
    """Two affine layers with a ReLU between them: ``C -> C/r -> C``."""

    w1: np.ndarray  # [hidden, C]
    b1: np.ndarray
    w2: np.ndarray  # [C, hidden]
    b2: np.ndarray

    def __post_init__(self):
        hidden, c = np.shape(self.w1)
        if np.shape(self.b1) != (hidden,) or np.shape(self.w2) != (c, hidden) or np.shape(self.b2) != (c,):
            raise ShapeError("channel MLP layout", f"w1[{hidden},{c}] b1[{hidden}] w2[{c},{hidden}] b2[{c}]",
                             (np.shape(self.b1), np.shape(self.w2), np.shape(self.b2)))

    @property
    def channels(self):
        return np.shape(self.w1)[1]

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.channels,):
            raise ShapeError("channel count", self.channels, v.shape[0] if v.ndim == 1 else v.shape, "ChannelMLP")
        h = np.maximum(np.asarray(self.w1, np.float64) @ v + self.b1, 0.0)
        return np.asarray(self.w2, np.float64) @ h + self.b2


@dataclass
class GateNet:
    """Two stacked 1x1 convolutions with a ReLU between them, producing one channel."""

    first: ConvSpec
    second: ConvSpec

    def __call__(self, x):
        return conv2d(relu(conv2d(x, self.first)), self.second)


@dataclass
class CueBundle:
    texture: np.ndarray  # [C, H, W], also the initial descriptor map
    normal_raw: np.ndarray  # [3, H, W]
    semantic_raw: np.ndarray  # [Cs0, H, W]
    attention: np.ndarray  # [H, W], values in [0, 1]

    def __post_init__(self):
        self.texture = np.asarray(self.texture, dtype=np.float64)
        self.normal_raw = np.asarray(self.normal_raw, dtype=np.float64)
        self.semantic_raw = np.asarray(self.semantic_raw, dtype=np.float64)
        self.attention = np.asarray(self.attention, dtype=np.float64)
        hw = self.texture.shape[1:]
        for name in ("normal_raw", "semantic_raw"):
            t = getattr(self, name)
            if t.ndim != 3 or t.shape[1:] != hw:
                raise ShapeError(f"{name} spatial shape", hw, t.shape, "CueBundle")
        if self.normal_raw.shape[0] != 3:
            raise ShapeError("normal_raw channel axis", 3, self.normal_raw.shape[0], "CueBundle")
        if self.attention.shape != hw:
            raise ShapeError("attention shape", hw, self.attention.shape, "CueBundle")
        if self.attention.min() < 0 or self.attention.max() > 1:
            raise ValueError("attention map must lie in [0, 1]")


@dataclass
class UtcfParams:
    normal_proj: ConvSpec  # 1x1, 3 -> C
    normal_bn: BatchNorm
    sem_conv1: ConvSpec  # 3x3, Cs0 -> hidden
    sem_conv2: ConvSpec  # 3x3, hidden -> 48
    mlp_t: ChannelMLP
    mlp_n: ChannelMLP
    mlp_s: ChannelMLP
    gate: GateNet  # 1x1 (2C + 48 -> 128), 1x1 (128 -> 1)
    sem_increment: ConvSpec  # 1x1, 48 -> C
    out_proj: ConvSpec  # 1x1, C -> C
    mu: float = DEFAULT_MU

    def __post_init__(self):
        c = self.normal_proj.out_channels
        checks = [
            ("normal projection input", 3, self.normal_proj.in_channels),
            ("batchnorm channels", c, np.shape(self.normal_bn.mean)[0]),
            ("semantic layer link", self.sem_conv1.out_channels, self.sem_conv2.in_channels),
            ("texture MLP channels", c, self.mlp_t.channels),
            ("normal MLP channels", c, self.mlp_n.channels),
            ("semantic MLP channels", self.sem_conv2.out_channels, self.mlp_s.channels),
            ("gate input channels", 2 * c + self.sem_conv2.out_channels, self.gate.first.in_channels),
            ("gate link", self.gate.first.out_channels, self.gate.second.in_channels),
            ("gate output channels", 1, self.gate.second.out_channels),
            ("semantic increment input", self.sem_conv2.out_channels, self.sem_increment.in_channels),
            ("semantic increment output", c, self.sem_increment.out_channels),
            ("output projection", (c, c), (self.out_proj.in_channels, self.out_proj.out_channels)),
        ]
        for axis, want, got in checks:
            if want != got:
                raise ShapeError(axis, want, got, "UtcfParams")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")

    @property
    def channels(self):
        return self.normal_proj.out_channels

    @property
    def semantic_in(self):
        return self.sem_conv1.in_channels

    @classmethod
    def random(cls, channels=DEFAULT_CHANNELS, semantic_in=SEMANTIC_CHANNELS, reduction=DEFAULT_REDUCTION,
               semantic_hidden=SEMANTIC_CHANNELS, seed=0, mu=DEFAULT_MU):
        """Seeded init, each weight uniform in ``[-b, b]`` with ``b = 1/sqrt(fan_in)``."""
        rng = np.random.default_rng(seed)

        def conv(c_out, c_in, k=1):
            b = 1.0 / np.sqrt(c_in * k * k)
            return ConvSpec(rng.uniform(-b, b, (c_out, c_in, k, k)).astype(np.float32),
                            rng.uniform(-b, b, c_out).astype(np.float32))

        def mlp(c):
            hidden = max(1, c // reduction)
            b1, b2 = 1.0 / np.sqrt(c), 1.0 / np.sqrt(hidden)
            return ChannelMLP(rng.uniform(-b1, b1, (hidden, c)).astype(np.float32),
                              rng.uniform(-b1, b1, hidden).astype(np.float32),
                              rng.uniform(-b2, b2, (c, hidden)).astype(np.float32),
                              rng.uniform(-b2, b2, c).astype(np.float32))

        c, s = channels, SEMANTIC_CHANNELS
        bn = BatchNorm(rng.uniform(-0.1, 0.1, c).astype(np.float32), rng.uniform(0.5, 1.5, c).astype(np.float32),
                       rng.uniform(0.5, 1.5, c).astype(np.float32), rng.uniform(-0.1, 0.1, c).astype(np.float32))
        return cls(normal_proj=conv(c, 3), normal_bn=bn,
                   sem_conv1=conv(semantic_hidden, semantic_in, 3), sem_conv2=conv(s, semantic_hidden, 3),
                   mlp_t=mlp(c), mlp_n=mlp(c), mlp_s=mlp(s),
                   gate=GateNet(conv(GATE_HIDDEN, 2 * c + s), conv(1, GATE_HIDDEN)),
                   sem_increment=conv(c, s), out_proj=conv(c, c), mu=mu)

    @classmethod
    def zeros(cls, channels=DEFAULT_CHANNELS, semantic_in=SEMANTIC_CHANNELS, reduction=DEFAULT_REDUCTION,
              semantic_hidden=SEMANTIC_CHANNELS, mu=DEFAULT_MU):
        """Every learned weight zero; batch norm is the identity."""
        def mlp(c):
            hidden = max(1, c // reduction)
            z = np.zeros
            return ChannelMLP(z((hidden, c)), z(hidden), z((c, hidden)), z(c))

        c, s = channels, SEMANTIC_CHANNELS
        return cls(normal_proj=ConvSpec.zeros(c, 3), normal_bn=BatchNorm.identity(c),
                   sem_conv1=ConvSpec.zeros(semantic_hidden, semantic_in, 3),
                   sem_conv2=ConvSpec.zeros(s, semantic_hidden, 3),
                   mlp_t=mlp(c), mlp_n=mlp(c), mlp_s=mlp(s),
                   gate=GateNet(ConvSpec.zeros(GATE_HIDDEN, 2 * c + s), ConvSpec.zeros(1, GATE_HIDDEN)),
                   sem_increment=ConvSpec.zeros(c, s), out_proj=ConvSpec.zeros(c, c), mu=mu)

    def tensors(self):
        """Flatten into ``{name: (array, role)}`` for :func:`gess.gtf.write_bundle`."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, GateNet):
                for sub in ("first", "second"):
                    conv = getattr(value, sub)
                    out[f"gate.{sub}.kernel"] = (conv.kernel, f"gate {sub} 1x1 kernel")
                    out[f"gate.{sub}.bias"] = (conv.bias, f"gate {sub} 1x1 bias")
            elif isinstance(value, ConvSpec):
                out[f"{f.name}.kernel"] = (value.kernel, f"{f.name} convolution kernel")
                out[f"{f.name}.bias"] = (value.bias, f"{f.name} convolution bias")
            elif isinstance(value, (BatchNorm, ChannelMLP)):
                for sub in fields(value):
                    if sub.name == "eps":
                        continue
                    out[f"{f.name}.{sub.name}"] = (np.asarray(getattr(value, sub.name)), f"{f.name} {sub.name}")
        return out

    def save(self, directory, extra=None):
        tensors = self.tensors()
        tensors.update(extra or {})
        gtf.write_bundle(directory, tensors, {"mu": self.mu})

    @classmethod
    def from_tensors(cls, t, mu=DEFAULT_MU):
        def conv(name):
            return ConvSpec(t[f"{name}.kernel"], t[f"{name}.bias"])

        def mlp(name):
            return ChannelMLP(*(t[f"{name}.{k}"] for k in ("w1", "b1", "w2", "b2")))

        return cls(normal_proj=conv("normal_proj"),
                   normal_bn=BatchNorm(*(t[f"normal_bn.{k}"] for k in ("mean", "var", "gamma", "beta"))),
                   sem_conv1=conv("sem_conv1"), sem_conv2=conv("sem_conv2"),
                   mlp_t=mlp("mlp_t"), mlp_n=mlp("mlp_n"), mlp_s=mlp("mlp_s"),
                   gate=GateNet(conv("gate.first"), conv("gate.second")),
                   sem_increment=conv("sem_increment"), out_proj=conv("out_proj"), mu=float(mu))

    @classmethod
    def load(cls, directory):
        tensors, scalars = gtf.read_bundle(directory)
        return cls.from_tensors(tensors, scalars.get("mu", DEFAULT_MU))


def project_cues(bundle: CueBundle, p: UtcfParams):
    """Return ``(F_t, F_n, F_s)``: texture as-is, projected normals, extracted semantics."""
    if bundle.normal_raw.shape[0] != p.normal_proj.in_channels:
        raise ShapeError("normal channel axis", p.normal_proj.in_channels, bundle.normal_raw.shape[0], "project_cues")
    if bundle.semantic_raw.shape[0] != p.semantic_in:
        raise ShapeError("semantic channel axis", p.semantic_in, bundle.semantic_raw.shape[0], "project_cues")
    if bundle.texture.shape[0] != p.channels:
        raise ShapeError("texture channel axis", p.channels, bundle.texture.shape[0], "project_cues")
    f_n = relu(p.normal_bn(conv2d(bundle.normal_raw, p.normal_proj))).astype(np.float64)
    f_s = conv2d(relu(conv2d(bundle.semantic_raw, p.sem_conv1)), p.sem_conv2).astype(np.float64)
    return bundle.texture, f_n, f_s


def channel_calibrate(f, mlp: ChannelMLP):
    """Squeeze-and-excitation: return ``(calibrated features, channel weights)``."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3 or f.shape[0] != mlp.channels:
        raise ShapeError("channel axis", mlp.channels, f.shape[0] if f.ndim == 3 else f.shape, "channel_calibrate")
    w = sigmoid(mlp(global_avg_pool(f)))
    return w[:, None, None] * f, w


def gating_weight(f_t, f_n, f_s, gate: GateNet):
    f_t, f_n, f_s = (np.asarray(a, dtype=np.float64) for a in (f_t, f_n, f_s))
    if not f_t.shape[1:] == f_n.shape[1:] == f_s.shape[1:]:
        raise ShapeError("spatial shape", f_t.shape[1:], (f_n.shape[1:], f_s.shape[1:]), "gating_weight")
    stacked = np.concatenate([f_t, f_n, f_s], axis=0)
    if stacked.shape[0] != gate.first.in_channels:
        raise ShapeError("concatenated channel axis", gate.first.in_channels, stacked.shape[0], "gating_weight")
    return sigmoid(gate(stacked))[0].astype(np.float64)


def gated_fuse(f_t, f_n, g):
    f_t = np.asarray(f_t, dtype=np.float64)
    f_n = np.asarray(f_n, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f_t.shape != f_n.shape:
        raise ShapeError("feature shape", f_t.shape, f_n.shape, "gated_fuse")
    if g.shape != f_t.shape[1:]:
        raise ShapeError("gate shape", f_t.shape[1:], g.shape, "gated_fuse")
    return (1.0 - g)[None] * f_t + g[None] * f_n


def refine_and_output(f_fused, f_s, d_initial, w_map, p: UtcfParams):
    f_fused = np.asarray(f_fused, dtype=np.float64)
    d_initial = np.asarray(d_initial, dtype=np.float64)
    w_map = np.asarray(w_map, dtype=np.float64)
    if f_fused.shape != d_initial.shape:
        raise ShapeError("descriptor shape", d_initial.shape, f_fused.shape, "refine_and_output")
    if w_map.shape != d_initial.shape[1:]:
        raise ShapeError("attention shape", d_initial.shape[1:], w_map.shape, "refine_and_output")
    d_s = conv2d(np.asarray(f_s, dtype=np.float64), p.sem_increment)
    if d_s.shape != f_fused.shape:
        raise ShapeError("semantic increment shape", f_fused.shape, d_s.shape, "refine_and_output")
    f_refine = relu(conv2d(f_fused + p.mu * d_s, p.out_proj)).astype(np.float64)
    return w_map[None] * (f_refine + d_initial)


def utcf_forward(bundle: CueBundle, p: UtcfParams, intermediates=False):
    """Full fusion pass; returns the ``[C, H, W]`` descriptor map.

    With ``intermediates=True`` a dict of every stage output is returned as well.
    """
    f_t, f_n, f_s = project_cues(bundle, p)
    ft_c, w_t = channel_calibrate(f_t, p.mlp_t)
    fn_c, w_n = channel_calibrate(f_n, p.mlp_n)
    fs_c, w_s = channel_calibrate(f_s, p.mlp_s)
    g = gating_weight(ft_c, fn_c, fs_c, p.gate)
    fused = gated_fuse(ft_c, fn_c, g)
    out = refine_and_output(fused, fs_c, bundle.texture, bundle.attention, p)
    if intermediates:
        return out, dict(F_t=f_t, F_n=f_n, F_s=f_s, W_t=w_t, W_n=w_n, W_s=w_s,
                         Ft_cal=ft_c, Fn_cal=fn_c, Fs_cal=fs_c, g=g, fused=fused)
    return out
