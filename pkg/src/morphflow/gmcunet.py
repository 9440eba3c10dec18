"""U-Net denoiser whose middle residual blocks are convection-dilation-erosion.

Encoder and decoder are ordinary residual conv blocks; the middle block
swaps them for CDE blocks built from the trainable morphological ops
(block_type='resnet' restores plain residual blocks for the baseline
comparison). Periodic padding everywhere keeps the whole network exactly
shift-equivariant; with zero convection velocities and the isotropic
penalty tables the CDE pipeline also commutes with 90-degree rotations,
flips, and channel permutations.

Parameters are float32 Tensors collected into a flat name -> Tensor dict;
state()/load_state() move raw arrays in and out (used by EMA swapping and
checkpoints).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .morphpde import offset_distances, structuring_constant


@dataclass(frozen=True)
class UNetConfig:
    image_channels: int = 1
    image_side: int = 28
    base_channels: int = 32
    channel_mults: tuple = (1, 2)
    middle_blocks: int = 2
    attention: bool = True
    attn_heads: int = 1
    block_type: str = "cde"  # or "resnet"
    k: float = 2.0
    window_radius: int = 3
    distance_mode: str = "hyperbolic_embedded"
    metric_scale: float = 1.0
    norm_groups: int = 1
    stem_kernel: int = 3
    time_dim: int = 0  # 0 -> 4 * base_channels
    padding: str = "periodic"

    def __post_init__(self):
        object.__setattr__(self, "channel_mults", tuple(self.channel_mults))
        if self.image_side % (1 << self.stages) != 0:
            raise ValueError("image side must be divisible by 2^stages")
        if self.block_type not in ("cde", "resnet"):
            raise ValueError(f"block_type must be 'cde' or 'resnet', got {self.block_type!r}")
        if self.middle_blocks < 1:
            raise ValueError("need at least one middle block")
        if self.k <= 1.0:
            raise ValueError("exponent k must be > 1")
        if self.resolved_time_dim % 2 or self.resolved_time_dim < 4:
            raise ValueError("time embedding dim must be even and >= 4")
        if self.stem_kernel % 2 == 0:
            raise ValueError("stem kernel must be odd")

    @property
    def stages(self) -> int:
        return len(self.channel_mults)

    @property
    def stage_channels(self) -> tuple:
        return tuple(self.base_channels * m for m in self.channel_mults)

    @property
    def resolved_time_dim(self) -> int:
        return self.time_dim if self.time_dim else 4 * self.base_channels


class Dense:
    def __init__(self, rng, din: int, dout: int, name: str, zero: bool = False):
        scale = 1.0 / math.sqrt(din)
        w = np.zeros((din, dout)) if zero else rng.normal(0.0, scale, (din, dout))
        self.w = Tensor(w.astype(np.float32), requires_grad=True)
        self.b = Tensor(np.zeros(dout, dtype=np.float32), requires_grad=True)
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def named_params(self):
        yield f"{self.name}.w", self.w
        yield f"{self.name}.b", self.b


class Conv:
    def __init__(self, rng, cin: int, cout: int, ksize: int, name: str,
                 stride: int = 1, padding: str = "periodic", zero: bool = False):
        fan = cin * ksize * ksize
        w = (np.zeros((cout, cin, ksize, ksize)) if zero
             else rng.normal(0.0, 1.0 / math.sqrt(fan), (cout, cin, ksize, ksize)))
        self.w = Tensor(w.astype(np.float32), requires_grad=True)
        self.b = Tensor(np.zeros(cout, dtype=np.float32), requires_grad=True)
        self.cout = cout
        self.stride = stride
        self.padding = padding
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def named_params(self):
        yield f"{self.name}.w", self.w
        yield f"{self.name}.b", self.b


class GroupNorm:
    def __init__(self, channels: int, groups: int, name: str):
        if channels % groups:
            raise ValueError("channels must divide evenly into norm groups")
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self.groups = groups
        self.name = name

    def __call__(self, x: Tensor) -> Tensor:
        return ad.group_norm(x, self.gamma, self.beta, self.groups)

    def named_params(self):
        yield f"{self.name}.gamma", self.gamma
        yield f"{self.name}.beta", self.beta


class TimeEmbedding:
    """Sinusoidal step features through a two-layer MLP."""

    def __init__(self, rng, dim: int, name: str):
        self.dim = dim
        half = dim // 2
        # Geometric frequencies from 1 down to 1/10000.
        if half > 1:
            self.freqs = 10000.0 ** (-np.arange(half) / (half - 1))
        else:
            self.freqs = np.ones(1)
        self.fc1 = Dense(rng, dim, dim, f"{name}.fc1")
        self.fc2 = Dense(rng, dim, dim, f"{name}.fc2")

    def features(self, t: np.ndarray) -> np.ndarray:
        ang = np.asarray(t, dtype=np.float64)[:, None] * self.freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(np.float32)

    def __call__(self, t: np.ndarray) -> Tensor:
        x = Tensor(self.features(t))
        return self.fc2(ad.silu(self.fc1(x)))

    def named_params(self):
        yield from self.fc1.named_params()
        yield from self.fc2.named_params()


def _inv_softplus(y: float) -> float:
    return math.log(math.expm1(y))


class CDEBlock:
    """Residual block: 1x1 conv, norm, time bias, convection, then a
    learnable mix of dilation / erosion / skip, closed by a zero-init 1x1
    conv so the block starts as the identity."""

    def __init__(self, rng, channels: int, time_dim: int, cfg: UNetConfig, name: str):
        C = channels
        self.win = Conv(rng, C, C, 1, f"{name}.win")
        self.norm = GroupNorm(C, cfg.norm_groups, f"{name}.norm")
        self.time_proj = Dense(rng, time_dim, C, f"{name}.time")
        self.vel = Tensor(np.zeros((C, 2), dtype=np.float32), requires_grad=True)
        raw0 = np.float32(_inv_softplus(0.5))
        self.scale_raw_dil = Tensor(np.full(C, raw0, dtype=np.float32), requires_grad=True)
        self.scale_raw_ero = Tensor(np.full(C, raw0, dtype=np.float32), requires_grad=True)
        third = np.full(C, 1.0 / 3.0, dtype=np.float32)
        self.lam_dil = Tensor(third.copy(), requires_grad=True)
        self.lam_ero = Tensor(third.copy(), requires_grad=True)
        self.lam_skip = Tensor(third.copy(), requires_grad=True)
        self.wout = Conv(rng, C, C, 1, f"{name}.wout", zero=True)
        self.channels = C
        self.name = name
        d = offset_distances(cfg.window_radius, cfg.metric_scale, cfg.distance_mode)
        km1 = cfg.k - 1.0
        base = structuring_constant(cfg.k) * d ** (cfg.k / km1)
        self._base = Tensor(base.astype(np.float32))
        self._scale_power = -1.0 / km1

    def _penalty(self, raw: Tensor) -> Tensor:
        tpos = ad.softplus(raw)
        tsc = ad.pow_const(tpos, self._scale_power)
        return ad.mul(ad.reshape(tsc, (self.channels, 1, 1)), self._base)

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        B = x.shape[0]
        C = self.channels
        h = self.win(x)
        h = self.norm(h)
        tb = self.time_proj(emb)
        h = ad.add(h, ad.reshape(tb, (B, C, 1, 1)))
        h = ad.convect(h, self.vel)
        d = ad.window_max(h, ad.neg(self._penalty(self.scale_raw_dil)))
        e = ad.window_min(h, self._penalty(self.scale_raw_ero))
        mix = ad.add(
            ad.add(ad.mul(d, ad.reshape(self.lam_dil, (1, C, 1, 1))),
                   ad.mul(e, ad.reshape(self.lam_ero, (1, C, 1, 1)))),
            ad.mul(h, ad.reshape(self.lam_skip, (1, C, 1, 1))))
        return ad.add(x, self.wout(mix))

    def named_params(self):
        yield from self.win.named_params()
        yield from self.norm.named_params()
        yield from self.time_proj.named_params()
        yield f"{self.name}.vel", self.vel
        yield f"{self.name}.scale_raw_dil", self.scale_raw_dil
        yield f"{self.name}.scale_raw_ero", self.scale_raw_ero
        yield f"{self.name}.lam_dil", self.lam_dil
        yield f"{self.name}.lam_ero", self.lam_ero
        yield f"{self.name}.lam_skip", self.lam_skip
        yield from self.wout.named_params()


class ResBlock:
    """Plain residual conv block (the DDPM baseline building brick)."""

    def __init__(self, rng, cin: int, cout: int, time_dim: int, cfg: UNetConfig, name: str):
        self.norm1 = GroupNorm(cin, cfg.norm_groups, f"{name}.norm1")
        self.conv1 = Conv(rng, cin, cout, 3, f"{name}.conv1", padding=cfg.padding)
        self.time_proj = Dense(rng, time_dim, cout, f"{name}.time")
        self.norm2 = GroupNorm(cout, cfg.norm_groups, f"{name}.norm2")
        self.conv2 = Conv(rng, cout, cout, 3, f"{name}.conv2", padding=cfg.padding, zero=True)
        self.skip = Conv(rng, cin, cout, 1, f"{name}.skip") if cin != cout else None
        self.cout = cout

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        B = x.shape[0]
        h = self.conv1(ad.silu(self.norm1(x)))
        h = ad.add(h, ad.reshape(self.time_proj(emb), (B, self.cout, 1, 1)))
        h = self.conv2(ad.silu(self.norm2(h)))
        s = self.skip(x) if self.skip is not None else x
        return ad.add(s, h)

    def named_params(self):
        yield from self.norm1.named_params()
        yield from self.conv1.named_params()
        yield from self.time_proj.named_params()
        yield from self.norm2.named_params()
        yield from self.conv2.named_params()
        if self.skip is not None:
            yield from self.skip.named_params()


class AttentionBlock:
    """Single self-attention over the token grid with a residual output."""

    def __init__(self, rng, channels: int, heads: int, groups: int, name: str):
        if channels % heads:
            raise ValueError("channels must be divisible by the head count")
        self.norm = GroupNorm(channels, groups, f"{name}.norm")
        self.q = Conv(rng, channels, channels, 1, f"{name}.q")
        self.k = Conv(rng, channels, channels, 1, f"{name}.k")
        self.v = Conv(rng, channels, channels, 1, f"{name}.v")
        self.proj = Conv(rng, channels, channels, 1, f"{name}.proj", zero=True)
        self.heads = heads
        self.channels = channels

    def _tokens(self, t: Tensor, B: int, HW: int) -> Tensor:
        dh = self.channels // self.heads
        t = ad.reshape(t, (B, self.heads, dh, HW))
        return ad.transpose(t, (0, 1, 3, 2))  # (B, heads, HW, dh)

    def __call__(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        HW = H * W
        dh = C // self.heads
        hn = self.norm(x)
        q = self._tokens(self.q(hn), B, HW)
        k = self._tokens(self.k(hn), B, HW)
        v = self._tokens(self.v(hn), B, HW)
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
                        np.float32(1.0 / math.sqrt(dh)))
        att = ad.softmax(scores, axis=-1)
        o = ad.matmul(att, v)  # (B, heads, HW, dh)
        o = ad.reshape(ad.transpose(o, (0, 1, 3, 2)), (B, C, H, W))
        return ad.add(x, self.proj(o))

    def named_params(self):
        yield from self.norm.named_params()
        yield from self.q.named_params()
        yield from self.k.named_params()
        yield from self.v.named_params()
        yield from self.proj.named_params()


class GMCUnet:
    """The noise predictor: encoder, CDE (or plain) middle block, decoder."""

    def __init__(self, cfg: UNetConfig, rng: np.random.Generator):
        self.cfg = cfg
        chs = cfg.stage_channels
        tdim = cfg.resolved_time_dim
        pad = cfg.padding
        self.time = TimeEmbedding(rng, tdim, "time")
        c0 = chs[0] if chs else cfg.base_channels
        self.stem = Conv(rng, cfg.image_channels, c0, cfg.stem_kernel, "stem", padding=pad)
        self.enc_blocks = []
        self.downs = []
        prev = c0
        for i, ch in enumerate(chs):
            self.enc_blocks.append(ResBlock(rng, prev, ch, tdim, cfg, f"enc{i}"))
            self.downs.append(Conv(rng, ch, ch, 3, f"down{i}", stride=2, padding=pad))
            prev = ch
        mid_ch = prev
        make_mid = CDEBlock if cfg.block_type == "cde" else ResBlock
        self.mids = []
        for i in range(cfg.middle_blocks):
            if cfg.block_type == "cde":
                self.mids.append(CDEBlock(rng, mid_ch, tdim, cfg, f"mid{i}"))
            else:
                self.mids.append(ResBlock(rng, mid_ch, mid_ch, tdim, cfg, f"mid{i}"))
        self.attn = (AttentionBlock(rng, mid_ch, cfg.attn_heads, cfg.norm_groups, "attn")
                     if cfg.attention else None)
        self.ups = []
        self.dec_blocks = []
        for i in reversed(range(len(chs))):
            cin = chs[i + 1] if i + 1 < len(chs) else mid_ch
            self.ups.append(Conv(rng, cin, chs[i], 3, f"up{i}", padding=pad))
            self.dec_blocks.append(ResBlock(rng, 2 * chs[i], chs[i], tdim, cfg, f"dec{i}"))
        self.out_norm = GroupNorm(c0, cfg.norm_groups, "out_norm")
        self.out = Conv(rng, c0, cfg.image_channels, cfg.stem_kernel, "out",
                        padding=pad, zero=True)
        self._params = dict(self.named_params())

    def named_params(self):
        yield from self.time.named_params()
        yield from self.stem.named_params()
        for b in self.enc_blocks:
            yield from b.named_params()
        for d in self.downs:
            yield from d.named_params()
        for m in self.mids:
            yield from m.named_params()
        if self.attn is not None:
            yield from self.attn.named_params()
        for u in self.ups:
            yield from u.named_params()
        for b in self.dec_blocks:
            yield from b.named_params()
        yield from self.out_norm.named_params()
        yield from self.out.named_params()

    @property
    def params(self) -> dict:
        return self._params

    def forward(self, x: Tensor, t: np.ndarray) -> Tensor:
        """Predict the noise in x at steps t (one integer in [1, T] per sample)."""
        emb = self.time(t)
        h = self.stem(x)
        skips = []
        for block, down in zip(self.enc_blocks, self.downs):
            h = block(h, emb)
            skips.append(h)
            h = down(h)
        for i, m in enumerate(self.mids):
            h = m(h, emb)
            if i == 0 and self.attn is not None:
                h = self.attn(h)
        for up, dec, skip in zip(self.ups, self.dec_blocks, reversed(skips)):
            h = up(ad.upsample_nearest2x(h))
            h = ad.concat([h, skip], axis=1)
            h = dec(h, emb)
        h = ad.silu(self.out_norm(h))
        return self.out(h)

    def __call__(self, x: Tensor, t: np.ndarray) -> Tensor:
        return self.forward(x, t)

    def state(self) -> dict:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state(self, arrays: dict):
        missing = sorted(set(self._params) - set(arrays))
        extra = sorted(set(arrays) - set(self._params))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, p in self._params.items():
            arr = np.asarray(arrays[k], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()

    def zero_grads(self):
        for p in self._params.values():
            p.grad = None
