"""Guidance-conditioned restoration backbone.

A 4-level U-Net of integrated transformer blocks. Each block fuses the
sentence guidance vector into the normalized feature map channel-wise, then
applies multi-head attention computed over channels (C x C attention maps,
linear in spatial size) and a gated depth-wise convolution feed-forward.
Pixel-unshuffle/shuffle handle resampling; skip connections concatenate and
are reduced by 1x1 convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn


@dataclass
class BackboneConfig:
    base_channels: int = 48
    blocks_per_level: tuple = (4, 6, 6, 8)
    heads_per_level: tuple = (1, 2, 4, 8)
    levels: int = 4
    d_text: int = 768
    global_residual: bool = True
    sgi_enabled: bool = True
    ffn_expansion: float = 2.66
    skip_merge_level1: str = "keep2c"  # "keep2c" -> 2C-wide final decoder; "halve" -> C

    def __post_init__(self):
        self.blocks_per_level = tuple(self.blocks_per_level)
        self.heads_per_level = tuple(self.heads_per_level)
        if self.levels < 2:
            raise ValueError("levels must be >= 2")
        if len(self.blocks_per_level) != self.levels or len(self.heads_per_level) != self.levels:
            raise ValueError("blocks_per_level and heads_per_level must have one entry per level")
        for i in range(self.levels):
            if self.level_channels(i) % self.heads_per_level[i] != 0:
                raise ValueError(
                    f"level {i + 1}: {self.level_channels(i)} channels not divisible "
                    f"by {self.heads_per_level[i]} heads")
        if self.skip_merge_level1 == "keep2c" and (2 * self.base_channels) % self.heads_per_level[0] != 0:
            raise ValueError("final decoder width 2C not divisible by level-1 heads")
        if self.skip_merge_level1 not in ("keep2c", "halve"):
            raise ValueError("skip_merge_level1 must be 'keep2c' or 'halve'")

    def level_channels(self, i: int) -> int:
        return self.base_channels * (2 ** i)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BackboneConfig":
        kw = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in ("blocks_per_level", "heads_per_level"):
                kw[key] = tuple(int(x) for x in value.split(","))
            elif key in ("base_channels", "levels", "d_text"):
                kw[key] = int(value)
            elif key in ("global_residual", "sgi_enabled"):
                kw[key] = value.lower() in ("1", "true", "yes", "on")
            elif key == "ffn_expansion":
                kw[key] = float(value)
            else:
                kw[key] = value
        return cls(**kw)


PRESETS = {
    "paper": dict(base_channels=48, blocks_per_level=(4, 6, 6, 8),
                  heads_per_level=(1, 2, 4, 8), d_text=768),
    "tiny": dict(base_channels=8, blocks_per_level=(2, 2, 2, 2),
                 heads_per_level=(1, 2, 4, 8), d_text=64),
}


def preset_config(name: str, **overrides) -> BackboneConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return BackboneConfig(**kw)


##########################################################################
## normalization and guidance fusion

class ChannelLayerNorm(nn.Module):
    """Layer norm over the channel axis per spatial position, bias-free."""

    def __init__(self, channels):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mu) / torch.sqrt(var + 1e-5) * self.weight[None, :, None, None]


class GuidanceFuse(nn.Module):
    """Channel-wise fusion of the guidance vector into normalized features.

    x0 = LN(x); w = sigmoid(conv1d(GAP(x0))); xw = w * (proj_z z);
    xc = (proj_scale xw) * x0 + (proj_shift xw). With guidance disabled the
    module reduces to the plain normalization (the ablated network).
    """

    def __init__(self, channels, d_text, enabled=True):
        super().__init__()
        self.enabled = enabled
        self.norm = ChannelLayerNorm(channels)
        if enabled:
            self.channel_conv = nn.Conv1d(1, 1, kernel_size=3, padding=1, bias=True)
            self.proj_z = nn.Linear(d_text, channels)
            self.proj_scale = nn.Linear(channels, channels)
            self.proj_shift = nn.Linear(channels, channels)
            # identity-like modulation at init keeps deep stacks well scaled
            nn.init.ones_(self.proj_scale.bias)

    def forward(self, x, z):
        x0 = self.norm(x)
        if not self.enabled:
            return x0
        xp = x0.mean(dim=(2, 3))
        w = torch.sigmoid(self.channel_conv(xp[:, None, :]))[:, 0, :]
        xw = w * self.proj_z(z)
        scale = self.proj_scale(xw)
        shift = self.proj_shift(xw)
        return scale[:, :, None, None] * x0 + shift[:, :, None, None]


##########################################################################
## attention over channels and gated feed-forward

class TransposedAttention(nn.Module):
    """Multi-head attention over the channel axis: per head, an attention
    map of shape (C/heads) x (C/heads) regardless of spatial size."""

    def __init__(self, channels, heads):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"{channels} channels not divisible by {heads} heads")
        self.heads = heads
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1))
        self.q_point = nn.Conv2d(channels, channels, 1)
        self.k_point = nn.Conv2d(channels, channels, 1)
        self.v_point = nn.Conv2d(channels, channels, 1)
        self.q_depth = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.k_depth = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.v_depth = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.out_proj = nn.Conv2d(channels, channels, 1)

    def attention_matrix(self, xc):
        h, w = xc.shape[-2:]
        q = self.q_depth(self.q_point(xc))
        k = self.k_depth(self.k_point(xc))
        q = rearrange(q, "b (head c) h w -> b head (h w) c", head=self.heads)
        k = rearrange(k, "b (head c) h w -> b head (h w) c", head=self.heads)
        return torch.softmax(k.transpose(-2, -1) @ q / self.temperature, dim=-1)

    def forward(self, xc):
        h, w = xc.shape[-2:]
        q = self.q_depth(self.q_point(xc))
        k = self.k_depth(self.k_point(xc))
        v = self.v_depth(self.v_point(xc))
        q = rearrange(q, "b (head c) h w -> b head (h w) c", head=self.heads)
        k = rearrange(k, "b (head c) h w -> b head (h w) c", head=self.heads)
        v = rearrange(v, "b (head c) h w -> b head (h w) c", head=self.heads)
        attn = torch.softmax(k.transpose(-2, -1) @ q / self.temperature, dim=-1)
        out = v @ attn
        out = rearrange(out, "b head (h w) c -> b (head c) h w", h=h, w=w)
        return self.out_proj(out)


class IMTA(nn.Module):
    """Guidance fusion followed by channel attention, residual to the input."""

    def __init__(self, channels, d_text, heads, sgi=True):
        super().__init__()
        self.fuse = GuidanceFuse(channels, d_text, sgi)
        self.attn = TransposedAttention(channels, heads)

    def forward(self, x, z):
        return self.attn(self.fuse(x, z)) + x


class IGFN(nn.Module):
    """Guidance fusion, then a GELU-gated pair of depth-wise conv branches."""

    def __init__(self, channels, d_text, expansion=2.66, sgi=True):
        super().__init__()
        hidden = int(channels * expansion)
        self.fuse = GuidanceFuse(channels, d_text, sgi)
        self.point1 = nn.Conv2d(channels, hidden, 1)
        self.point2 = nn.Conv2d(channels, hidden, 1)
        self.depth1 = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.depth2 = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.out_proj = nn.Conv2d(hidden, channels, 1)

    def forward(self, x, z):
        xc = self.fuse(x, z)
        gate = F.gelu(self.depth1(self.point1(xc))) * self.depth2(self.point2(xc))
        return self.out_proj(gate) + xc


class ITBlock(nn.Module):
    def __init__(self, channels, d_text, heads, expansion=2.66, sgi=True):
        super().__init__()
        self.imta = IMTA(channels, d_text, heads, sgi)
        self.igfn = IGFN(channels, d_text, expansion, sgi)

    def forward(self, x, z):
        return self.igfn(self.imta(x, z), z)


##########################################################################
## resampling

class Downsample(nn.Module):
    """3x3 conv C -> C/2 then pixel-unshuffle(2): (H,W,C) -> (H/2,W/2,2C)."""

    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels // 2, 3, padding=1),
            nn.PixelUnshuffle(2))

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ValueError(f"spatial dims must be even, got {tuple(x.shape[-2:])}")
        return self.body(x)


class Upsample(nn.Module):
    """3x3 conv C -> 2C then pixel-shuffle(2): (H,W,C) -> (2H,2W,C/2)."""

    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels * 2, 3, padding=1),
            nn.PixelShuffle(2))

    def forward(self, x):
        return self.body(x)


##########################################################################
## the full network

class RestorationBackbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        cfg = config
        L = cfg.levels
        chans = [cfg.level_channels(i) for i in range(L)]

        def blocks(c, heads, n):
            return nn.ModuleList(
                ITBlock(c, cfg.d_text, heads, cfg.ffn_expansion, cfg.sgi_enabled)
                for _ in range(n))

        self.embed = nn.Conv2d(3, chans[0], 3, padding=1)
        self.encoders = nn.ModuleList(
            blocks(chans[i], cfg.heads_per_level[i], cfg.blocks_per_level[i])
            for i in range(L - 1))
        self.downs = nn.ModuleList(Downsample(chans[i]) for i in range(L - 1))
        self.latent = blocks(chans[L - 1], cfg.heads_per_level[L - 1], cfg.blocks_per_level[L - 1])

        # decoder stages listed in application order: level L-2 down to 1, then level 0
        ups, merges, decoders = [], [], []
        for i in reversed(range(1, L - 1)):
            ups.append(Upsample(chans[i + 1]))
            merges.append(nn.Conv2d(2 * chans[i], chans[i], 1))
            decoders.append(blocks(chans[i], cfg.heads_per_level[i], cfg.blocks_per_level[i]))
        ups.append(Upsample(chans[1]))
        if cfg.skip_merge_level1 == "keep2c":
            final_width = 2 * chans[0]
        else:
            final_width = chans[0]
        merges.append(nn.Conv2d(2 * chans[0], final_width, 1))
        decoders.append(blocks(final_width, cfg.heads_per_level[0], cfg.blocks_per_level[0]))
        self.ups = nn.ModuleList(ups)
        self.merges = nn.ModuleList(merges)
        self.decoders = nn.ModuleList(decoders)
        self.output = nn.Conv2d(final_width, 3, 3, padding=1)

    def _check_z(self, img, z):
        if z.dim() == 1:
            z = z[None]
        if z.shape[-1] != self.config.d_text:
            raise ValueError(f"guidance dim {z.shape[-1]} != configured d_text {self.config.d_text}")
        if z.shape[0] == 1 and img.shape[0] > 1:
            z = z.expand(img.shape[0], -1)
        if z.shape[0] != img.shape[0]:
            raise ValueError("guidance batch does not match image batch")
        if not torch.all(torch.isfinite(z)):
            raise ValueError("guidance vector must be finite")
        return z

    def forward(self, img, z, collect_maps=False):
        """img (B,3,H,W) with H,W divisible by 2^(levels-1); z (B,d_text).

        Returns the restored batch, unclipped; with collect_maps=True also a
        list of per-level feature maps from the decoder path (deepest first).
        """
        z = self._check_z(img, z)
        feats = self.embed(img)
        skips = []
        for blocks, down in zip(self.encoders, self.downs):
            for blk in blocks:
                feats = blk(feats, z)
            skips.append(feats)
            feats = down(feats)
        for blk in self.latent:
            feats = blk(feats, z)
        maps = [feats] if collect_maps else None
        for stage, (up, merge, blocks) in enumerate(zip(self.ups, self.merges, self.decoders)):
            feats = up(feats)
            skip = skips[len(skips) - 1 - stage]
            feats = merge(torch.cat([feats, skip], dim=1))
            for blk in blocks:
                feats = blk(feats, z)
            if collect_maps:
                maps.append(feats)
        out = self.output(feats)
        if self.config.global_residual:
            out = out + img
        return (out, maps) if collect_maps else out


##########################################################################
## inference helpers over numpy images

def pad_multiple(img: torch.Tensor, multiple: int):
    h, w = img.shape[-2:]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph or pw:
        img = F.pad(img, (0, pw, 0, ph), mode="reflect")
    return img, (h, w)


def restore_image(model: RestorationBackbone, image: np.ndarray, z) -> np.ndarray:
    """Run the model on one H x W x 3 [0,1] image; output clipped to [0,1]."""
    was_training = model.training
    model.eval()
    t = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))[None]).float()
    zt = torch.as_tensor(np.asarray(z), dtype=torch.float32)
    t, (h, w) = pad_multiple(t, 2 ** (model.config.levels - 1))
    with torch.no_grad():
        out = model(t, zt)
    model.train(was_training)
    out = out[0, :, :h, :w].numpy().transpose(1, 2, 0)
    return np.clip(out, 0.0, 1.0)


def attention_maps(model: RestorationBackbone, image: np.ndarray, z) -> list:
    """Per-level spatial saliency: channel-mean |activation| of each decoder
    stage's last block output (latent first), resized to input size and
    max-normalized to [0,1]."""
    was_training = model.training
    model.eval()
    t = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1))[None]).float()
    zt = torch.as_tensor(np.asarray(z), dtype=torch.float32)
    t, (h, w) = pad_multiple(t, 2 ** (model.config.levels - 1))
    with torch.no_grad():
        _, maps = model(t, zt, collect_maps=True)
    model.train(was_training)
    out = []
    for m in maps:
        sal = m.abs().mean(dim=1, keepdim=True)
        sal = F.interpolate(sal, size=t.shape[-2:], mode="bilinear", align_corners=False)
        sal = sal[0, 0, :h, :w].numpy()
        peak = sal.max()
        out.append(sal / peak if peak > 0 else sal)
    return out
