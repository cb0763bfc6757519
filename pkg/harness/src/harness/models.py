"""Denoising backbones: a small conditional U-Net and a small DiT, both
predicting the injected noise, with conditioning injected exclusively
through attention over the condition-encoder tokens."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConditionSpec


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of a continuous timestep in [0, 1]."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype,
                                                        device=t.device) / half)
    args = t[:, None] * freqs[None, :] * 1000.0
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ConditionEncoder(nn.Module):
    """One-hot concept vectors -> one token per concept (small MLP each)."""

    def __init__(self, spec: ConditionSpec, token_dim: int):
        super().__init__()
        self.spec = spec
        self.token_dim = token_dim
        self.encoders = nn.ModuleList([
            nn.Sequential(
                nn.Linear(n_classes, token_dim),
                nn.SiLU(),
                nn.Linear(token_dim, token_dim),
            )
            for n_classes in spec.classes_per_field
        ])

    def forward(self, class_indices: torch.Tensor) -> torch.Tensor:
        """class_indices: (B, n_concepts) long -> (B, n_tokens, token_dim)."""
        tokens = []
        for k, enc in enumerate(self.encoders):
            onehot = F.one_hot(class_indices[:, k],
                               self.spec.classes_per_field[k])
            tokens.append(enc(onehot.to(enc[0].weight.dtype)))
        return torch.stack(tokens, dim=1)


class CrossAttention(nn.Module):
    """Spatial (or token) queries attending to condition tokens."""

    def __init__(self, dim: int, cond_dim: int, heads: int = 4):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(8, dim) if dim % 8 == 0 else nn.GroupNorm(1, dim)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(cond_dim, dim)
        self.v = nn.Linear(cond_dim, dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q = self.norm(x).flatten(2).transpose(1, 2)  # (B, HW, C)
        q = self.q(q).view(b, h * w, self.heads, -1).transpose(1, 2)
        k = self.k(cond).view(b, -1, self.heads, c // self.heads).transpose(1, 2)
        v = self.v(cond).view(b, -1, self.heads, c // self.heads).transpose(1, 2)
        out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(1, 2).reshape(b, h * w, c)
        return x + self.proj(out).transpose(1, 2).view(b, c, h, w)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin) if cin % 8 == 0 else nn.GroupNorm(1, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(temb_dim, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ConditionalUNet(nn.Module):
    """Small noise-prediction U-Net; cross-attention at the coarse levels."""

    def __init__(self, spec: ConditionSpec, base: int = 32,
                 mults: tuple[int, ...] = (1, 2, 3), attn_levels: tuple[int, ...] = (1, 2),
                 token_dim: int = 64):
        super().__init__()
        self.spec = spec
        self.condition_encoder = ConditionEncoder(spec, token_dim)
        temb_dim = base * 4
        self.time_mlp = nn.Sequential(
            nn.Linear(base, temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim))
        self.base = base
        chans = [base * m for m in mults]

        self.stem = nn.Conv2d(3, chans[0], 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downs = nn.ModuleList()
        for lvl, c in enumerate(chans):
            cin = chans[max(lvl - 1, 0)]
            self.down_blocks.append(ResBlock(cin if lvl else chans[0], c, temb_dim))
            self.down_attn.append(CrossAttention(c, token_dim)
                                  if lvl in attn_levels else nn.Identity())
            self.downs.append(nn.Conv2d(c, c, 3, stride=2, padding=1)
                              if lvl < len(chans) - 1 else nn.Identity())

        self.mid1 = ResBlock(chans[-1], chans[-1], temb_dim)
        self.mid_attn = CrossAttention(chans[-1], token_dim)
        self.mid2 = ResBlock(chans[-1], chans[-1], temb_dim)

        self.up_blocks = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.ups = nn.ModuleList()
        for lvl in reversed(range(len(chans))):
            c = chans[lvl]
            self.ups.append(nn.ConvTranspose2d(chans[min(lvl + 1, len(chans) - 1)],
                                               c, 4, stride=2, padding=1)
                            if lvl < len(chans) - 1 else nn.Identity())
            self.up_blocks.append(ResBlock(c * 2, c, temb_dim))
            self.up_attn.append(CrossAttention(c, token_dim)
                                if lvl in attn_levels else nn.Identity())

        self.out_norm = nn.GroupNorm(8, chans[0])
        self.out_conv = nn.Conv2d(chans[0], 3, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x: torch.Tensor, t: torch.Tensor,
                class_indices: torch.Tensor) -> torch.Tensor:
        cond = self.condition_encoder(class_indices)
        temb = self.time_mlp(timestep_embedding(t, self.base))
        h = self.stem(x)
        skips = []
        for block, attn, down in zip(self.down_blocks, self.down_attn, self.downs):
            h = block(h, temb)
            if not isinstance(attn, nn.Identity):
                h = attn(h, cond)
            skips.append(h)
            h = down(h)
        h = self.mid1(h, temb)
        h = self.mid_attn(h, cond)
        h = self.mid2(h, temb)
        for up, block, attn in zip(self.ups, self.up_blocks, self.up_attn):
            h = up(h)
            h = block(torch.cat([h, skips.pop()], dim=1), temb)
            if not isinstance(attn, nn.Identity):
                h = attn(h, cond)
        return self.out_conv(F.silu(self.out_norm(h)))


class DiTBlock(nn.Module):
    def __init__(self, dim: int, cond_dim: int, heads: int = 4, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_x = nn.LayerNorm(dim, elementwise_affine=False)
        self.cross = nn.MultiheadAttention(dim, heads, batch_first=True,
                                           kdim=cond_dim, vdim=cond_dim)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio), nn.GELU(), nn.Linear(dim * mlp_ratio, dim))
        # adaLN modulation from the timestep embedding only
        self.modulation = nn.Linear(dim, 6 * dim)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x, temb, cond):
        shift1, scale1, gate1, shift2, scale2, gate2 = \
            self.modulation(F.silu(temb)).unsqueeze(1).chunk(6, dim=-1)
        h = self.norm1(x) * (1 + scale1) + shift1
        x = x + gate1 * self.attn(h, h, h, need_weights=False)[0]
        h = self.norm_x(x)
        x = x + self.cross(h, cond, cond, need_weights=False)[0]
        h = self.norm2(x) * (1 + scale2) + shift2
        return x + gate2 * self.mlp(h)


class ConditionalDiT(nn.Module):
    """Patch-token transformer predicting noise; timestep enters through
    adaLN modulation, conditions only through cross-attention."""

    def __init__(self, spec: ConditionSpec, resolution: int = 64, patch: int = 8,
                 dim: int = 192, depth: int = 4, heads: int = 4, token_dim: int = 96):
        super().__init__()
        if resolution % patch != 0:
            raise ValueError("patch size must divide the resolution")
        self.spec = spec
        self.patch = patch
        self.n_side = resolution // patch
        self.dim = dim
        self.condition_encoder = ConditionEncoder(spec, token_dim)
        self.patch_embed = nn.Linear(3 * patch * patch, dim)
        self.pos = nn.Parameter(torch.zeros(1, self.n_side ** 2, dim))
        nn.init.trunc_normal_(self.pos, std=0.02)
        self.time_mlp = nn.Sequential(
            nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))
        self.blocks = nn.ModuleList(
            [DiTBlock(dim, token_dim, heads) for _ in range(depth)])
        self.final_norm = nn.LayerNorm(dim, elementwise_affine=False)
        self.final = nn.Linear(dim, 3 * patch * patch)
        nn.init.zeros_(self.final.weight)
        nn.init.zeros_(self.final.bias)

    def _patchify(self, x):
        b, c, h, w = x.shape
        p = self.patch
        x = x.view(b, c, h // p, p, w // p, p).permute(0, 2, 4, 1, 3, 5)
        return x.reshape(b, (h // p) * (w // p), c * p * p)

    def _unpatchify(self, tokens, h, w):
        b = tokens.shape[0]
        p = self.patch
        x = tokens.reshape(b, h // p, w // p, 3, p, p).permute(0, 3, 1, 4, 2, 5)
        return x.reshape(b, 3, h, w)

    def forward(self, x, t, class_indices):
        b, _, h, w = x.shape
        cond = self.condition_encoder(class_indices)
        temb = self.time_mlp(timestep_embedding(t, self.dim))
        tokens = self.patch_embed(self._patchify(x)) + self.pos
        for block in self.blocks:
            tokens = block(tokens, temb, cond)
        return self._unpatchify(self.final(self.final_norm(tokens)), h, w)


def build_model(backbone: str, spec: ConditionSpec, preset: str = "small",
                resolution: int = 64) -> nn.Module:
    if backbone == "unet":
        if preset == "paper":
            return ConditionalUNet(spec, base=128, mults=(1, 2, 3, 4), token_dim=256)
        return ConditionalUNet(spec, base=32, mults=(1, 2, 3), token_dim=64)
    if backbone == "dit":
        if preset == "paper":
            return ConditionalDiT(spec, resolution=resolution, patch=4,
                                  dim=512, depth=12, heads=8, token_dim=256)
        return ConditionalDiT(spec, resolution=resolution)
    raise ValueError(f"unknown backbone {backbone!r}")
