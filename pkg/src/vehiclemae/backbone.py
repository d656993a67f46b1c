"""Asymmetric masked autoencoder with distribution and alignment heads.

Images are channel-last tensors ``[B, H, W, C]`` in [0, 1]. Patches are
flattened row-major over pixels with channels last, so a patch vector is
``(py, px, c)`` ordered. Masks are boolean ``[B, N]`` tensors (True = masked)
and every row in a batch must mask the same number of patches.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import torch
import torch.nn as nn

from .config import BackboneConfig
from .exceptions import PlanMismatch, ShapeMismatch

CLS, VISIBLE, MASKED = 0, 1, 2


@dataclass
class TokenBatch:
    """Token features with per-token kind tags and source patch indices (-1 for CLS)."""

    features: torch.Tensor  # [B, T, D]
    kinds: torch.Tensor  # [B, T] long
    patch_index: torch.Tensor  # [B, T] long

    def with_features(self, features: torch.Tensor) -> "TokenBatch":
        return replace(self, features=features)

    @property
    def cls(self) -> torch.Tensor:
        return self.features[:, 0]


def patchify(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    """``[B, H, W, C]`` -> ``[B, N, p*p*C]`` with row-major patches."""
    b, h, w, c = images.shape
    if h % patch_size or w % patch_size:
        raise ShapeMismatch(f"image {h}x{w} not divisible by patch size {patch_size}")
    x = images.reshape(b, h // patch_size, patch_size, w // patch_size, patch_size, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, (h // patch_size) * (w // patch_size), -1)


def unpatchify(patches: torch.Tensor, patch_size: int, height: int, width: int) -> torch.Tensor:
    b, n, d = patches.shape
    c = d // (patch_size * patch_size)
    rows, cols = height // patch_size, width // patch_size
    x = patches.reshape(b, rows, cols, patch_size, patch_size, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, height, width, c)


def masks_from_plans(plans: Sequence) -> torch.Tensor:
    return torch.stack([torch.as_tensor(p.masked, dtype=torch.bool) for p in plans])


def visible_indices(masks: torch.Tensor) -> torch.Tensor:
    """Ascending visible patch indices per row, ``[B, V]``."""
    counts = (~masks).sum(dim=1)
    if counts.numel() and bool((counts != counts[0]).any()):
        raise ShapeMismatch(f"rows mask different patch counts: {counts.tolist()}")
    b = masks.shape[0]
    v = int(counts[0]) if b else 0
    return torch.nonzero(~masks)[:, 1].reshape(b, v)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, t, d = x.shape
        q, k, v = self.qkv(x).reshape(b, t, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        return self.proj((attn @ v).transpose(1, 2).reshape(b, t, d))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TransformerStack(nn.Module):
    """``depth`` blocks plus a final norm; depth 0 is the identity."""

    def __init__(self, dim: int, depth: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.blocks = nn.ModuleList([Block(dim, heads, mlp_ratio) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim, eps=1e-6) if depth else nn.Identity()

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


@dataclass
class ForwardOutput:
    encoded: TokenBatch  # encoder output over CLS + visible tokens
    projected: TokenBatch
    decoder_input: TokenBatch
    decoded: TokenBatch  # CLS + every patch in index order
    pixels: torch.Tensor  # [B, N, p*p*C]


class MaskedAutoencoder(nn.Module):
    """Encoder/decoder pair plus every head the pre-training losses read from.

    The ``teacher_*`` distribution heads are frozen random projections: the
    contour side of the distillation losses never receives gradients.
    """

    def __init__(self, config: BackboneConfig, seed: Optional[int] = None):
        super().__init__()
        self.config = config
        if seed is None:
            self._build()
        else:
            with torch.random.fork_rng(devices=[]):
                torch.manual_seed(seed)
                self._build()

    def _build(self):
        c = self.config
        n = c.num_patches
        self.patch_proj = nn.Linear(c.patch_dim, c.enc_dim)
        self.cls_token = nn.Parameter(torch.zeros(c.enc_dim))
        self.enc_pos = nn.Parameter(torch.zeros(n + 1, c.enc_dim))
        self.encoder = TransformerStack(c.enc_dim, c.enc_depth, c.enc_heads, c.mlp_ratio)
        self.enc_to_dec = nn.Linear(c.enc_dim, c.dec_dim)
        self.mask_token = nn.Parameter(torch.zeros(c.dec_dim))
        self.dec_pos = nn.Parameter(torch.zeros(n + 1, c.dec_dim))
        self.decoder = TransformerStack(c.dec_dim, c.dec_depth, c.dec_heads, c.mlp_ratio)
        self.pixel_head = nn.Linear(c.dec_dim, c.patch_dim)
        self.student_patch_head = nn.Linear(c.dec_dim, c.dist_dim)
        self.student_cls_head = nn.Linear(c.dec_dim, c.dist_dim)
        self.teacher_patch_head = nn.Linear(c.enc_dim, c.dist_dim)
        self.teacher_cls_head = nn.Linear(c.enc_dim, c.dist_dim)
        self.semantic_head = nn.Linear(c.dec_dim, c.teacher_dim)
        self.text_align_head = nn.Linear(c.enc_dim, c.teacher_dim)

        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                nn.init.zeros_(m.bias)
        for p in (self.cls_token, self.enc_pos, self.mask_token, self.dec_pos):
            nn.init.trunc_normal_(p, std=0.02)
        for head in (self.teacher_patch_head, self.teacher_cls_head):
            head.requires_grad_(False)

    # -- encoder side -------------------------------------------------------

    def _check_images(self, images):
        c = self.config
        if images.dim() != 4 or tuple(images.shape[1:]) != (c.image_size, c.image_size, c.in_chans):
            raise ShapeMismatch(
                f"expected images [B, {c.image_size}, {c.image_size}, {c.in_chans}], got {tuple(images.shape)}"
            )

    def patch_embed(self, images: torch.Tensor, masks: torch.Tensor) -> TokenBatch:
        """Embed visible patches and prepend the CLS token (no position encoding)."""
        self._check_images(images)
        b = images.shape[0]
        if tuple(masks.shape) != (b, self.config.num_patches):
            raise ShapeMismatch(f"mask shape {tuple(masks.shape)} != ({b}, {self.config.num_patches})")
        idx = visible_indices(masks)
        patches = patchify(images, self.config.patch_size)
        vis = torch.gather(patches, 1, idx[..., None].expand(-1, -1, patches.shape[-1]))
        tokens = self.patch_proj(vis)
        cls = self.cls_token.expand(b, 1, -1)
        features = torch.cat([cls, tokens], dim=1)
        patch_index = torch.cat([torch.full((b, 1), -1, dtype=torch.long), idx], dim=1)
        kinds = torch.full_like(patch_index, VISIBLE)
        kinds[:, 0] = CLS
        return TokenBatch(features, kinds, patch_index)

    @staticmethod
    def add_position_encoding(tokens: TokenBatch, table: torch.Tensor) -> TokenBatch:
        """Add table rows selected by patch index; row 0 belongs to CLS."""
        pos = table[tokens.patch_index + 1]
        return tokens.with_features(tokens.features + pos)

    def encode(self, tokens: TokenBatch) -> TokenBatch:
        if tokens.features.shape[-1] != self.config.enc_dim:
            raise ShapeMismatch(f"encoder expects width {self.config.enc_dim}")
        return tokens.with_features(self.encoder(tokens.features))

    def project_to_decoder(self, tokens: TokenBatch) -> TokenBatch:
        return tokens.with_features(self.enc_to_dec(tokens.features))

    # -- decoder side -------------------------------------------------------

    def assemble_decoder_input(
        self, visible: TokenBatch, masks: torch.Tensor, mask_token: Optional[torch.Tensor] = None
    ) -> TokenBatch:
        """Scatter visible tokens into patch order, fill the rest with the mask token."""
        mask_token = self.mask_token if mask_token is None else mask_token
        idx = visible_indices(masks)
        if not torch.equal(visible.patch_index[:, 1:], idx):
            raise PlanMismatch("visible token patch indices disagree with the mask plan")
        b, n = masks.shape
        d = visible.features.shape[-1]
        filler = mask_token.expand(b, n, d)
        patches = torch.scatter(filler, 1, idx[..., None].expand(-1, -1, d), visible.features[:, 1:])
        features = torch.cat([visible.features[:, :1], patches], dim=1)
        patch_index = torch.cat(
            [torch.full((b, 1), -1, dtype=torch.long), torch.arange(n).expand(b, n)], dim=1
        )
        kinds = torch.cat(
            [torch.full((b, 1), CLS, dtype=torch.long), torch.where(masks, MASKED, VISIBLE).long()], dim=1
        )
        return self.add_position_encoding(TokenBatch(features, kinds, patch_index), self.dec_pos)

    def decode(self, tokens: TokenBatch) -> TokenBatch:
        if tokens.features.shape[-1] != self.config.dec_dim:
            raise ShapeMismatch(f"decoder expects width {self.config.dec_dim}")
        return tokens.with_features(self.decoder(tokens.features))

    def reconstruct_pixels(self, decoded: TokenBatch) -> torch.Tensor:
        if decoded.features.shape[1] != self.config.num_patches + 1:
            raise ShapeMismatch("reconstruction needs one decoded token per patch plus CLS")
        return self.pixel_head(decoded.features[:, 1:])

    # -- heads --------------------------------------------------------------

    def project_patch_distribution(self, features, head: str = "student") -> torch.Tensor:
        if isinstance(features, TokenBatch):
            features = features.features[:, 1:]
        layer = {"student": self.student_patch_head, "teacher": self.teacher_patch_head}[head]
        return torch.softmax(layer(features), dim=-1)

    def project_cls_distribution(self, cls_feature, head: str = "student") -> torch.Tensor:
        if isinstance(cls_feature, TokenBatch):
            cls_feature = cls_feature.cls
        layer = {"student": self.student_cls_head, "teacher": self.teacher_cls_head}[head]
        return torch.softmax(layer(cls_feature), dim=-1)

    # -- full passes --------------------------------------------------------

    def forward(self, images: torch.Tensor, masks: torch.Tensor) -> ForwardOutput:
        tokens = self.add_position_encoding(self.patch_embed(images, masks), self.enc_pos)
        encoded = self.encode(tokens)
        projected = self.project_to_decoder(encoded)
        dec_in = self.assemble_decoder_input(projected, masks)
        decoded = self.decode(dec_in)
        return ForwardOutput(encoded, projected, dec_in, decoded, self.reconstruct_pixels(decoded))

    def encode_full(self, images: torch.Tensor) -> TokenBatch:
        """Encoder output over CLS + all patches, nothing masked."""
        masks = torch.zeros(images.shape[0], self.config.num_patches, dtype=torch.bool)
        return self.encode(self.add_position_encoding(self.patch_embed(images, masks), self.enc_pos))

    def encode_contour(self, contours: torch.Tensor) -> TokenBatch:
        """Shared-weight encoding of single-channel contour maps ``[B, H, W]``."""
        if contours.dim() != 3:
            raise ShapeMismatch(f"contours must be [B, H, W], got {tuple(contours.shape)}")
        return self.encode_full(contours[..., None].expand(-1, -1, -1, self.config.in_chans))

    def learnable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]
