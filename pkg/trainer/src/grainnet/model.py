"""Network architectures: the propagation U-Net and the pair classifier.

The segmentation net takes two input channels — the grayscale slice under
study and the previous slice's boundary mask — and emits two-class softmax
maps.  The mask channel can additionally be re-injected, max-pooled to scale,
at every deeper encoder level ("layer1_4" fusion) instead of only feeding the
first convolution ("layer1").
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ShapeError

FUSION_MODES = ("layer1", "layer1_4")


@dataclass(frozen=True)
class ModelConfig:
    base_width: int = 16
    depth: int = 4
    fusion_mode: str = "layer1"
    in_channels: int = 2
    out_channels: int = 2

    def __post_init__(self) -> None:
        if self.fusion_mode not in FUSION_MODES:
            raise ShapeError(
                f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}"
            )
        if min(self.base_width, self.depth, self.in_channels, self.out_channels) < 1:
            raise ShapeError("every ModelConfig dimension must be positive")


def _double_conv(in_ch: int, out_ch: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class PropagationUNet(nn.Module):
    """U-Net whose encoder can re-consume the propagated mask at every level."""

    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        w, depth = config.base_width, config.depth
        fused = config.fusion_mode == "layer1_4"
        self.divisor = 2 ** depth

        widths = [w * 2 ** level for level in range(depth + 1)]
        self.encoders = nn.ModuleList()
        for level in range(depth):
            in_ch = config.in_channels if level == 0 else widths[level - 1]
            if fused and level > 0:
                in_ch += 1
            self.encoders.append(_double_conv(in_ch, widths[level]))
        self.bottleneck = _double_conv(widths[depth - 1], widths[depth])

        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in reversed(range(depth)):
            self.upsamplers.append(
                nn.ConvTranspose2d(widths[level + 1], widths[level], 2, stride=2)
            )
            self.decoders.append(_double_conv(2 * widths[level], widths[level]))
        self.head = nn.Conv2d(w, config.out_channels, 1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected (batch, {self.config.in_channels}, H, W), got {tuple(x.shape)}"
            )
        height, width = x.shape[2], x.shape[3]
        if height % self.divisor or width % self.divisor:
            raise ShapeError(
                f"spatial dims must be divisible by {self.divisor}, got {height}x{width}"
            )
        mask = x[:, -1:]
        skips = []
        feat = x
        for level, encoder in enumerate(self.encoders):
            if level > 0:
                feat = F.max_pool2d(feat, 2)
                if self.config.fusion_mode == "layer1_4":
                    pooled = F.max_pool2d(mask, 2 ** level)
                    feat = torch.cat([feat, pooled], dim=1)
            feat = encoder(feat)
            skips.append(feat)
        feat = self.bottleneck(F.max_pool2d(feat, 2))
        for up, decoder, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            feat = decoder(torch.cat([up(feat), skip], dim=1))
        return self.head(feat)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=1)


def build_segmentation_model(config: ModelConfig) -> PropagationUNet:
    return PropagationUNet(config)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


class PairClassifier(nn.Module):
    """Scores a 2-channel region-pair crop as same-grain vs different-grain.

    Adaptive pooling makes the head independent of the crop size, so one
    trained model serves any tracker crop configuration.
    """

    def __init__(self, width: int = 16) -> None:
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(2, width, 3, padding=1, bias=False),
            nn.BatchNorm2d(width),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(width, 2 * width, 3, padding=1, bias=False),
            nn.BatchNorm2d(2 * width),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(2 * width, 4 * width, 3, padding=1, bias=False),
            nn.BatchNorm2d(4 * width),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1),
        )
        self.head = nn.Linear(4 * width, 2)

    def logits(self, crops: torch.Tensor) -> torch.Tensor:
        if crops.dim() != 4 or crops.shape[1] != 2:
            raise ShapeError(f"expected (batch, 2, crop, crop), got {tuple(crops.shape)}")
        if min(crops.shape[2], crops.shape[3]) < 4:
            raise ShapeError("pair crops must be at least 4x4")
        feat = self.features(crops).flatten(1)
        return self.head(feat)

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(crops), dim=1)
