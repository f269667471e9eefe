"""Reference two-stage-style torch detector for the export adapter.

A small conv backbone over the image, a fixed grid of candidate regions,
per-region pooled features, and two heads: classification over
num_classes + 1 (background last) and a bounded box refinement. This is
the single host-framework integration the exporter targets; any detector
exposing per-region features, class probabilities and refined boxes can
be dumped the same way.
"""

from __future__ import annotations

import torch
from torch import nn

BOX_DELTA_FRACTION = 0.1  # refinement is at most this fraction of the region size


def grid_boxes(height: int, width: int, grid: int) -> torch.Tensor:
    """Pixel-coordinate corner boxes tiling the image with a grid x grid layout."""
    ys = torch.linspace(0, height, grid + 1)
    xs = torch.linspace(0, width, grid + 1)
    boxes = [[xs[j].item(), ys[i].item(), xs[j + 1].item(), ys[i + 1].item()]
             for i in range(grid) for j in range(grid)]
    return torch.tensor(boxes, dtype=torch.float32)


class GridProposalDetector(nn.Module):
    """Backbone + fixed-grid regions + pooled per-region representation heads."""

    def __init__(self, num_classes: int, feature_dim: int,
                 channels: int = 16, grid: int = 4):
        super().__init__()
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.grid = grid
        self.backbone = nn.Sequential(
            nn.Conv2d(3, channels, 3, padding=1), nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1), nn.ReLU(),
        )
        self.region_pool = nn.AdaptiveAvgPool2d(2)
        self.feature_head = nn.Linear(channels * 4, feature_dim)
        self.cls_head = nn.Linear(feature_dim, num_classes + 1)
        self.box_head = nn.Linear(feature_dim, 4)

    @torch.no_grad()
    def forward(self, image: torch.Tensor):
        """Run one image (3, H, W) through backbone and region heads.

        Returns (boxes, probs, features): refined pixel boxes (N, 4),
        full softmax incl. background last (N, num_classes + 1), and the
        pooled per-region representation (N, feature_dim).
        """
        if image.ndim != 3 or image.shape[0] != 3:
            raise ValueError(f"expected a (3, H, W) image, got {tuple(image.shape)}")
        _, height, width = image.shape
        fmap = self.backbone(image.unsqueeze(0)).squeeze(0)
        anchors = grid_boxes(height, width, self.grid)

        pooled = []
        for x1, y1, x2, y2 in anchors.tolist():
            region = fmap[:, int(y1):max(int(y2), int(y1) + 1),
                          int(x1):max(int(x2), int(x1) + 1)]
            pooled.append(self.region_pool(region).flatten())
        features = torch.tanh(self.feature_head(torch.stack(pooled)))
        probs = torch.softmax(self.cls_head(features), dim=1)

        sizes = torch.stack([anchors[:, 2] - anchors[:, 0],
                             anchors[:, 3] - anchors[:, 1]], dim=1)
        deltas = torch.tanh(self.box_head(features)) * BOX_DELTA_FRACTION
        shift = deltas[:, :2] * sizes
        scale = 1.0 + deltas[:, 2:] * 0.5
        centers = torch.stack([(anchors[:, 0] + anchors[:, 2]) / 2,
                               (anchors[:, 1] + anchors[:, 3]) / 2], dim=1) + shift
        half = sizes * scale / 2
        boxes = torch.cat([centers - half, centers + half], dim=1)
        boxes[:, 0].clamp_(0.0, width - 1.0)
        boxes[:, 1].clamp_(0.0, height - 1.0)
        boxes[:, 2] = torch.maximum(boxes[:, 2].clamp(1.0, float(width)),
                                    boxes[:, 0] + 1.0)
        boxes[:, 3] = torch.maximum(boxes[:, 3].clamp(1.0, float(height)),
                                    boxes[:, 1] + 1.0)
        return boxes, probs, features


def build_detector(num_classes: int, feature_dim: int, channels: int,
                   grid: int) -> GridProposalDetector:
    model = GridProposalDetector(num_classes, feature_dim, channels, grid)
    model.eval()
    return model
