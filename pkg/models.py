"""
Network models and shared enums for the pageseg pipeline
"""
import enum
from typing import List, Optional, Tuple

import torch
from pydantic import BaseModel, Field, model_validator
from torch import nn

from errors import ShapeError


class PairLabel(int, enum.Enum):
    SIMILAR = 0
    DIFFERENT = 1


class PairStrategy(str, enum.Enum):
    PROXIMITY = "proximity"
    COMPONENT_SIZE = "component_size"
    FOREGROUND_COUNT = "foreground_count"
    BACKGROUND = "background"

    @property
    def label(self) -> PairLabel:
        return PairLabel.SIMILAR if self is PairStrategy.PROXIMITY else PairLabel.DIFFERENT


DIFFERENT_STRATEGIES = (
    PairStrategy.COMPONENT_SIZE,
    PairStrategy.FOREGROUND_COUNT,
    PairStrategy.BACKGROUND,
)


class SegLabel(int, enum.Enum):
    BACKGROUND = 0
    MAIN_TEXT = 1
    SIDE_TEXT = 2


class BinarizationMethod(str, enum.Enum):
    OTSU = "otsu"
    SAUVOLA = "sauvola"


class ThresholdMode(str, enum.Enum):
    FIXED = "fixed"
    AUTO = "auto"


# --- Architecture descriptor ---
# Stored inside every checkpoint so a run stays self-describing

class ConvSpec(BaseModel):
    filters: int = Field(gt=0)
    kernel: int = Field(gt=0)
    stride: int = Field(default=1, gt=0)
    padding: int = Field(default=0, ge=0)
    pool_after: bool = False


class BranchArchitecture(BaseModel):
    input_size: int = Field(default=200, gt=0)
    convs: List[ConvSpec]
    fc: List[int]
    pool_kernel: int = 3
    pool_stride: int = 2
    head_hidden: int = 256

    @model_validator(mode="after")
    def _check_layers(self):
        if not self.convs:
            raise ValueError("branch needs at least one convolutional layer")
        if not self.fc:
            raise ValueError("branch needs at least one fully connected layer")
        return self

    @property
    def embedding_dim(self) -> int:
        return self.fc[-1]

    @classmethod
    def alexnet_like(cls, input_size: int = 200) -> "BranchArchitecture":
        """Five conv layers, max-pool after conv1/conv2/conv5, fc 1024 -> 512"""
        return cls(
            input_size=input_size,
            convs=[
                ConvSpec(filters=96, kernel=11, stride=4, padding=0, pool_after=True),
                ConvSpec(filters=256, kernel=5, stride=1, padding=2, pool_after=True),
                ConvSpec(filters=384, kernel=3, stride=1, padding=1),
                ConvSpec(filters=384, kernel=3, stride=1, padding=1),
                ConvSpec(filters=256, kernel=3, stride=1, padding=1, pool_after=True),
            ],
            fc=[1024, 512],
            head_hidden=256,
        )

    @classmethod
    def miniature(cls, input_size: int = 8, embedding_dim: int = 4) -> "BranchArchitecture":
        """Two conv layers, no pooling; used for gradient checks and quick tests"""
        return cls(
            input_size=input_size,
            convs=[
                ConvSpec(filters=3, kernel=3, stride=1, padding=1),
                ConvSpec(filters=4, kernel=3, stride=1, padding=1),
            ],
            fc=[8, embedding_dim],
            head_hidden=4,
        )


class SiameseBranch(nn.Module):
    """
    One CNN branch: 1 x S x S patch -> embedding vector.
    Every conv and fc layer is followed by ReLU.
    """

    def __init__(self, arch: BranchArchitecture):
        super().__init__()
        self.arch = arch

        layers: List[nn.Module] = []
        in_channels = 1
        for spec in arch.convs:
            layers.append(nn.Conv2d(in_channels, spec.filters, kernel_size=spec.kernel,
                                    stride=spec.stride, padding=spec.padding))
            layers.append(nn.ReLU(inplace=True))
            if spec.pool_after:
                layers.append(nn.MaxPool2d(kernel_size=arch.pool_kernel, stride=arch.pool_stride))
            in_channels = spec.filters
        self.features = nn.Sequential(*layers)

        # Probe the flattened size with a dummy forward pass
        try:
            with torch.no_grad():
                probe = self.features(torch.zeros(1, 1, arch.input_size, arch.input_size))
        except RuntimeError as e:
            raise ShapeError(f"input size {arch.input_size} is too small for this architecture") from e
        flat_size = probe.flatten(1).shape[1]
        if flat_size == 0:
            raise ShapeError(f"input size {arch.input_size} is too small for this architecture")

        fc_layers: List[nn.Module] = []
        in_features = flat_size
        for width in arch.fc:
            fc_layers.append(nn.Linear(in_features, width))
            fc_layers.append(nn.ReLU(inplace=True))
            in_features = width
        self.embedding = nn.Sequential(*fc_layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 1 or x.shape[2] != self.arch.input_size or x.shape[3] != self.arch.input_size:
            raise ShapeError(
                f"expected input of shape (N, 1, {self.arch.input_size}, {self.arch.input_size}), got {tuple(x.shape)}"
            )
        return self.embedding(self.features(x).flatten(1))


class SiameseModel(nn.Module):
    """
    Twin weight-tied branches plus a pair-classification head.
    Both inputs go through the same `branch` module, so there is one parameter set.
    The head returns a logit; sigmoid(logit) is the probability of 'different'.
    """

    def __init__(self, arch: Optional[BranchArchitecture] = None):
        super().__init__()
        self.arch = arch or BranchArchitecture.alexnet_like()
        self.branch = SiameseBranch(self.arch)
        dim = self.arch.embedding_dim
        self.head = nn.Sequential(
            nn.Linear(2 * dim, self.arch.head_hidden),
            nn.ReLU(inplace=True),
            nn.Linear(self.arch.head_hidden, 1),
        )

    def embed_pair(self, x1: torch.Tensor, x2: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.branch(x1), self.branch(x2)

    def forward(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        e1, e2 = self.embed_pair(x1, x2)
        return self.head(torch.cat([e1, e2], dim=1)).squeeze(1)
