"""Per-channel style/content decomposition of feature maps.

The "style" of a (C, H, W) feature map is its per-channel spatial mean and
standard deviation; the "content" is the normalized residual. Decomposition
and recomposition are exact inverses (up to the variance floor) and fully
differentiable, so style can be swapped without touching content.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat

# floor added under the square root of the standard deviation; keeps the
# decomposition total and differentiable for constant channels
VAR_EPS = 1e-5


@dataclass
class StyleVector:
    """Per-channel (mu, sigma) pair; both are rank-1 tensors of length C."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape or self.mu.data.ndim != 1:
            raise ValueError(f"style vector needs matching rank-1 mu/sigma, "
                             f"got {self.mu.shape} and {self.sigma.shape}")

    @property
    def channels(self) -> int:
        return self.mu.shape[0]

    def as_array(self) -> np.ndarray:
        """Concatenated (mu || sigma) values as a plain length-2C array."""
        return np.concatenate([self.mu.data, self.sigma.data])

    def concat(self) -> Tensor:
        """Concatenated (mu || sigma) as a graph tensor of length 2C."""
        return concat([self.mu, self.sigma], axis=0)


@dataclass
class ContentMap:
    """Normalized (C, H, W) residual: per-channel mean ~0, std ~1."""

    data: Tensor

    def __post_init__(self):
        if self.data.data.ndim != 3:
            raise ValueError(f"content map must be rank 3, got {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]


def _check_feature_map(f: Tensor):
    if f.data.ndim != 3:
        raise ValueError(f"feature map must be (C, H, W), got {f.shape}")
    if f.shape[1] * f.shape[2] < 1:
        raise ValueError(f"feature map has empty spatial extent: {f.shape}")


def style_stats(f: Tensor) -> StyleVector:
    """Spatial mean and epsilon-floored standard deviation per channel."""
    _check_feature_map(f)
    c = f.shape[0]
    mu = f.mean(axis=(1, 2))
    centered = f - mu.reshape((c, 1, 1))
    var = (centered * centered).mean(axis=(1, 2))
    sigma = (var + VAR_EPS).sqrt()
    return StyleVector(mu=mu, sigma=sigma)


def decompose(f: Tensor) -> tuple[StyleVector, ContentMap]:
    """Split a feature map into style statistics and normalized content."""
    style = style_stats(f)
    c = f.shape[0]
    content = (f - style.mu.reshape((c, 1, 1))) / style.sigma.reshape((c, 1, 1))
    return style, ContentMap(content)


def recompose(style: StyleVector, content: ContentMap) -> Tensor:
    """Apply a style to a content map: sigma * content + mu, per channel."""
    c = content.channels
    if style.channels != c:
        raise ValueError(f"channel mismatch: style has {style.channels}, content has {c}")
    return style.sigma.reshape((c, 1, 1)) * content.data + style.mu.reshape((c, 1, 1))
