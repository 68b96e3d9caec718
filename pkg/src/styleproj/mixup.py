"""Mixup augmentation over image/mask samples.

Images and soft label masks are blended with one shared lambda drawn from
U(0, 1), so the soft-target cross-entropy of a mixed sample is exactly the
lambda-weighted combination of the two originals' losses.
"""

from dataclasses import dataclass

import numpy as np

MIX_DOMAIN = "mix"


@dataclass
class Sample:
    image: np.ndarray      # (3, H, W) float64 in [0, 1]
    mask: np.ndarray       # (H, W) integer class indices
    soft_mask: np.ndarray  # (K, H, W), sums to 1 per pixel
    domain_id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:]:
            raise ValueError(f"mask shape {self.mask.shape} does not match image {self.image.shape}")
        if self.soft_mask.shape[1:] != self.mask.shape:
            raise ValueError(f"soft mask shape {self.soft_mask.shape} does not match mask {self.mask.shape}")

    @property
    def num_classes(self) -> int:
        return self.soft_mask.shape[0]


def one_hot(mask: np.ndarray, num_classes: int) -> np.ndarray:
    """(H, W) class indices -> (K, H, W) one-hot float array."""
    if mask.min() < 0 or mask.max() >= num_classes:
        raise ValueError(f"mask values outside [0, {num_classes})")
    soft = np.zeros((num_classes,) + mask.shape)
    for k in range(num_classes):
        soft[k] = mask == k
    return soft


def make_sample(image: np.ndarray, mask: np.ndarray, num_classes: int, domain_id: str) -> Sample:
    return Sample(image=np.asarray(image, dtype=np.float64),
                  mask=np.asarray(mask, dtype=np.int64),
                  soft_mask=one_hot(np.asarray(mask, dtype=np.int64), num_classes),
                  domain_id=domain_id)


def draw_lambda(rng: np.random.Generator) -> float:
    """Uniform draw from the open interval (0, 1)."""
    while True:
        lam = float(rng.random())
        if 0.0 < lam < 1.0:
            return lam


def mixup(p: Sample, q: Sample, lam: float) -> Sample:
    """Blend two samples: lam * p + (1 - lam) * q for image and soft mask.

    The hard mask of the result is the per-pixel argmax of the mixed soft
    mask (ties resolve to the lower class index). Exact at the endpoints:
    lam=1 reproduces p and lam=0 reproduces q bit-for-bit.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if p.image.shape != q.image.shape or p.soft_mask.shape != q.soft_mask.shape:
        raise ValueError(f"sample shapes differ: image {p.image.shape} vs {q.image.shape}, "
                         f"soft mask {p.soft_mask.shape} vs {q.soft_mask.shape}")
    image = lam * p.image + (1.0 - lam) * q.image
    soft = lam * p.soft_mask + (1.0 - lam) * q.soft_mask
    return Sample(image=np.clip(image, 0.0, 1.0),
                  mask=np.argmax(soft, axis=0),
                  soft_mask=soft,
                  domain_id=MIX_DOMAIN)
