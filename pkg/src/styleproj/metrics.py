"""Segmentation overlap metrics and style-embedding export.

IoU and Dice are macro-averaged: per class first, then over images. A class
absent from both prediction and ground truth scores 1.0 for that image.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionCounts:
    tp: np.ndarray  # per-class true positive pixel counts
    fp: np.ndarray
    fn: np.ndarray


def confusion_counts(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> ConfusionCounts:
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = np.zeros(num_classes, dtype=np.int64)
    fp = np.zeros(num_classes, dtype=np.int64)
    fn = np.zeros(num_classes, dtype=np.int64)
    for k in range(num_classes):
        p = pred == k
        g = gt == k
        tp[k] = np.count_nonzero(p & g)
        fp[k] = np.count_nonzero(p & ~g)
        fn[k] = np.count_nonzero(~p & g)
    return ConfusionCounts(tp=tp, fp=fp, fn=fn)


def iou(pred: np.ndarray, gt: np.ndarray, k: int, num_classes: int | None = None) -> float:
    counts = confusion_counts(pred, gt, (num_classes or k + 1))
    denom = counts.tp[k] + counts.fp[k] + counts.fn[k]
    return 1.0 if denom == 0 else counts.tp[k] / denom


def dice(pred: np.ndarray, gt: np.ndarray, k: int, num_classes: int | None = None) -> float:
    counts = confusion_counts(pred, gt, (num_classes or k + 1))
    denom = 2 * counts.tp[k] + counts.fp[k] + counts.fn[k]
    return 1.0 if denom == 0 else 2 * counts.tp[k] / denom


def macro_scores(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> tuple[float, float]:
    """(IoU, Dice) averaged over classes for one mask pair."""
    counts = confusion_counts(pred, gt, num_classes)
    ious, dices = [], []
    for k in range(num_classes):
        u = counts.tp[k] + counts.fp[k] + counts.fn[k]
        ious.append(1.0 if u == 0 else counts.tp[k] / u)
        d = 2 * counts.tp[k] + counts.fp[k] + counts.fn[k]
        dices.append(1.0 if d == 0 else 2 * counts.tp[k] / d)
    return float(np.mean(ious)), float(np.mean(dices))


def mean_scores(pairs, num_classes: int) -> tuple[float, float]:
    """Macro IoU/Dice averaged over an iterable of (pred, gt) mask pairs."""
    scores = [macro_scores(p, g, num_classes) for p, g in pairs]
    if not scores:
        raise ValueError("no mask pairs to score")
    arr = np.asarray(scores)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


# ---------------------------------------------------------------------------
# style embedding export (one pre and one post row per sample)
# ---------------------------------------------------------------------------

def export_styles(datasets, model, path: str) -> int:
    """Write per-sample pre/post projection styles to CSV; returns row count.

    Header: domain, split, phase, then the 2C style coordinates (mu || sigma).
    """
    from .model import extract_styles

    dim = 2 * model.channels
    rows = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        coords = ",".join(f"c{i}" for i in range(dim))
        fh.write(f"domain,split,phase,{coords}\n")
        for ds in datasets:
            for sample in ds.samples:
                pre, post = extract_styles(sample.image, model)
                for phase, vec in (("pre", pre), ("post", post)):
                    vals = ",".join(f"{v:.17g}" for v in vec)
                    fh.write(f"{ds.name},{ds.split},{phase},{vals}\n")
                    rows += 1
    return rows


def read_style_csv(path: str):
    """Inverse of export_styles: (domains, splits, phases, matrix)."""
    domains, splits, phases, vecs = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        dim = len(header.strip().split(",")) - 3
        for line in fh:
            parts = line.strip().split(",")
            domains.append(parts[0])
            splits.append(parts[1])
            phases.append(parts[2])
            vecs.append([float(v) for v in parts[3:]])
            if len(vecs[-1]) != dim:
                raise ValueError(f"{path}: row with {len(vecs[-1])} coords, expected {dim}")
    return domains, splits, phases, np.asarray(vecs)


# ---------------------------------------------------------------------------
# 2-D linear projection by power iteration with deflation
# ---------------------------------------------------------------------------

@dataclass
class Pca2dResult:
    coords: np.ndarray          # (m, 2)
    retained_variance: float    # fraction of total variance in the two axes
    zero_variance: bool


def _power_direction(cov: np.ndarray, ortho: np.ndarray | None,
                     tol: float = 1e-9, max_iter: int = 1000) -> tuple[np.ndarray, float]:
    d = cov.shape[0]
    v = np.zeros(d)
    v[int(np.argmax(np.diag(cov)))] = 1.0
    if ortho is not None:
        v -= (v @ ortho) * ortho
        norm = np.linalg.norm(v)
        if norm < 1e-300:
            # start collinear with the removed direction; fall back to the
            # first coordinate not aligned with it
            v = np.zeros(d)
            v[int(np.argmin(np.abs(ortho)))] = 1.0
            v -= (v @ ortho) * ortho
            norm = np.linalg.norm(v)
        v /= norm
    for _ in range(max_iter):
        nxt = cov @ v
        if ortho is not None:
            nxt -= (nxt @ ortho) * ortho
        norm = np.linalg.norm(nxt)
        if norm < 1e-300:
            break  # eigenvalue ~0; current v is as good as any
        nxt /= norm
        if np.linalg.norm(nxt - v) < tol:
            v = nxt
            break
        v = nxt
    # deterministic sign: largest-magnitude component positive
    lead = int(np.argmax(np.abs(v)))
    if v[lead] < 0:
        v = -v
    return v, float(v @ cov @ v)


def pca2d(points: np.ndarray) -> Pca2dResult:
    """Project rows onto the top two principal directions of the centered data."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need an (m >= 2, d) matrix, got shape {x.shape}")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / x.shape[0]
    total = float(np.trace(cov))
    if total < 1e-300:
        return Pca2dResult(coords=np.zeros((x.shape[0], 2)), retained_variance=0.0,
                           zero_variance=True)
    v1, lam1 = _power_direction(cov, None)
    v2, lam2 = _power_direction(cov - lam1 * np.outer(v1, v1), v1)
    coords = np.stack([xc @ v1, xc @ v2], axis=1)
    return Pca2dResult(coords=coords, retained_variance=(lam1 + max(lam2, 0.0)) / total,
                       zero_variance=False)
