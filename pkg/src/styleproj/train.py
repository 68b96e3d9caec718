"""Training loop: batched cross-domain sampling, mixup, style projection, AdamW.

All randomness flows from one experiment seed, fanned out into independent
named streams (init, bank, batch order, mixup, validation subset) via
numpy's SeedSequence spawning, so two runs with the same config are
bit-identical. Wall-clock timing is kept on the in-memory report and logged;
exported CSVs stay byte-reproducible.
"""

import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, NonFiniteError, backward, zero_grad
from .metrics import macro_scores
from .mixup import Sample, draw_lambda, mixup
from .model import SegModel, init_model, attach_adapters, seg_loss, total_loss, infer_test_time
from .optim import AdamW
from .stylebank import orthogonality_loss
from .synthdata import DomainDataset, SPLIT_SOURCE


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    lambda_sty: float = 0.1
    style_mode: str = "always"   # "always" or "off"
    mixup_prob: float = 0.5
    mixup_cross_domain: bool = True
    n_bases: int = 8
    seed: int = 0
    channels: int = 16
    classes: int = 2
    weight_decay: float = 0.01
    lora: bool = False
    lora_rank: int = 4
    lora_alpha: float = 8.0
    val_images: int = 12

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.style_mode not in ("always", "off"):
            raise ValueError(f"style_mode must be 'always' or 'off', got {self.style_mode!r}")
        if not 0.0 <= self.mixup_prob <= 1.0:
            raise ValueError(f"mixup_prob must lie in [0, 1], got {self.mixup_prob}")
        if self.lambda_sty < 0 or self.n_bases < 2 or self.channels < 1 or self.classes < 2:
            raise ValueError("lambda_sty >= 0, n_bases >= 2, channels >= 1, classes >= 2 required")


@dataclass
class TrainReport:
    l_seg: list = field(default_factory=list)
    l_sty: list = field(default_factory=list)
    total: list = field(default_factory=list)
    iou: list = field(default_factory=list)
    dice: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def to_csv(self, path: str):
        """Per-epoch records. The seconds column is written as 0 so output
        files are byte-reproducible; measured timing stays on the object."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("epoch,l_seg,l_sty,total,iou,dice,seconds\n")
            for e in range(len(self.total)):
                fh.write(f"{e},{self.l_seg[e]:.17g},{self.l_sty[e]:.17g},"
                         f"{self.total[e]:.17g},{self.iou[e]:.17g},{self.dice[e]:.17g},0\n")


def _source_pool(datasets) -> list[Sample]:
    pool = []
    for ds in datasets:
        if ds.split == SPLIT_SOURCE:
            pool.extend(ds.samples)
    if not pool:
        raise ValueError("need at least one source-split dataset")
    return pool


def _pick_partner(pool, i, rng, cross_domain):
    if cross_domain:
        others = [j for j in range(len(pool)) if pool[j].domain_id != pool[i].domain_id]
        if others:
            return pool[others[int(rng.integers(len(others)))]]
    j = int(rng.integers(len(pool)))
    return pool[j]


def _log(msg: str):
    print(msg, file=sys.stderr)


def train(datasets: list[DomainDataset], cfg: TrainConfig,
          init_from: SegModel | None = None, quiet: bool = False):
    """Train a model on the source-split datasets; returns (model, report).

    ``init_from`` starts from an existing model's conv weights (the
    pretrained-backbone arm); with ``cfg.lora`` those encoder weights are
    frozen and fresh low-rank adapters take the gradient instead.
    """
    pool = _source_pool(datasets)
    bad = {s.num_classes for s in pool} - {cfg.classes}
    if bad:
        raise ValueError(f"datasets carry {bad} classes, config expects {cfg.classes}")
    ss = np.random.SeedSequence(cfg.seed)
    order_ss, mix_ss, val_ss = ss.spawn(3)
    rng_order = np.random.default_rng(order_ss)
    rng_mix = np.random.default_rng(mix_ss)
    rng_val = np.random.default_rng(val_ss)

    model = init_model(cfg.channels, cfg.classes, cfg.n_bases, cfg.seed,
                       style_mode=cfg.style_mode, lora=False)
    if init_from is not None:
        for name in model.weights:
            model.weights[name] = Tensor(init_from.weights[name].data.copy(),
                                         requires_grad=True)
    if cfg.lora:
        attach_adapters(model, cfg.lora_rank, cfg.lora_alpha, cfg.seed)

    train_bank = cfg.style_mode == "always" or cfg.lambda_sty > 0
    params = model.trainable_parameters(include_bank=train_bank)
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    n_val = min(cfg.val_images, len(pool))
    val_idx = rng_val.choice(len(pool), size=n_val, replace=False)
    val_set = [pool[i] for i in val_idx]

    report = TrainReport()
    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        order = rng_order.permutation(len(pool))
        ep_seg, ep_sty, ep_total, n_batches = 0.0, 0.0, 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            batch = [pool[i] for i in batch_idx]
            if cfg.mixup_prob > 0 and rng_mix.random() < cfg.mixup_prob:
                mixed = []
                for i in batch_idx:
                    partner = _pick_partner(pool, int(i), rng_mix, cfg.mixup_cross_domain)
                    mixed.append(mixup(pool[int(i)], partner, draw_lambda(rng_mix)))
                batch = mixed

            zero_grad(params)
            try:
                losses = [seg_loss(model.forward(Tensor(s.image))[0], s.soft_mask)
                          for s in batch]
                l_seg = losses[0]
                for extra in losses[1:]:
                    l_seg = l_seg + extra
                l_seg = l_seg / float(len(losses))
                l_sty = orthogonality_loss(model.bank) if train_bank else Tensor(0.0)
                loss = total_loss(l_seg, l_sty, cfg.lambda_sty)
                backward(loss)
            except NonFiniteError as err:
                raise RuntimeError(f"non-finite loss at epoch {epoch} "
                                   f"batch {n_batches}: {err}") from err
            opt.step()
            ep_seg += l_seg.item()
            ep_sty += l_sty.item()
            ep_total += loss.item()
            n_batches += 1

        try:
            iou_v, dice_v = _validate(model, val_set, cfg.classes)
        except NonFiniteError as err:
            raise RuntimeError(f"non-finite activations while validating after "
                               f"epoch {epoch}: {err}") from err
        report.l_seg.append(ep_seg / n_batches)
        report.l_sty.append(ep_sty / n_batches)
        report.total.append(ep_total / n_batches)
        report.iou.append(iou_v)
        report.dice.append(dice_v)
        report.seconds.append(time.perf_counter() - tic)
        if not quiet:
            _log(f"epoch {epoch:3d}  l_seg {report.l_seg[-1]:.4f}  "
                 f"l_sty {report.l_sty[-1]:.4f}  val iou {iou_v:.4f}  "
                 f"dice {dice_v:.4f}  ({report.seconds[-1]:.2f}s)")
    return model, report


def _validate(model: SegModel, samples, num_classes: int) -> tuple[float, float]:
    scores = []
    for s in samples:
        logits, _ = model.forward(Tensor(s.image))
        scores.append(macro_scores(np.argmax(logits.data, axis=0), s.mask, num_classes))
    arr = np.asarray(scores)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())


def evaluate(model: SegModel, datasets, num_classes: int | None = None):
    """Mean macro IoU/Dice per dataset, inferring in the model's style mode.

    A projection-trained model runs the test-time adaptation path; a plain
    baseline runs without the hook.
    """
    k = num_classes or model.classes
    results = {}
    for ds in datasets:
        scores = []
        for s in ds.samples:
            if model.style_mode == "always":
                pred = infer_test_time(s.image, model)[0]
            else:
                logits, _ = model.forward(Tensor(s.image))
                pred = np.argmax(logits.data, axis=0)
            scores.append(macro_scores(pred, s.mask, k))
        arr = np.asarray(scores)
        results[ds.name] = (ds.split, float(arr[:, 0].mean()), float(arr[:, 1].mean()),
                            len(ds.samples))
    return results
