"""Style-projection segmentation workbench.

Feature maps are decomposed into per-channel style statistics and normalized
content; styles are projected onto a learnable orthogonalized basis bank at
train and test time, with mixup augmentation, a small trainable
encoder/decoder, segmentation metrics, and domain-shift diagnostics built on
a self-contained reverse-mode differentiation engine.
"""

from .autodiff import (Tensor, backward, forward_op, grad_check, zero_grad,
                       Graph, NonFiniteError, GradCheckError, DetachedGraphWarning)
from .kernels import active_backend
from .styleops import StyleVector, ContentMap, style_stats, decompose, recompose
from .stylebank import (StyleBank, ProjectionWeights, init_bank, cosine_affinity,
                        project_style, orthogonality_loss, fit_orthogonal)
from .mixup import Sample, mixup, draw_lambda, make_sample, one_hot
from .model import (SegModel, init_model, seg_loss, total_loss, infer_test_time,
                    save_checkpoint, load_checkpoint)
from .optim import AdamW
from .train import TrainConfig, TrainReport, train, evaluate
from .synthdata import (DomainSpec, DomainDataset, gen_domain, default_layout,
                        write_dataset, read_dataset, write_root, read_root)
from .metrics import iou, dice, macro_scores, confusion_counts, pca2d, export_styles
from .shiftdiag import (DomainStyleSummary, ShiftReport, summarize_domain, rho_proxy,
                        gamma_eta, simplex_project)

__version__ = "0.1.0"
