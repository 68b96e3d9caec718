"""Small encoder/decoder segmentation network with a style-projection hook.

Encoder: three 3x3 conv blocks (3->C, C->C, C->C) with one 2x2 average-pool
downsample, producing a C x H/2 x W/2 stage-1 feature map. The style hook
decomposes that map, projects its style onto the basis bank, and recomposes;
the decoder (two conv blocks plus bilinear 2x upsample) maps the restyled
features to per-pixel class logits at input resolution.

Optionally each encoder conv can carry a low-rank adapter: the base weight is
frozen and the effective weight is base + (alpha/r) * B @ A, with B zero at
creation so a fresh adapter is an exact no-op.
"""

import io
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, conv2d, avgpool2, upsample2, relu, exp as texp, log as tlog
from .autodiff import tsum, tmean, mul, reshape, matmul
from .stylebank import StyleBank, init_bank, project_style
from .styleops import decompose, recompose, style_stats

CHECKPOINT_MAGIC = b"T3S1"

STYLE_MODES = ("always", "off")

# encoder conv layers eligible for low-rank adaptation
LORA_TARGETS = ("enc1", "enc2", "enc3")


@dataclass
class LoraAdapter:
    layer: str
    rank: int
    alpha: float
    a: Tensor  # (rank, fan_in)
    b: Tensor  # (fan_out, rank)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank


def make_adapter(layer: str, weight_shape, rank: int, alpha: float,
                 rng: np.random.Generator) -> LoraAdapter:
    fan_out = weight_shape[0]
    fan_in = int(np.prod(weight_shape[1:]))
    if rank < 1 or rank > min(fan_in, fan_out):
        raise ValueError(f"rank {rank} out of range for weight {tuple(weight_shape)}")
    a = rng.standard_normal((rank, fan_in)) / np.sqrt(fan_in)
    return LoraAdapter(layer=layer, rank=rank, alpha=alpha,
                       a=Tensor(a, requires_grad=True),
                       b=Tensor(np.zeros((fan_out, rank)), requires_grad=True))


class SegModel:
    """Parameter container plus the forward pipeline."""

    def __init__(self, channels: int, classes: int, bank: StyleBank,
                 weights: dict[str, Tensor], adapters: dict[str, LoraAdapter] | None = None,
                 lora_enabled: bool = False, style_mode: str = "always"):
        if style_mode not in STYLE_MODES:
            raise ValueError(f"style_mode must be one of {STYLE_MODES}, got {style_mode!r}")
        self.channels = channels
        self.classes = classes
        self.bank = bank
        self.weights = weights
        self.adapters = adapters or {}
        self.lora_enabled = lora_enabled
        self.style_mode = style_mode

    # --- parameter bookkeeping -------------------------------------------

    @staticmethod
    def layer_shapes(channels: int, classes: int) -> dict[str, tuple]:
        c, k = channels, classes
        return {
            "enc1_w": (c, 3, 3, 3), "enc1_b": (c, 1, 1),
            "enc2_w": (c, c, 3, 3), "enc2_b": (c, 1, 1),
            "enc3_w": (c, c, 3, 3), "enc3_b": (c, 1, 1),
            "dec1_w": (c, c, 3, 3), "dec1_b": (c, 1, 1),
            "dec2_w": (k, c, 3, 3), "dec2_b": (k, 1, 1),
        }

    def trainable_parameters(self, include_bank: bool = True) -> list[Tensor]:
        params = []
        for name, tensor in self.weights.items():
            layer = name.rsplit("_", 1)[0]
            if self.lora_enabled and layer in self.adapters and name.endswith("_w"):
                continue  # frozen base weight
            params.append(tensor)
        if self.lora_enabled:
            for ad in self.adapters.values():
                params.extend([ad.a, ad.b])
        if include_bank:
            params.extend(self.bank.parameters())
        return params

    def all_arrays(self) -> dict[str, np.ndarray]:
        """Every stored array in a fixed order (for checkpoints and checksums)."""
        out = {name: self.weights[name].data for name in sorted(self.weights)}
        out["bank_raw_mu"] = self.bank.raw_mu.data
        out["bank_raw_sigma"] = self.bank.raw_sigma.data
        for layer in sorted(self.adapters):
            out[f"lora_{layer}_a"] = self.adapters[layer].a.data
            out[f"lora_{layer}_b"] = self.adapters[layer].b.data
        return out

    def checksum(self) -> int:
        import zlib
        crc = 0
        for name, arr in self.all_arrays().items():
            crc = zlib.crc32(name.encode() + arr.tobytes(), crc)
        return crc

    # --- forward pipeline --------------------------------------------------

    def effective_weight(self, layer: str) -> Tensor:
        base = self.weights[f"{layer}_w"]
        if not (self.lora_enabled and layer in self.adapters):
            return base
        ad = self.adapters[layer]
        delta = matmul(ad.b, ad.a)  # (fan_out, fan_in)
        return base.detach() + Tensor(ad.scaling) * reshape(delta, base.shape)

    def _block(self, x: Tensor, layer: str) -> Tensor:
        return relu(conv2d(x, self.effective_weight(layer)) + self.weights[f"{layer}_b"])

    def encode(self, image: Tensor) -> Tensor:
        """Image (3, H, W) -> stage-1 features (C, H/2, W/2); H, W multiples of 4."""
        if image.data.ndim != 3 or image.shape[0] != 3:
            raise ValueError(f"image must be (3, H, W), got {image.shape}")
        if image.shape[1] % 4 or image.shape[2] % 4:
            raise ValueError(f"spatial dims must be multiples of 4, got {image.shape}")
        h = self._block(image, "enc1")
        h = avgpool2(h)
        h = self._block(h, "enc2")
        return self._block(h, "enc3")

    def style_hook(self, f: Tensor, mode: str | None = None):
        """Restyle stage-1 features; returns (features, diagnostics or None)."""
        mode = self.style_mode if mode is None else mode
        if mode not in STYLE_MODES:
            raise ValueError(f"style mode must be one of {STYLE_MODES}, got {mode!r}")
        if mode == "off":
            return f, None
        style, content = decompose(f)
        projected, weights = project_style(style, self.bank)
        return recompose(projected, content), (style, projected, weights)

    def decode(self, f: Tensor) -> Tensor:
        """Stage-1 features (C, h, w) -> class logits (K, 2h, 2w)."""
        h = self._block(f, "dec1")
        logits = conv2d(h, self.effective_weight("dec2")) + self.weights["dec2_b"]
        return upsample2(logits)

    def forward(self, image: Tensor, mode: str | None = None):
        f = self.encode(image)
        f2, diag = self.style_hook(f, mode)
        return self.decode(f2), diag


def init_model(channels: int, classes: int, n_bases: int, seed: int,
               style_mode: str = "always", lora: bool = False,
               lora_rank: int = 4, lora_alpha: float = 8.0) -> SegModel:
    """He-initialized model; fully determined by the seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(0,))
    init_ss, bank_ss = ss.spawn(2)
    rng = np.random.default_rng(init_ss)
    weights = {}
    for name, shape in SegModel.layer_shapes(channels, classes).items():
        if name.endswith("_w"):
            fan_in = int(np.prod(shape[1:]))
            weights[name] = Tensor(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in),
                                   requires_grad=True)
        else:
            weights[name] = Tensor(np.zeros(shape), requires_grad=True)
    bank = init_bank(n_bases, channels, int(bank_ss.generate_state(1)[0]))
    adapters = {}
    if lora:
        shapes = SegModel.layer_shapes(channels, classes)
        for layer in LORA_TARGETS:
            adapters[layer] = make_adapter(layer, shapes[f"{layer}_w"], lora_rank,
                                           lora_alpha, rng)
    return SegModel(channels, classes, bank, weights, adapters, lora, style_mode)


def attach_adapters(model: SegModel, rank: int, alpha: float, seed: int) -> SegModel:
    """Freeze base conv weights of the encoder and bolt on fresh adapters."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    shapes = SegModel.layer_shapes(model.channels, model.classes)
    adapters = {layer: make_adapter(layer, shapes[f"{layer}_w"], rank, alpha, rng)
                for layer in LORA_TARGETS}
    model.adapters = adapters
    model.lora_enabled = True
    return model


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def seg_loss(logits: Tensor, soft_mask: np.ndarray) -> Tensor:
    """Soft-target cross-entropy, averaged over pixels.

    Computed as mean(logsumexp(logits)) - mean(sum_k t_k * logits_k) after a
    constant per-pixel max shift, which leaves the value and gradient exact.
    """
    if logits.shape != soft_mask.shape:
        raise ValueError(f"logits {logits.shape} vs target {soft_mask.shape}")
    sums = soft_mask.sum(axis=0)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValueError("soft mask rows must sum to 1 per pixel")
    k, h, w = logits.shape
    shift = np.broadcast_to(logits.data.max(axis=0, keepdims=True), logits.shape).copy()
    s = logits - Tensor(shift)
    lse = tlog(tsum(texp(s), axis=0))          # (h, w)
    dot = tsum(mul(Tensor(soft_mask), s))      # scalar
    return tmean(lse) - dot / float(h * w)


def total_loss(l_seg: Tensor, l_sty: Tensor, lambda_sty: float) -> Tensor:
    if lambda_sty < 0:
        raise ValueError(f"lambda_sty must be nonnegative, got {lambda_sty}")
    return l_seg + Tensor(lambda_sty) * l_sty


# ---------------------------------------------------------------------------
# test-time inference
# ---------------------------------------------------------------------------

@dataclass
class StyleDiagnostics:
    pre: np.ndarray      # (2C,) style before projection
    post: np.ndarray     # (2C,) style after projection
    w_mu: np.ndarray     # (n,)
    w_sigma: np.ndarray  # (n,)


def infer_test_time(image: np.ndarray, model: SegModel) -> tuple[np.ndarray, StyleDiagnostics]:
    """Single forward pass with projection on; no parameter updates.

    Returns the argmax class mask and the pre/post projection styles with
    the mixing weights.
    """
    logits, diag = model.forward(Tensor(np.asarray(image, dtype=np.float64)), mode="always")
    pre, post, weights = diag
    mask = np.argmax(logits.data, axis=0)
    w_mu, w_sigma = weights.as_arrays()
    return mask, StyleDiagnostics(pre=pre.as_array(), post=post.as_array(),
                                  w_mu=w_mu, w_sigma=w_sigma)


def extract_styles(image: np.ndarray, model: SegModel) -> tuple[np.ndarray, np.ndarray]:
    """(pre, post) projection style vectors (each 2C) for one image."""
    f = model.encode(Tensor(np.asarray(image, dtype=np.float64)))
    style = style_stats(f)
    projected, _ = project_style(style, model.bank)
    return style.as_array(), projected.as_array()


# ---------------------------------------------------------------------------
# checkpoint format: magic, text manifest of (name, dtype, shape), raw arrays
# ---------------------------------------------------------------------------

def _meta_arrays(model: SegModel) -> dict[str, np.ndarray]:
    ad = next(iter(model.adapters.values()), None)
    return {
        "meta_channels": np.array([model.channels], dtype=np.float64),
        "meta_classes": np.array([model.classes], dtype=np.float64),
        "meta_n_bases": np.array([model.bank.n], dtype=np.float64),
        "meta_style_always": np.array([1.0 if model.style_mode == "always" else 0.0]),
        "meta_lora_enabled": np.array([1.0 if model.lora_enabled else 0.0]),
        "meta_lora_rank": np.array([float(ad.rank) if ad else 0.0]),
        "meta_lora_alpha": np.array([float(ad.alpha) if ad else 0.0]),
    }


def save_checkpoint(model: SegModel, path: str):
    entries = {**_meta_arrays(model), **model.all_arrays()}
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC + b"\n")
    for name, arr in entries.items():
        dims = "x".join(str(d) for d in arr.shape)
        buf.write(f"{name} f64 {dims}\n".encode("ascii"))
    buf.write(b"\n")
    for arr in entries.values():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path: str) -> SegModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != CHECKPOINT_MAGIC + b"\n":
        raise ValueError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    head_end = blob.index(b"\n\n", 4)
    manifest = blob[5:head_end].decode("ascii").splitlines()
    offset = head_end + 2
    arrays = {}
    for line in manifest:
        name, dtype, dims = line.split()
        if dtype != "f64":
            raise ValueError(f"{path}: unsupported dtype {dtype!r} for {name}")
        shape = tuple(int(d) for d in dims.split("x")) if dims else ()
        count = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count,
                                     offset=offset).reshape(shape).copy()
        offset += count * 8
    channels = int(arrays["meta_channels"][0])
    classes = int(arrays["meta_classes"][0])
    n_bases = int(arrays["meta_n_bases"][0])
    style_mode = "always" if arrays["meta_style_always"][0] else "off"
    lora_enabled = bool(arrays["meta_lora_enabled"][0])
    bank = init_bank(n_bases, channels, 0)
    bank.raw_mu = Tensor(arrays["bank_raw_mu"], requires_grad=True)
    bank.raw_sigma = Tensor(arrays["bank_raw_sigma"], requires_grad=True)
    weights = {name: Tensor(arrays[name], requires_grad=True)
               for name in SegModel.layer_shapes(channels, classes)}
    adapters = {}
    rank = int(arrays["meta_lora_rank"][0])
    alpha = float(arrays["meta_lora_alpha"][0])
    for layer in LORA_TARGETS:
        if f"lora_{layer}_a" in arrays:
            adapters[layer] = LoraAdapter(layer=layer, rank=rank, alpha=alpha,
                                          a=Tensor(arrays[f"lora_{layer}_a"], requires_grad=True),
                                          b=Tensor(arrays[f"lora_{layer}_b"], requires_grad=True))
    return SegModel(channels, classes, bank, weights, adapters, lora_enabled, style_mode)
