"""Item representation learning.

Raw per-item inputs (text embedding, image embedding, scalar price) are
turned into one comprehensive item embedding:

  * text / image vectors go through per-head parametric whitening
    (v - b_k) W_k, prices through a sinusoidal encoding followed by per-head
    linear projection;
  * the n_h projected heads are mixed by Gaussian routing: softmax weights
    drawn from N(v B, diag(softplus(v U)^2)) (mean used at eval time);
  * transformed text and image embeddings are fused by elementwise product;
  * the final embedding is z_text + z_image + z_price + beta * fused.

Ablation flags zero out individual terms; linear_routing collapses the
mixture to the first head for the no-MoE variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, softmax, stack
from .dataio import ItemRecord
from .errors import ConfigError, DataError

MODALITIES = ("text", "image", "price")


@dataclass
class IrlConfig:
    d: int = 256
    n_h: int = 8
    d_p: int = 64
    omega: float = 50_000.0
    beta: float = 0.5
    price_norm_max: float = 100.0
    zero_text: bool = False
    zero_image: bool = False
    zero_price: bool = False
    zero_fusion: bool = False
    linear_routing: bool = False

    def validate(self):
        if self.d < 1 or self.n_h < 1 or self.d_p < 1:
            raise ConfigError("d, n_h and d_p must be >= 1")
        if self.d_p % 2 != 0:
            raise ConfigError("d_p must be even (sin/cos pairs)")
        if not 0.0 < self.beta < 1.0:
            raise ConfigError("beta must lie in (0, 1)")
        if self.omega <= 0:
            raise ConfigError("omega must be > 0")
        if self.price_norm_max <= 0:
            raise ConfigError("price_norm_max must be > 0")


@dataclass
class IrlParams:
    """All trainable item-representation parameters.

    shift[m][k] is the whitening shift (text/image) or projection bias
    (price) of head k; proj[m][k] the head's projection matrix;
    route_mean[m]/route_std[m] the routing parameter matrices.
    """

    shift: dict = field(default_factory=dict)   # modality -> [Tensor (d_in,)] * n_h
    proj: dict = field(default_factory=dict)    # modality -> [Tensor (d_in, d)] * n_h
    route_mean: dict = field(default_factory=dict)  # modality -> Tensor (d_in, n_h)
    route_std: dict = field(default_factory=dict)   # modality -> Tensor (d_in, n_h)

    def named_tensors(self):
        out = []
        for m in MODALITIES:
            for k, t in enumerate(self.shift[m]):
                out.append((f"irl.{m}.shift{k}", t))
            for k, t in enumerate(self.proj[m]):
                out.append((f"irl.{m}.proj{k}", t))
            out.append((f"irl.{m}.route_mean", self.route_mean[m]))
            out.append((f"irl.{m}.route_std", self.route_std[m]))
        return out


# ----------------------------------------------------------------------
# price encoding


def _two_sum_is_exact(a: float, b: float) -> bool:
    tot = a + b
    bb = tot - a
    err = (a - (tot - bb)) + (b - bb)
    return tot == 1.0 and err == 0.0


def _pair_exact(s: float, c: float) -> tuple[float, float]:
    """Nudge a (sin, cos) pair by a few ulp so its rounded squares sum to
    exactly 1.0 as reals.

    libm sin/cos are only faithfully rounded, so s*s + c*c misses 1.0 by an
    ulp or two for ~20% of angles. The larger component is walked +-512 ulp;
    for each candidate `big`, 1 - big^2 is exact by Sterbenz, and we look
    for a representable `small` whose rounded square hits it exactly. The
    total perturbation stays below ~1e-13, far inside libm accuracy slack.
    """
    if _two_sum_is_exact(s * s, c * c):
        return s, c
    swapped = abs(c) > abs(s)
    big = abs(c) if swapped else abs(s)
    up = down = big
    for step in range(513):
        if step == 0:
            candidates = (big,)
        else:
            up = math.nextafter(up, math.inf)
            down = math.nextafter(down, -math.inf)
            candidates = (up, down)
        for bcand in candidates:
            b2 = bcand * bcand
            if not 0.5 <= b2 <= 1.0:
                continue
            t = 1.0 - b2  # exact: Sterbenz subtraction
            g = math.sqrt(t)
            for scand in (
                g,
                math.nextafter(g, 0.0),
                math.nextafter(g, math.inf),
                math.nextafter(math.nextafter(g, 0.0), 0.0),
                math.nextafter(math.nextafter(g, math.inf), math.inf),
            ):
                if scand * scand == t:
                    if swapped:
                        return math.copysign(scand, s), math.copysign(bcand, c)
                    return math.copysign(bcand, s), math.copysign(scand, c)
    return s, c  # no representable fix found; keep libm values


def price_frequencies(d_p: int, omega: float) -> np.ndarray:
    j = np.arange(d_p // 2)
    return omega ** (-2.0 * j / d_p)


def encode_prices(prices: np.ndarray, d_p: int, omega: float) -> np.ndarray:
    """Sinusoidal encoding of a batch of (normalized) prices -> (n, d_p).

    Entry 2j is sin(w_j p), entry 2j+1 cos(w_j p) with w_j = omega^(-2j/d_p).
    Pairs are evaluated so each one's squared entries sum to exactly 1.0,
    keeping the embedding's squared norm exactly d_p/2.
    """
    if d_p % 2 != 0:
        raise ConfigError("d_p must be even")
    prices = np.asarray(prices, dtype=np.float64)
    if not np.all(np.isfinite(prices)):
        raise DataError("non-finite price")
    angles = prices[:, None] * price_frequencies(d_p, omega)[None, :]
    sin = np.sin(angles)
    cos = np.cos(angles)
    a, b = sin * sin, cos * cos
    tot = a + b
    bb = tot - a
    err = (a - (tot - bb)) + (b - bb)
    for i, j in zip(*np.nonzero((tot != 1.0) | (err != 0.0))):
        sin[i, j], cos[i, j] = _pair_exact(float(sin[i, j]), float(cos[i, j]))
    out = np.empty((len(prices), d_p))
    out[:, 0::2] = sin
    out[:, 1::2] = cos
    return out


def encode_price(price: float, d_p: int, omega: float) -> np.ndarray:
    """Sinusoidal embedding of one normalized price (see encode_prices)."""
    return encode_prices(np.array([price]), d_p, omega)[0]


# ----------------------------------------------------------------------
# transformation operators (work on Tensors and, where noted, plain arrays)


def whiten_project(v, shift, proj):
    """Parametric whitening (v - shift) @ proj for one head."""
    if v.shape[-1] != shift.shape[-1] or v.shape[-1] != proj.shape[-2]:
        raise DataError(
            f"whiten_project shape mismatch: v {v.shape}, shift {shift.shape}, "
            f"proj {proj.shape}"
        )
    return (v - shift) @ proj


def linear_project(v, proj, bias):
    """Linear projection v @ proj + bias for one head."""
    if v.shape[-1] != proj.shape[-2] or proj.shape[-1] != bias.shape[-1]:
        raise DataError(
            f"linear_project shape mismatch: v {v.shape}, proj {proj.shape}, "
            f"bias {bias.shape}"
        )
    return v @ proj + bias


def gaussian_route(v_raw: Tensor, heads, route_mean: Tensor, route_std: Tensor,
                   rng_mode: str = "mean", rng=None) -> Tensor:
    """Mix per-head embeddings with softmax weights from a learned Gaussian.

    v_raw: (n, d_in) raw modality embeddings driving the routing.
    heads: list of n_h Tensors (n, d), or an already stacked (n, n_h, d).
    In "sample" mode the logits are reparameterized mu + sigma * eps with
    eps ~ N(0, I) drawn from rng; "mean" mode uses mu and is deterministic.
    """
    if isinstance(heads, (list, tuple)):
        if len(heads) == 0:
            raise DataError("gaussian_route requires at least one head")
        heads = stack(heads, axis=1)
    n, n_h, d = heads.shape
    if route_mean.shape != (v_raw.shape[-1], n_h) or route_std.shape != route_mean.shape:
        raise DataError("routing parameter shape mismatch")
    mu = v_raw @ route_mean
    if rng_mode == "mean":
        alpha = mu
    elif rng_mode == "sample":
        if rng is None:
            raise ConfigError("sample mode requires an rng")
        sigma = (v_raw @ route_std).softplus()
        eps = Tensor(rng.standard_normal((n, n_h)))
        alpha = mu + sigma * eps
    else:
        raise ConfigError(f"unknown rng_mode {rng_mode!r}")
    weights = softmax(alpha, axis=-1)
    return (weights.reshape(n, n_h, 1) * heads).sum(axis=1)


def fuse(z_text, z_image):
    """Hadamard fusion of transformed text and image embeddings."""
    if z_text.shape != z_image.shape:
        raise DataError(f"fuse shape mismatch: {z_text.shape} vs {z_image.shape}")
    return z_text * z_image


def transform_modality(v: Tensor, modality: str, params: IrlParams, cfg: IrlConfig,
                       rng_mode: str = "mean", rng=None) -> Tensor:
    """Project one modality through its heads and route them to (n, d)."""
    shifts, projs = params.shift[modality], params.proj[modality]
    if cfg.linear_routing:
        if modality == "price":
            return linear_project(v, projs[0], shifts[0])
        return whiten_project(v, shifts[0], projs[0])
    if modality == "price":
        heads = [linear_project(v, projs[k], shifts[k]) for k in range(cfg.n_h)]
    else:
        heads = [whiten_project(v, shifts[k], projs[k]) for k in range(cfg.n_h)]
    return gaussian_route(v, heads, params.route_mean[modality],
                          params.route_std[modality], rng_mode, rng)


def embed_table(text: Tensor, image: Tensor, price_emb: Tensor,
                params: IrlParams, cfg: IrlConfig,
                rng_mode: str = "mean", rng=None,
                interaction: Tensor | None = None) -> dict:
    """Comprehensive embeddings for a batch of items.

    Returns z_text / z_image / z_price (each (n, d); zeros when ablated) and
    `item`, the summed embedding. `interaction` optionally adds a per-item
    learned embedding table row-aligned with the batch.
    """
    n = text.shape[0]
    zero = Tensor(np.zeros((n, cfg.d)))
    z_t = zero if cfg.zero_text else transform_modality(text, "text", params, cfg, rng_mode, rng)
    z_m = zero if cfg.zero_image else transform_modality(image, "image", params, cfg, rng_mode, rng)
    z_p = zero if cfg.zero_price else transform_modality(price_emb, "price", params, cfg, rng_mode, rng)
    fused = zero if cfg.zero_fusion else fuse(z_t, z_m)
    item = z_t + z_m + z_p + cfg.beta * fused
    if interaction is not None:
        item = item + interaction
    return {"z_text": z_t, "z_image": z_m, "z_price": z_p, "item": item}


def item_embedding(item: ItemRecord, params: IrlParams, cfg: IrlConfig,
                   rng_mode: str = "mean", rng=None) -> Tensor:
    """Comprehensive embedding of a single item; price taken as already
    normalized. Returns a (d,) Tensor."""
    d_text = params.shift["text"][0].shape[-1]
    d_image = params.shift["image"][0].shape[-1]
    if item.text_emb.shape != (d_text,) or item.image_emb.shape != (d_image,):
        raise DataError(
            f"item {item.item_id}: modality dims {item.text_emb.shape}/"
            f"{item.image_emb.shape} do not match parameters"
        )
    text = Tensor(np.asarray(item.text_emb, dtype=np.float64)[None, :])
    image = Tensor(np.asarray(item.image_emb, dtype=np.float64)[None, :])
    price_emb = Tensor(encode_prices(np.array([item.price]), cfg.d_p, cfg.omega))
    out = embed_table(text, image, price_emb, params, cfg, rng_mode, rng)
    return out["item"].reshape(cfg.d)
