"""Noise-prediction network with physics-prior cross-attention.

The denoiser is a stack of gated dilated-convolution residual blocks with
accumulated skip connections.  Each block can fuse features of an
ODE-simulated prior signal through a cross-attention pair: one attention
map queries the prior features against themselves, the other queries the
block's own intermediate features against the prior; a scalar weight
produced from the diffusion-step embedding blends the two maps before they
are applied to the prior's value projection.

Variants:
  "dca"  - blend weight predicted per step by a small head (in [0, 1))
  "fwa"  - blend weight fixed at 0.5
  "na"   - no prior fusion at all; the forward pass never touches the prior
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Tape, Tensor
from .optim import ParameterStore
from .rng import make_rng

VARIANTS = ("dca", "fwa", "na")


@dataclass(frozen=True)
class ModelConfig:
    """Structural hyperparameters of the denoiser."""

    blocks: int = 6           # total residual blocks (reference setting: 30)
    groups: int = 3           # dilation groups (reference setting: 3)
    channels: int = 32        # residual channel width
    attn_dim: int = 32        # attention projection dimension
    time_embed_dim: int = 128
    window: int = 512         # signal window length in samples
    chunk: int = 512          # attention chunk length (tokens per block-diagonal cell)
    variant: str = "dca"
    per_block_alpha: bool = False

    def __post_init__(self):
        if self.blocks % self.groups != 0:
            raise ValueError(f"blocks ({self.blocks}) must be divisible by groups ({self.groups})")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.window % self.chunk != 0:
            raise ValueError(f"window ({self.window}) must be a multiple of chunk ({self.chunk})")
        if self.time_embed_dim % 2 != 0:
            raise ValueError("time_embed_dim must be even")

    @property
    def layers_per_group(self) -> int:
        return self.blocks // self.groups

    def dilation(self, block_index: int) -> int:
        """Dilation doubles at each layer within a group: 1, 2, 4, ..."""
        return 2 ** (block_index % self.layers_per_group)

    def to_dict(self) -> dict:
        return {
            "blocks": self.blocks,
            "groups": self.groups,
            "channels": self.channels,
            "attn_dim": self.attn_dim,
            "time_embed_dim": self.time_embed_dim,
            "window": self.window,
            "chunk": self.chunk,
            "variant": self.variant,
            "per_block_alpha": self.per_block_alpha,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer diffusion steps, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)).reshape(-1, 1)
    half = dim // 2
    exponents = np.arange(half, dtype=np.float64) / max(half - 1, 1)
    freqs = 10.0 ** (-4.0 * exponents)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) / math.sqrt(fan_in)


def init_params(config: ModelConfig, seed: int) -> ParameterStore:
    """Fresh parameter store; the final output projection starts at zero so
    an untrained model predicts zero noise."""
    store = ParameterStore()
    C, d, E = config.channels, config.attn_dim, config.time_embed_dim
    H = 64  # hidden width of the blend-weight head

    def add(name, shape, fan_in, zero=False):
        rng = make_rng(seed, f"init/{name}")
        store.add(name, np.zeros(shape) if zero else _glorot(rng, shape, fan_in))

    add("input.w", (C, 1, 1), 1)
    add("input.b", (C, 1), 1, zero=True)
    if config.variant != "na":
        add("prior_encoder.conv1.w", (C, 1, 3), 3)
        add("prior_encoder.conv1.b", (C, 1), 1, zero=True)
        add("prior_encoder.conv2.w", (C, C, 3), 3 * C)
        add("prior_encoder.conv2.b", (C, 1), 1, zero=True)
    if config.variant == "dca":
        heads = range(config.blocks) if config.per_block_alpha else (None,)
        for h in heads:
            prefix = "alpha_head." if h is None else f"alpha_head.{h}."
            add(prefix + "w1", (E, H), E)
            add(prefix + "b1", (H,), 1, zero=True)
            add(prefix + "w2", (H, 1), H)
            add(prefix + "b2", (1,), 1, zero=True)
    for i in range(config.blocks):
        p = f"block{i}."
        add(p + "conv.w", (2 * C, C, 3), 3 * C)
        add(p + "conv.b", (2 * C, 1), 1, zero=True)
        add(p + "tproj.w", (E, C), E)
        add(p + "tproj.b", (C,), 1, zero=True)
        if config.variant != "na":
            add(p + "attn.wq_prior", (C, d), C)
            add(p + "attn.wq_inter", (C, d), C)
            add(p + "attn.wk", (C, d), C)
            add(p + "attn.wv", (C, d), C)
            add(p + "attn.wo", (d, C), d)
        add(p + "res.w", (C, C, 1), C)
        add(p + "res.b", (C, 1), 1, zero=True)
        add(p + "skip.w", (C, C, 1), C)
        add(p + "skip.b", (C, 1), 1, zero=True)
    add("head.conv1.w", (C, C, 1), C)
    add("head.conv1.b", (C, 1), 1, zero=True)
    add("head.conv2.w", (1, C, 1), C, zero=True)
    add("head.conv2.b", (1, 1), 1, zero=True)
    return store


def dca(
    tape: Tape,
    y_inter: Tensor,
    y_prior: Tensor,
    alpha,
    weights: dict[str, Tensor],
    chunk: int | None = None,
    return_maps: bool = False,
):
    """Blend prior self-attention with intermediate-query cross-attention.

    y_inter, y_prior: (B, C, L) feature maps.  Queries of both maps attend
    over the prior's keys along the time axis; the value projection also
    comes from the prior.  alpha is a Tensor of shape (B, 1, 1) (or a
    python float) blending map 1 (prior queries) against map 2
    (intermediate queries).  Returns fused tokens of shape (B, L, d).
    """
    B, C, L = y_inter.data.shape
    d = weights["wk"].data.shape[1]
    chunk = L if chunk in (None, 0) else chunk
    if L % chunk != 0:
        raise ValueError(f"window {L} not divisible by attention chunk {chunk}")
    n_chunks = L // chunk

    tokens_inter = tape.transpose_last2(y_inter)   # (B, L, C)
    tokens_prior = tape.transpose_last2(y_prior)
    q1 = tape.matmul(tokens_prior, weights["wq_prior"])   # (B, L, d)
    q2 = tape.matmul(tokens_inter, weights["wq_inter"])
    k = tape.matmul(tokens_prior, weights["wk"])
    v = tape.matmul(tokens_prior, weights["wv"])

    if isinstance(alpha, Tensor):
        alpha_t = alpha
        if n_chunks > 1:
            alpha_t = tape.repeat_rows(alpha_t, n_chunks)
    else:
        alpha_t = tape.constant(np.full((1, 1, 1), float(alpha)))
    one_minus = tape.sub(tape.constant(np.ones((1, 1, 1))), alpha_t)

    if n_chunks > 1:
        q1 = tape.reshape(q1, (B * n_chunks, chunk, d))
        q2 = tape.reshape(q2, (B * n_chunks, chunk, d))
        k = tape.reshape(k, (B * n_chunks, chunk, d))
        v = tape.reshape(v, (B * n_chunks, chunk, d))

    kt = tape.transpose_last2(k)
    inv_sqrt_d = 1.0 / math.sqrt(d)
    att1 = tape.softmax_lastaxis(tape.scale(tape.matmul(q1, kt), inv_sqrt_d))
    att2 = tape.softmax_lastaxis(tape.scale(tape.matmul(q2, kt), inv_sqrt_d))
    mix = tape.add(tape.mul(alpha_t, att1), tape.mul(one_minus, att2))
    fused = tape.matmul(mix, v)
    if n_chunks > 1:
        fused = tape.reshape(fused, (B, L, d))
    if return_maps:
        return fused, att1, att2
    return fused


class EpsPredictor:
    """The denoiser: input projection, residual stack, skip-sum head."""

    def __init__(self, config: ModelConfig, seed: int = 0, store: ParameterStore | None = None):
        self.config = config
        self.store = store if store is not None else init_params(config, seed)
        self._inference_tape: Tape | None = None

    # -- parameter binding --------------------------------------------------

    def bind(self, tape: Tape, trainable: bool = True) -> dict[str, Tensor]:
        """Wrap all parameters as tape tensors (leaves when trainable)."""
        wrap = tape.leaf if trainable else tape.constant
        return {name: wrap(value) for name, value in self.store.params.items()}

    # -- submodules -----------------------------------------------------------

    def encode_prior(self, tape: Tape, prior: Tensor, bound: dict[str, Tensor]) -> Tensor:
        """Feature map (B, C, L) of the ODE prior window."""
        h = tape.conv1d_dilated(prior, bound["prior_encoder.conv1.w"], bound["prior_encoder.conv1.b"])
        h = tape.tanh(h)
        return tape.conv1d_dilated(h, bound["prior_encoder.conv2.w"], bound["prior_encoder.conv2.b"])

    def alpha_from_embedding(self, tape: Tape, temb: Tensor, bound: dict[str, Tensor], block: int | None = None) -> Tensor:
        """Blend weight in [0, 1) for each batch item, shape (B, 1, 1)."""
        prefix = "alpha_head." if block is None else f"alpha_head.{block}."
        h = tape.tanh(tape.linear(temb, bound[prefix + "w1"], bound[prefix + "b1"]))
        a = tape.sigmoid(tape.linear(h, bound[prefix + "w2"], bound[prefix + "b2"]))
        return tape.reshape(a, (a.data.shape[0], 1, 1))

    def rbdca_forward(
        self,
        tape: Tape,
        block: int,
        x: Tensor,
        temb: Tensor,
        y_prior: Tensor | None,
        alpha,
        bound: dict[str, Tensor],
    ) -> tuple[Tensor, Tensor]:
        """One residual block; returns (residual_out, skip_out), both (B, C, L)."""
        p = f"block{block}."
        C = self.config.channels
        B = x.data.shape[0]
        tproj = tape.linear(temb, bound[p + "tproj.w"], bound[p + "tproj.b"])
        h = tape.add(x, tape.reshape(tproj, (B, C, 1)))
        gates = tape.conv1d_dilated(h, bound[p + "conv.w"], bound[p + "conv.b"],
                                    dilation=self.config.dilation(block))
        y_inter = tape.mul(
            tape.tanh(tape.narrow(gates, 1, 0, C)),
            tape.sigmoid(tape.narrow(gates, 1, C, C)),
        )
        if y_prior is None:
            y = y_inter
        else:
            w = {key: bound[p + "attn." + key] for key in ("wq_prior", "wq_inter", "wk", "wv")}
            fused = dca(tape, y_inter, y_prior, alpha, w, chunk=self.config.chunk)
            proj = tape.transpose_last2(tape.matmul(fused, bound[p + "attn.wo"]))
            y = tape.add(y_inter, proj)
        residual = tape.add(x, tape.conv1d_dilated(y, bound[p + "res.w"], bound[p + "res.b"]))
        skip = tape.conv1d_dilated(y, bound[p + "skip.w"], bound[p + "skip.b"])
        return residual, skip

    # -- full forward ------------------------------------------------------------

    def forward(
        self,
        tape: Tape,
        x_t: np.ndarray,
        t: np.ndarray,
        prior: np.ndarray | None,
        bound: dict[str, Tensor] | None = None,
        alpha_override: float | None = None,
    ) -> Tensor:
        """Predict the noise content of x_t at step t; output (B, 1, L).

        prior is the ODE-simulated conditioning window (ignored by the
        "na" variant).  alpha_override forces the blend weight to a fixed
        value, which is how the "fwa" variant and several invariance tests
        are realized.
        """
        x_t = np.asarray(x_t, dtype=np.float64)
        if x_t.ndim != 3 or x_t.shape[1] != 1:
            raise ValueError(f"x_t must have shape (B, 1, L), got {x_t.shape}")
        if x_t.shape[2] != self.config.window:
            raise ValueError(f"window length {x_t.shape[2]} != configured {self.config.window}")
        if bound is None:
            bound = self.bind(tape, trainable=False)
        use_prior = self.config.variant != "na"
        if use_prior:
            if prior is None:
                raise ValueError(f"variant {self.config.variant!r} requires a prior window")
            prior = np.asarray(prior, dtype=np.float64)
            if prior.shape != x_t.shape:
                raise ValueError(f"prior shape {prior.shape} must match x_t shape {x_t.shape}")

        temb = tape.constant(time_embedding(t, self.config.time_embed_dim))
        xt = tape.constant(x_t)
        h = tape.tanh(tape.conv1d_dilated(xt, bound["input.w"], bound["input.b"]))
        y_prior = self.encode_prior(tape, tape.constant(prior), bound) if use_prior else None

        alpha = None
        if use_prior:
            if alpha_override is not None:
                alpha = float(alpha_override)
            elif self.config.variant == "fwa":
                alpha = 0.5
            elif not self.config.per_block_alpha:
                alpha = self.alpha_from_embedding(tape, temb, bound)

        skip_sum = None
        for i in range(self.config.blocks):
            block_alpha = alpha
            if use_prior and alpha is None:
                block_alpha = self.alpha_from_embedding(tape, temb, bound, block=i)
            h, skip = self.rbdca_forward(tape, i, h, temb, y_prior, block_alpha, bound)
            skip_sum = skip if skip_sum is None else tape.add(skip_sum, skip)

        out = tape.scale(skip_sum, 1.0 / math.sqrt(self.config.blocks))
        out = tape.tanh(tape.conv1d_dilated(out, bound["head.conv1.w"], bound["head.conv1.b"]))
        return tape.conv1d_dilated(out, bound["head.conv2.w"], bound["head.conv2.b"])

    # -- inference convenience ------------------------------------------------------

    def predictor(self, alpha_override: float | None = None):
        """Callable (x_t, t, conditioning) -> eps_hat for the sampling loop.

        conditioning is a dict with key "prior" holding the (B, 1, L) prior
        window (or None for the "na" variant).  Not thread-safe: the
        returned callable reuses one inference tape.
        """
        tape = Tape()

        def fn(x_t: np.ndarray, t: np.ndarray, conditioning) -> np.ndarray:
            tape.reset()
            prior = conditioning.get("prior") if conditioning else None
            out = self.forward(tape, x_t, t, prior, alpha_override=alpha_override)
            return np.array(out.data)

        return fn

    def alpha_schedule(self, steps: int) -> np.ndarray:
        """Blend weight per diffusion step 1..steps (report helper)."""
        if self.config.variant == "na":
            raise ValueError("the na variant has no blend weight")
        if self.config.variant == "fwa":
            return np.full(steps, 0.5)
        tape = Tape()
        bound = self.bind(tape, trainable=False)
        temb = tape.constant(time_embedding(np.arange(1, steps + 1), self.config.time_embed_dim))
        alphas = []
        blocks = range(self.config.blocks) if self.config.per_block_alpha else (None,)
        for b in blocks:
            a = self.alpha_from_embedding(tape, temb, bound, block=b)
            alphas.append(a.data.reshape(-1))
        out = np.mean(alphas, axis=0)
        tape.reset()
        return out


def make_variant(kind: str):
    """Constructor for one of the fusion variants ("dca", "fwa", "na")."""
    kind = str(kind).lower()
    if kind not in VARIANTS:
        raise ValueError(f"unknown variant {kind!r}, expected one of {VARIANTS}")

    def construct(config: ModelConfig, seed: int = 0) -> EpsPredictor:
        return EpsPredictor(replace(config, variant=kind), seed=seed)

    return construct
