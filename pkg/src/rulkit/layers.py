"""Parameterized network layers built on the autodiff tape.

Layers own their parameters (float32 by default) and are pure during
forward/backward except for the seeded dropout generators. Every layer takes
the active :class:`~rulkit.autodiff.Tape` explicitly, so the same layer can
serve many independent passes.
"""

from __future__ import annotations

import zlib
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeMismatchError, Tape, Tensor


def rng_for(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator keyed by (seed, name).

    Keying by name makes initialization independent of construction order, so
    model variants that share a submodule initialize it identically.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Linear:
    """Affine map ``x @ W + b`` on the trailing dimension."""

    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Parameter(f"{name}.weight", glorot_uniform(rng, in_dim, out_dim))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_dim, dtype=np.float32))

    def __call__(self, tape: Tape, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, tape.leaf(self.weight)), tape.leaf(self.bias))

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class LayerNorm:
    """Per-row normalization of the trailing axis with learned gain and bias."""

    def __init__(self, name: str, dim: int, eps: float = 1e-5):
        self.name = name
        self.eps = eps
        self.gain = Parameter(f"{name}.gain", np.ones(dim, dtype=np.float32))
        self.bias = Parameter(f"{name}.bias", np.zeros(dim, dtype=np.float32))

    def __call__(self, tape: Tape, x: Tensor) -> Tensor:
        normed = ad.layer_norm(x, self.eps)
        return ad.add(ad.mul_rowvec(normed, tape.leaf(self.gain)), tape.leaf(self.bias))

    def parameters(self) -> list[Parameter]:
        return [self.gain, self.bias]


class FeedForward:
    """Position-wise two-layer MLP with ReLU."""

    def __init__(self, name: str, d_model: int, d_ff: int, rng: np.random.Generator):
        self.name = name
        self.lift = Linear(f"{name}.lift", d_model, d_ff, rng)
        self.proj = Linear(f"{name}.proj", d_ff, d_model, rng)

    def __call__(self, tape: Tape, x: Tensor) -> Tensor:
        return self.proj(tape, ad.relu(self.lift(tape, x)))

    def parameters(self) -> list[Parameter]:
        return self.lift.parameters() + self.proj.parameters()


def causal_mask(length: int) -> np.ndarray:
    """Boolean [L, L] mask where position t may attend to positions <= t."""
    return np.tril(np.ones((length, length), dtype=bool))


def scaled_attention(tape: Tape, q: Tensor, k: Tensor, v: Tensor,
                     mask: Optional[np.ndarray] = None,
                     scale_dim: Optional[int] = None) -> tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(scale_dim)) v, with optional boolean masking.

    ``mask[i, j]`` true means query i may attend to key j; masked pairs get an
    additive -inf penalty before the softmax, so their weight is exactly zero.
    A query row with no attendable key is an error. ``scale_dim`` defaults to
    the key width. Returns (output, attention weights).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatchError(f"query/key widths disagree: {q.shape} vs {k.shape}")
    if k.shape != v.shape:
        raise ShapeMismatchError(f"key/value shapes disagree: {k.shape} vs {v.shape}")
    if scale_dim is None:
        scale_dim = k.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.transpose2d(k)), 1.0 / np.sqrt(scale_dim))
    if mask is not None:
        if mask.shape != (q.shape[-2], k.shape[-2]):
            raise ShapeMismatchError(
                f"mask shape {mask.shape} does not match queries x keys "
                f"({q.shape[-2]}, {k.shape[-2]})"
            )
        dead = ~mask.any(axis=-1)
        if dead.any():
            rows = np.flatnonzero(dead).tolist()
            raise ValueError(f"attention mask leaves query rows {rows} with no attendable key")
        penalty = np.where(mask, 0.0, -np.inf).astype(tape.dtype)
        scores = ad.add(scores, tape.constant(np.broadcast_to(penalty, scores.shape)))
    weights = ad.softmax(scores, axis=-1)
    return ad.matmul(weights, v), weights


class MultiHeadAttention:
    """Scaled dot-product attention with ``heads`` parallel subspaces.

    ``scale`` picks the softmax temperature denominator: "head" divides scores
    by sqrt(d_model / heads) (the per-head width), "model" by sqrt(d_model).

    A boolean mask marks attendable (query, key) pairs; masked pairs get an
    additive -inf penalty before the softmax so their weight is exactly zero.
    The per-head weight matrices of the most recent call are kept on
    ``last_weights`` for inspection.
    """

    def __init__(self, name: str, d_model: int, heads: int, rng: np.random.Generator,
                 scale: str = "head"):
        if d_model % heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by heads {heads}")
        if scale not in ("head", "model"):
            raise ValueError(f"unknown attention scale {scale!r}")
        self.name = name
        self.d_model = d_model
        self.heads = heads
        self.head_dim = d_model // heads
        self.scale_dim = self.head_dim if scale == "head" else d_model
        self.q = Linear(f"{name}.q", d_model, d_model, rng)
        self.k = Linear(f"{name}.k", d_model, d_model, rng)
        self.v = Linear(f"{name}.v", d_model, d_model, rng)
        self.out = Linear(f"{name}.out", d_model, d_model, rng)
        self.last_weights: list[np.ndarray] = []

    def __call__(self, tape: Tape, x_q: Tensor, x_k: Tensor, x_v: Tensor,
                 mask: Optional[np.ndarray] = None) -> Tensor:
        if x_q.shape[-1] != self.d_model or x_k.shape[-1] != self.d_model:
            raise ShapeMismatchError(
                f"attention inputs must have width {self.d_model}: "
                f"{x_q.shape}, {x_k.shape}"
            )
        if x_k.shape != x_v.shape:
            raise ShapeMismatchError(f"key/value shapes disagree: {x_k.shape} vs {x_v.shape}")

        q = self.q(tape, x_q)
        k = self.k(tape, x_k)
        v = self.v(tape, x_v)

        self.last_weights = []
        heads = []
        for i in range(self.heads):
            lo, hi = i * self.head_dim, (i + 1) * self.head_dim
            qh = ad.slice_axis(q, -1, lo, hi)
            kh = ad.slice_axis(k, -1, lo, hi)
            vh = ad.slice_axis(v, -1, lo, hi)
            head, weights = scaled_attention(tape, qh, kh, vh, mask=mask,
                                             scale_dim=self.scale_dim)
            self.last_weights.append(weights.data)
            heads.append(head)
        merged = heads[0] if len(heads) == 1 else ad.concat(heads, axis=-1)
        return self.out(tape, merged)

    def parameters(self) -> list[Parameter]:
        return (self.q.parameters() + self.k.parameters()
                + self.v.parameters() + self.out.parameters())


class LstmLayer:
    """Single LSTM run left-to-right from a zero initial state.

    Returns the hidden-state sequence, one row per input step. Gates follow
    the standard formulation (input, forget, output, candidate); the forget
    gate bias starts at 1.0 so early training does not erase state.
    """

    GATES = ("inp", "forget", "outp", "cand")

    def __init__(self, name: str, dim: int, rng: np.random.Generator):
        self.name = name
        self.dim = dim
        self.w_x: dict[str, Parameter] = {}
        self.w_h: dict[str, Parameter] = {}
        self.b: dict[str, Parameter] = {}
        for gate in self.GATES:
            self.w_x[gate] = Parameter(f"{name}.{gate}.w_x", glorot_uniform(rng, dim, dim))
            self.w_h[gate] = Parameter(f"{name}.{gate}.w_h", glorot_uniform(rng, dim, dim))
            bias = np.ones(dim, dtype=np.float32) if gate == "forget" else np.zeros(dim, dtype=np.float32)
            self.b[gate] = Parameter(f"{name}.{gate}.bias", bias)

    def _gate(self, tape: Tape, gate: str, x_t: Tensor, h: Tensor) -> Tensor:
        pre = ad.add(
            ad.add(ad.matmul(x_t, tape.leaf(self.w_x[gate])),
                   ad.matmul(h, tape.leaf(self.w_h[gate]))),
            tape.leaf(self.b[gate]),
        )
        return ad.tanh(pre) if gate == "cand" else ad.sigmoid(pre)

    def __call__(self, tape: Tape, x: Tensor) -> Tensor:
        if x.ndim < 2 or x.shape[-1] != self.dim:
            raise ShapeMismatchError(f"LSTM expects [..., T, {self.dim}], got {x.shape}")
        steps = x.shape[-2]
        state_shape = x.shape[:-2] + (1, self.dim)
        h = tape.constant(np.zeros(state_shape))
        c = tape.constant(np.zeros(state_shape))
        outputs = []
        for t in range(steps):
            x_t = ad.slice_axis(x, -2, t, t + 1)
            i = self._gate(tape, "inp", x_t, h)
            f = self._gate(tape, "forget", x_t, h)
            o = self._gate(tape, "outp", x_t, h)
            g = self._gate(tape, "cand", x_t, h)
            c = ad.add(ad.multiply(f, c), ad.multiply(i, g))
            h = ad.multiply(o, ad.tanh(c))
            outputs.append(h)
        return outputs[0] if steps == 1 else ad.concat(outputs, axis=-2)

    def parameters(self) -> list[Parameter]:
        params = []
        for gate in self.GATES:
            params.extend([self.w_x[gate], self.w_h[gate], self.b[gate]])
        return params


def sinusoidal_encoding(length: int, d_model: int) -> np.ndarray:
    """Fixed sin/cos position table of shape [length, d_model].

    Column 2i holds sin(pos / 10000^(2i/d_model)) and column 2i+1 the cosine
    of the same argument. Computed in float64.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if d_model % 2 != 0:
        raise ValueError(f"d_model must be even for sin/cos pairing, got {d_model}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, idx / d_model)
    table = np.empty((length, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


class SinusoidalPE:
    """Parameter-free positional encoding; emits values in [-1, 1]."""

    def __init__(self, d_model: int):
        if d_model % 2 != 0:
            raise ValueError(f"d_model must be even, got {d_model}")
        self.d_model = d_model

    def table(self, length: int) -> np.ndarray:
        return sinusoidal_encoding(length, self.d_model)

    def parameters(self) -> list[Parameter]:
        return []


class EncoderLayer:
    """Post-norm transformer encoder block: self-attention then feed-forward,
    each wrapped in dropout, residual, and layer norm.
    """

    def __init__(self, name: str, d_model: int, heads: int, d_ff: int,
                 dropout_p: float, rng: np.random.Generator, seed: int,
                 attn_scale: str = "head"):
        self.name = name
        self.dropout_p = dropout_p
        self.attn = MultiHeadAttention(f"{name}.attn", d_model, heads, rng, scale=attn_scale)
        self.ffn = FeedForward(f"{name}.ffn", d_model, d_ff, rng)
        self.norm1 = LayerNorm(f"{name}.norm1", d_model)
        self.norm2 = LayerNorm(f"{name}.norm2", d_model)
        self._drop_rng = rng_for(seed, f"{name}.dropout")

    def __call__(self, tape: Tape, x: Tensor, training: bool = False) -> Tensor:
        a = self.attn(tape, x, x, x)
        x = self.norm1(tape, ad.add(x, ad.dropout(a, self.dropout_p, training, self._drop_rng)))
        f = self.ffn(tape, x)
        return self.norm2(tape, ad.add(x, ad.dropout(f, self.dropout_p, training, self._drop_rng)))

    def parameters(self) -> list[Parameter]:
        return (self.attn.parameters() + self.norm1.parameters()
                + self.ffn.parameters() + self.norm2.parameters())


class DecoderLayer:
    """Post-norm decoder block: causally masked self-attention, cross-attention
    over the encoder memory, then feed-forward; residual + norm around each.
    """

    def __init__(self, name: str, d_model: int, heads: int, d_ff: int,
                 dropout_p: float, rng: np.random.Generator, seed: int,
                 attn_scale: str = "head"):
        self.name = name
        self.dropout_p = dropout_p
        self.self_attn = MultiHeadAttention(f"{name}.self_attn", d_model, heads, rng, scale=attn_scale)
        self.cross_attn = MultiHeadAttention(f"{name}.cross_attn", d_model, heads, rng, scale=attn_scale)
        self.ffn = FeedForward(f"{name}.ffn", d_model, d_ff, rng)
        self.norm1 = LayerNorm(f"{name}.norm1", d_model)
        self.norm2 = LayerNorm(f"{name}.norm2", d_model)
        self.norm3 = LayerNorm(f"{name}.norm3", d_model)
        self._drop_rng = rng_for(seed, f"{name}.dropout")

    def __call__(self, tape: Tape, y: Tensor, memory: Tensor, training: bool = False) -> Tensor:
        p = self.dropout_p
        a = self.self_attn(tape, y, y, y, mask=causal_mask(y.shape[-2]))
        y = self.norm1(tape, ad.add(y, ad.dropout(a, p, training, self._drop_rng)))
        c = self.cross_attn(tape, y, memory, memory)
        y = self.norm2(tape, ad.add(y, ad.dropout(c, p, training, self._drop_rng)))
        f = self.ffn(tape, y)
        return self.norm3(tape, ad.add(y, ad.dropout(f, p, training, self._drop_rng)))

    def parameters(self) -> list[Parameter]:
        return (self.self_attn.parameters() + self.norm1.parameters()
                + self.cross_attn.parameters() + self.norm2.parameters()
                + self.ffn.parameters() + self.norm3.parameters())
