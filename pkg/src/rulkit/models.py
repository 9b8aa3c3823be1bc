"""RUL sequence models: the dual-encoder transformer and its baselines.

Three variants share one implementation:

* ``tfbest``  - sensor encoder + time encoder in parallel, fused by row
  concatenation, with a learnable LSTM positional encoding on the time branch.
* ``dast``    - same dual-encoder wiring with the fixed sinusoidal encoding.
* ``vanilla`` - single time encoder with sinusoidal encoding; the decoder
  attends to that encoder's output directly.

Input is a normalized feature window ``[T, F]`` (or a batch ``[B, T, F]``);
output is one RUL estimate per window step, in days, unclipped.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeMismatchError, Tape, Tensor
from .layers import (
    DecoderLayer,
    EncoderLayer,
    Linear,
    LstmLayer,
    SinusoidalPE,
    rng_for,
)

VARIANTS = ("tfbest", "dast", "vanilla")
PE_KINDS = ("lstm", "sinusoidal", "none")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``pe`` overrides the variant's default positional encoding ("lstm" for
    tfbest, "sinusoidal" otherwise); "none" disables it, which is mainly
    useful for ablation tests.
    """

    features: int
    window: int = 30
    d_model: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 1
    d_ff: int = 64
    dropout: float = 0.1
    variant: str = "tfbest"
    attn_scale: str = "head"
    pe: Optional[str] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.d_model % self.heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.window < 2:
            raise ValueError(f"window must be >= 2, got {self.window}")
        if self.features < 1:
            raise ValueError(f"features must be >= 1, got {self.features}")
        if self.attn_scale not in ("head", "model"):
            raise ValueError(f"attn_scale must be 'head' or 'model', got {self.attn_scale!r}")
        if self.pe is not None and self.pe not in PE_KINDS:
            raise ValueError(f"pe must be one of {PE_KINDS}, got {self.pe!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def effective_pe(self) -> str:
        if self.pe is not None:
            return self.pe
        return "lstm" if self.variant == "tfbest" else "sinusoidal"

    @property
    def dual_encoder(self) -> bool:
        return self.variant in ("tfbest", "dast")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def fuse(o_s: np.ndarray, o_t: np.ndarray) -> np.ndarray:
    """Row-concatenate sensor context above time context: [F+T, width]."""
    if o_s.shape[-1] != o_t.shape[-1]:
        raise ShapeMismatchError(f"fuse widths disagree: {o_s.shape} vs {o_t.shape}")
    return np.concatenate([o_s, o_t], axis=-2)


class RulTransformer:
    """Encoder-decoder network mapping a feature window to a RUL sequence."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        c = config

        self.time_embed = Linear("time_embed", c.features, c.d_model,
                                 rng_for(seed, "time_embed"))
        self.sensor_embed: Optional[Linear] = None
        if c.dual_encoder:
            self.sensor_embed = Linear("sensor_embed", c.window, c.d_model,
                                       rng_for(seed, "sensor_embed"))

        pe = c.effective_pe
        self.pe_lstm: Optional[LstmLayer] = None
        self.pe_table: Optional[SinusoidalPE] = None
        if pe == "lstm":
            self.pe_lstm = LstmLayer("pe_lstm", c.d_model, rng_for(seed, "pe_lstm"))
        elif pe == "sinusoidal":
            self.pe_table = SinusoidalPE(c.d_model)

        def enc_stack(prefix: str) -> list[EncoderLayer]:
            return [
                EncoderLayer(f"{prefix}.{i}", c.d_model, c.heads, c.d_ff, c.dropout,
                             rng_for(seed, f"{prefix}.{i}"), seed, attn_scale=c.attn_scale)
                for i in range(c.enc_layers)
            ]

        self.time_encoder = enc_stack("time_encoder")
        self.sensor_encoder = enc_stack("sensor_encoder") if c.dual_encoder else []
        self.decoder = [
            DecoderLayer(f"decoder.{i}", c.d_model, c.heads, c.d_ff, c.dropout,
                         rng_for(seed, f"decoder.{i}"), seed, attn_scale=c.attn_scale)
            for i in range(c.dec_layers)
        ]
        self.head = Linear("head", c.d_model, 1, rng_for(seed, "head"))
        self._enc_drop_rng = rng_for(seed, "embed.enc.dropout")
        self._dec_drop_rng = rng_for(seed, "embed.dec.dropout")

    # -- parameter plumbing ------------------------------------------------

    def parameters(self) -> list[Parameter]:
        params = self.time_embed.parameters()
        if self.sensor_embed is not None:
            params += self.sensor_embed.parameters()
        if self.pe_lstm is not None:
            params += self.pe_lstm.parameters()
        for layer in self.sensor_encoder:
            params += layer.parameters()
        for layer in self.time_encoder:
            params += layer.parameters()
        for layer in self.decoder:
            params += layer.parameters()
        params += self.head.parameters()
        return params

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def param_dict(self) -> dict[str, Parameter]:
        d = {}
        for p in self.parameters():
            if p.name in d:
                raise ValueError(f"duplicate parameter name {p.name}")
            d[p.name] = p
        return d

    # -- forward pieces ----------------------------------------------------

    def _check_window(self, x_shape: tuple[int, ...]) -> None:
        c = self.config
        if len(x_shape) not in (2, 3) or x_shape[-2] != c.window or x_shape[-1] != c.features:
            raise ShapeMismatchError(
                f"expected window shaped [..., {c.window}, {c.features}], got {x_shape}"
            )

    def _positional(self, tape: Tape, embedded: Tensor) -> Optional[Tensor]:
        if self.pe_lstm is not None:
            return self.pe_lstm(tape, embedded)
        if self.pe_table is not None:
            table = self.pe_table.table(embedded.shape[-2])
            return tape.constant(np.broadcast_to(table, embedded.shape))
        return None

    def _embed_time(self, tape: Tape, x: Tensor, training: bool,
                    rng: np.random.Generator) -> Tensor:
        e = self.time_embed(tape, x)
        p = self._positional(tape, e)
        if p is not None:
            e = ad.add(e, p)
        return ad.dropout(e, self.config.dropout, training, rng)

    def _time_encode(self, tape: Tape, x: Tensor, training: bool) -> Tensor:
        h = self._embed_time(tape, x, training, self._enc_drop_rng)
        for layer in self.time_encoder:
            h = layer(tape, h, training)
        return h

    def _sensor_encode(self, tape: Tape, x: Tensor, training: bool) -> Tensor:
        assert self.sensor_embed is not None
        h = self.sensor_embed(tape, ad.transpose2d(x))
        for layer in self.sensor_encoder:
            h = layer(tape, h, training)
        return h

    def forward(self, tape: Tape, x: Tensor, training: bool = False) -> Tensor:
        """Full pass: encode, fuse, decode, project to one value per step."""
        self._check_window(x.shape)
        o_t = self._time_encode(tape, x, training)
        if self.config.dual_encoder:
            o_s = self._sensor_encode(tape, x, training)
            memory = ad.concat([o_s, o_t], axis=-2)
        else:
            memory = o_t
        y = self._embed_time(tape, x, training, self._dec_drop_rng)
        for layer in self.decoder:
            y = layer(tape, y, memory, training)
        out = self.head(tape, y)
        return ad.reshape(out, out.shape[:-1])

    # -- numpy-facing entry points ------------------------------------------

    def predict(self, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Evaluate windows ([T, F] or [B, T, F]) with dropout off."""
        x = np.asarray(windows, dtype=np.float32)
        single = x.ndim == 2
        if single:
            x = x[None]
        self._check_window(x.shape)
        chunks = []
        for lo in range(0, x.shape[0], batch_size):
            tape = Tape(np.float32)
            out = self.forward(tape, tape.constant(x[lo:lo + batch_size]), training=False)
            chunks.append(out.data)
        result = np.concatenate(chunks, axis=0)
        return result[0] if single else result

    def time_encode(self, windows: np.ndarray) -> np.ndarray:
        """Time-branch context for one window or a batch, dropout off."""
        x = np.asarray(windows, dtype=np.float32)
        single = x.ndim == 2
        if single:
            x = x[None]
        self._check_window(x.shape)
        tape = Tape(np.float32)
        out = self._time_encode(tape, tape.constant(x), training=False)
        return out.data[0] if single else out.data

    def sensor_encode(self, windows: np.ndarray) -> np.ndarray:
        """Sensor-branch context; only defined for dual-encoder variants."""
        if not self.config.dual_encoder:
            raise ValueError(f"variant {self.config.variant!r} has no sensor encoder")
        x = np.asarray(windows, dtype=np.float32)
        single = x.ndim == 2
        if single:
            x = x[None]
        self._check_window(x.shape)
        tape = Tape(np.float32)
        out = self._sensor_encode(tape, tape.constant(x), training=False)
        return out.data[0] if single else out.data


def build_model(config: ModelConfig, seed: int = 0) -> RulTransformer:
    return RulTransformer(config, seed)


def build_baseline(variant: str, config: ModelConfig, seed: int = 0) -> RulTransformer:
    """Baseline factory: same dimensions as ``config`` with the variant swapped."""
    if variant not in ("vanilla", "dast"):
        raise ValueError(f"unknown baseline variant {variant!r}; expected 'vanilla' or 'dast'")
    return RulTransformer(dataclasses.replace(config, variant=variant, pe=None), seed)
