"""Central finite-difference verification of analytic gradients.

Everything runs in float64 with dropout off. The per-element comparison is
``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; the floor keeps
near-zero gradients from amplifying finite-difference truncation noise into
spurious relative errors.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Parameter, Tape, Tensor
from . import autodiff as ad
from .layers import (
    DecoderLayer,
    EncoderLayer,
    FeedForward,
    LayerNorm,
    Linear,
    LstmLayer,
    MultiHeadAttention,
    rng_for,
)
from .models import ModelConfig, RulTransformer

DEFAULT_EPS = 1e-3
DEFAULT_FLOOR = 1e-2
TOLERANCE = 1e-4

BuildFn = Callable[[Tape], Tensor]


def to_float64(params: Sequence[Parameter]) -> None:
    for p in params:
        p.data = p.data.astype(np.float64)


def analytic_grads(params: Sequence[Parameter], build: BuildFn) -> list[np.ndarray]:
    tape = Tape(np.float64)
    loss = build(tape)
    tape.backward(loss)
    return [np.array(p.grad, dtype=np.float64) for p in params]


def numeric_grads(params: Sequence[Parameter], build: BuildFn,
                  eps: float = DEFAULT_EPS) -> list[np.ndarray]:
    def value() -> float:
        return float(build(Tape(np.float64)).data)

    grads = []
    for p in params:
        g = np.zeros(p.data.shape, dtype=np.float64)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value()
            flat[i] = orig - eps
            down = value()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def max_rel_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray],
                  floor: float = DEFAULT_FLOOR) -> float:
    worst = 0.0
    for a, f in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        worst = max(worst, float(np.max(np.abs(a - f) / denom)))
    return worst


def check_gradients(params: Sequence[Parameter], build: BuildFn,
                    eps: float = DEFAULT_EPS, floor: float = DEFAULT_FLOOR) -> float:
    """Max relative error between analytic and central-difference gradients."""
    return max_rel_error(analytic_grads(params, build), numeric_grads(params, build, eps), floor)


def _projection_loss(tape: Tape, out: Tensor, rng: np.random.Generator) -> Tensor:
    """Scalar that couples to every output element via a fixed random projection."""
    r = rng.normal(size=out.shape)
    return ad.tsum(ad.multiply(out, tape.constant(r)))


def layer_suite(seed: int = 0, eps: float = DEFAULT_EPS,
                floor: float = DEFAULT_FLOOR) -> dict[str, float]:
    """Gradient-check every layer kind plus the full dual-encoder forward.

    Returns a mapping from check name to max relative error. The full model
    check runs at window=4, features=3, d_model=8, heads=2.

    Central differences at the default eps are only valid away from ReLU
    kinks; the default seed is pinned to a configuration verified kink-free
    (FD error shrinks quadratically when eps is reduced).
    """
    results: dict[str, float] = {}
    proj_rng = np.random.default_rng(seed + 1)

    def run(name: str, params: list[Parameter], build: BuildFn) -> None:
        results[name] = check_gradients(params, build, eps=eps, floor=floor)

    def make_input(name: str, shape: tuple[int, ...]) -> Parameter:
        data = rng_for(seed, name).normal(size=shape)
        return Parameter(name, data.astype(np.float64))

    # linear
    lin = Linear("lin", 4, 3, rng_for(seed, "lin"))
    x = make_input("lin.x", (5, 4))
    to_float64(lin.parameters())
    r = proj_rng.normal(size=(5, 3))
    run("linear", lin.parameters() + [x],
        lambda tape: ad.tsum(ad.multiply(lin(tape, tape.leaf(x)), tape.constant(r))))

    # layer norm
    ln = LayerNorm("ln", 6)
    x = make_input("ln.x", (4, 6))
    to_float64(ln.parameters())
    r = proj_rng.normal(size=(4, 6))
    run("layer_norm", ln.parameters() + [x],
        lambda tape: ad.tsum(ad.multiply(ln(tape, tape.leaf(x)), tape.constant(r))))

    # feed-forward
    ffn = FeedForward("ffn", 4, 6, rng_for(seed, "ffn"))
    x = make_input("ffn.x", (3, 4))
    to_float64(ffn.parameters())
    r = proj_rng.normal(size=(3, 4))
    run("feed_forward", ffn.parameters() + [x],
        lambda tape: ad.tsum(ad.multiply(ffn(tape, tape.leaf(x)), tape.constant(r))))

    # multi-head attention, 2 heads, with a causal mask
    mha = MultiHeadAttention("mha", 8, 2, rng_for(seed, "mha"))
    x = make_input("mha.x", (3, 8))
    to_float64(mha.parameters())
    mask = np.tril(np.ones((3, 3), dtype=bool))
    r = proj_rng.normal(size=(3, 8))
    run("multi_head_attention", mha.parameters() + [x],
        lambda tape: ad.tsum(ad.multiply(
            mha(tape, tape.leaf(x), tape.leaf(x), tape.leaf(x), mask=mask),
            tape.constant(r))))

    # LSTM over a short sequence
    lstm = LstmLayer("lstm", 5, rng_for(seed, "lstm"))
    x = make_input("lstm.x", (4, 5))
    to_float64(lstm.parameters())
    r = proj_rng.normal(size=(4, 5))
    run("lstm", lstm.parameters() + [x],
        lambda tape: ad.tsum(ad.multiply(lstm(tape, tape.leaf(x)), tape.constant(r))))

    # encoder layer
    enc = EncoderLayer("enc", 8, 2, 6, 0.0, rng_for(seed, "enc"), seed)
    x = make_input("enc.x", (4, 8))
    to_float64(enc.parameters())
    r = proj_rng.normal(size=(4, 8))
    run("encoder_layer", enc.parameters() + [x],
        lambda tape: ad.tsum(ad.multiply(enc(tape, tape.leaf(x)), tape.constant(r))))

    # decoder layer with memory
    dec = DecoderLayer("dec", 8, 2, 6, 0.0, rng_for(seed, "dec"), seed)
    y = make_input("dec.y", (3, 8))
    mem = make_input("dec.mem", (5, 8))
    to_float64(dec.parameters())
    r = proj_rng.normal(size=(3, 8))
    run("decoder_layer", dec.parameters() + [y, mem],
        lambda tape: ad.tsum(ad.multiply(
            dec(tape, tape.leaf(y), tape.leaf(mem)), tape.constant(r))))

    # full model, all three branches plus the RMSE-style loss
    config = ModelConfig(features=3, window=4, d_model=8, heads=2,
                         enc_layers=2, dec_layers=1, d_ff=8, dropout=0.0)
    model = RulTransformer(config, seed=seed)
    to_float64(model.parameters())
    x = make_input("model.x", (4, 3))
    target = rng_for(seed, "model.target").uniform(0.0, 5.0, size=(4,))

    def model_loss(tape: Tape) -> Tensor:
        pred = model.forward(tape, tape.leaf(x), training=False)
        diff = ad.sub(pred, tape.constant(target))
        mse = ad.mean(ad.multiply(diff, diff))
        return ad.sqrt(ad.add(mse, tape.constant(np.float64(1e-12))))

    run("full_model", model.parameters() + [x], model_loss)
    return results
