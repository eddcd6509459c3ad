"""Attention encoder-decoder with a symbol head (ASR-style) or a frame head (TTS-style)."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .attention import FilterBank, glorot, history_init, history_step, make_scorer
from .tensor import ConfigurationError, ContractViolation, Tensor

log = logging.getLogger(__name__)

PAD, BOS, EOS = 0, 1, 2
N_SPECIAL = 3
BCE_EPS = 1e-7


class InputTooShortError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_kind: str = "symbols"  # "symbols" or "frames"
    input_vocab: int = 11  # including PAD/BOS/EOS
    input_dim: int = 0  # frame width when input_kind == "frames"
    output_kind: str = "symbols"  # "symbols" or "frames"
    output_vocab: int = 11
    primary_dim: int = 0  # x^M width
    secondary_dim: int = 0  # x^R width
    frames_per_step: int = 4
    prenet_dim: int = 32
    embed_dim: int = 32
    enc_hidden: int = 64
    enc_layers: int = 3
    reduction: int = 4
    dec_hidden: int = 64
    dec_layers: int = 1
    scorer: str = "mlp_ma_c"
    attn_dim: int = 32
    order: int = 3
    filter_widths: tuple = (7, 15, 31, 63)
    filter_channels: tuple = (64, 64, 64, 64)
    ctx_dim: int = 16
    location_width: int = 15
    location_channels: int = 8
    mlp_bias: bool = False
    f_activation: str = "leaky_relu"
    g_activation: str = "tanh"
    dtype: str = "float64"

    def __post_init__(self):
        self.filter_widths = tuple(self.filter_widths)
        self.filter_channels = tuple(self.filter_channels)

    @property
    def bank(self):
        return FilterBank(self.filter_widths, self.filter_channels)

    def subsampling(self):
        """Per-layer factors; the halvings sit on the top layers."""
        R = self.reduction
        k = int(round(np.log2(R))) if R >= 1 else -1
        if R < 1 or 2 ** k != R:
            raise ConfigurationError(f"reduction must be a power of two, got {R}")
        if k > self.enc_layers:
            raise ConfigurationError(f"reduction {R} needs {k} encoder layers, have {self.enc_layers}")
        return (1,) * (self.enc_layers - k) + (2,) * k

    def validate(self):
        if self.input_kind not in ("symbols", "frames"):
            raise ConfigurationError(f"input_kind must be 'symbols' or 'frames', got {self.input_kind!r}")
        if self.output_kind not in ("symbols", "frames"):
            raise ConfigurationError(f"output_kind must be 'symbols' or 'frames', got {self.output_kind!r}")
        if self.input_kind == "frames" and self.input_dim < 1:
            raise ConfigurationError("frame input needs input_dim >= 1")
        if self.input_kind == "symbols" and self.input_vocab <= N_SPECIAL:
            raise ConfigurationError(f"input_vocab must exceed {N_SPECIAL} reserved symbols")
        if self.output_kind == "symbols" and self.output_vocab <= N_SPECIAL:
            raise ConfigurationError(f"output_vocab must exceed {N_SPECIAL} reserved symbols")
        if self.output_kind == "frames":
            if self.primary_dim < 1 or self.secondary_dim < 1:
                raise ConfigurationError("frame output needs primary_dim and secondary_dim >= 1")
            if self.frames_per_step < 1:
                raise ConfigurationError(f"frames_per_step must be >= 1, got {self.frames_per_step}")
        if self.enc_hidden % 2:
            raise ConfigurationError(f"enc_hidden must be even (split over two directions), got {self.enc_hidden}")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ConfigurationError("need at least one encoder and one decoder layer")
        if self.scorer == "dot" and self.enc_hidden != self.dec_hidden:
            raise ConfigurationError("dot scorer needs enc_hidden == dec_hidden")
        if self.order < 1:
            raise ConfigurationError(f"history order must be >= 1, got {self.order}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError(f"dtype must be float64 or float32, got {self.dtype!r}")
        self.bank  # noqa: B018 -- validates widths/channels
        self.subsampling()
        return self

    def to_dict(self):
        d = asdict(self)
        d["filter_widths"] = list(self.filter_widths)
        d["filter_channels"] = list(self.filter_channels)
        return d


@dataclass
class Batch:
    """Padded minibatch. Symbol targets use ``tgt_in``/``tgt_out``; frame targets use the ``frames_*`` fields."""

    src: np.ndarray
    src_mask: np.ndarray
    tgt_in: np.ndarray | None = None
    tgt_out: np.ndarray | None = None
    tgt_mask: np.ndarray | None = None
    frames_primary: np.ndarray | None = None
    frames_secondary: np.ndarray | None = None
    ending: np.ndarray | None = None
    frame_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.src.shape[0]


class DecoderState(NamedTuple):
    h: tuple
    c: tuple


class StepOutput(NamedTuple):
    state: DecoderState
    hist: object
    align: Tensor
    context: Tensor
    head_in: Tensor


# --- losses --------------------------------------------------------------------

def mle_loss(logits, targets, mask=None):
    """Negative log-likelihood summed over time, divided by the number of sequences."""
    targets = np.asarray(targets)
    n_seq = 1 if logits.ndim == 2 else logits.shape[0]
    return T.nll_sum(logits, targets, mask) * (1.0 / n_seq)


def tts_loss(pred_primary, pred_secondary, pred_ending, primary, secondary, ending, mask=None):
    """Σ_s ‖x^M − x̂^M‖² + ‖x^R − x̂^R‖² − BCE terms, over valid frames, divided by the batch size.

    Works on single utterances ([S, D]) or batches ([B, S, D]).
    """
    dt = pred_ending.dtype
    primary = np.asarray(primary, dtype=dt)
    secondary = np.asarray(secondary, dtype=dt)
    ending = np.asarray(ending, dtype=dt)
    if pred_primary.shape != primary.shape or pred_secondary.shape != secondary.shape or pred_ending.shape != ending.shape:
        raise T.DimensionError(
            f"tts_loss shapes: pred {pred_primary.shape}/{pred_secondary.shape}/{pred_ending.shape} "
            f"vs target {primary.shape}/{secondary.shape}/{ending.shape}"
        )
    n_seq = 1 if ending.ndim == 1 else ending.shape[0]
    m = np.ones(ending.shape, dtype=dt) if mask is None else np.asarray(mask, dtype=dt)
    pd = pred_ending.data
    if np.any((pd < BCE_EPS) | (pd > 1 - BCE_EPS)):
        log.debug("tts_loss: clamping ending probabilities to [%g, %g]", BCE_EPS, 1 - BCE_EPS)
    p = T.clip(pred_ending, BCE_EPS, 1 - BCE_EPS)
    sq = T.sum(T.square(T.sub(primary, pred_primary)), axis=-1) + T.sum(T.square(T.sub(secondary, pred_secondary)), axis=-1)
    bce = -(T.mul(T.log(p), ending) + T.mul(T.log(1.0 - p), 1.0 - ending))
    return T.sum(T.mul(sq + bce, m)) * (1.0 / n_seq)


# --- the network -----------------------------------------------------------------

class Seq2Seq:
    def __init__(self, config, rng=None, seed=0):
        self.config = config.validate()
        rng = np.random.default_rng(seed) if rng is None else rng
        self.dtype = np.dtype(config.dtype)
        self.params = {}
        self._build(rng)

    # parameters
    def _w(self, name, shape, fan_in, fan_out, rng):
        self.params[name] = T.parameter(glorot(rng, shape, fan_in, fan_out, self.dtype), name)

    def _zeros(self, name, shape):
        self.params[name] = T.parameter(np.zeros(shape, dtype=self.dtype), name)

    def _lstm(self, prefix, n_in, n_hidden, rng):
        self._w(f"{prefix}.W", (4 * n_hidden, n_in), n_in, 4 * n_hidden, rng)
        self._w(f"{prefix}.U", (4 * n_hidden, n_hidden), n_hidden, 4 * n_hidden, rng)
        b = np.zeros(4 * n_hidden, dtype=self.dtype)
        b[n_hidden:2 * n_hidden] = 1.0  # forget-gate bias
        self.params[f"{prefix}.b"] = T.parameter(b, f"{prefix}.b")

    def _build(self, rng):
        c = self.config
        E, H, N = c.embed_dim, c.enc_hidden, c.dec_hidden
        if c.input_kind == "symbols":
            self._w("enc.embed", (c.input_vocab, E), E, E, rng)
            n_in = E
        else:
            n_in = c.input_dim
        self._w("enc.proj.W", (H, n_in), n_in, H, rng)
        self._zeros("enc.proj.b", (H,))
        for layer in range(c.enc_layers):
            self._lstm(f"enc.l{layer}.fwd", H, H // 2, rng)
            self._lstm(f"enc.l{layer}.bwd", H, H // 2, rng)
        if c.output_kind == "symbols":
            self._w("dec.embed", (c.output_vocab, E), E, E, rng)
            dec_in = E
        else:
            self._w("dec.prenet.W", (c.prenet_dim, c.primary_dim), c.primary_dim, c.prenet_dim, rng)
            self._zeros("dec.prenet.b", (c.prenet_dim,))
            dec_in = c.prenet_dim
        for layer in range(c.dec_layers):
            self._lstm(f"dec.l{layer}", dec_in if layer == 0 else N, N, rng)
        scorer = make_scorer(
            c.scorer, H, N, rng, attn_dim=c.attn_dim, order=c.order, bank=c.bank, ctx_dim=c.ctx_dim,
            location_width=c.location_width, location_channels=c.location_channels,
            mlp_bias=c.mlp_bias, f_act=c.f_activation, g_act=c.g_activation, dtype=self.dtype,
        )
        for name, p in scorer.params.items():
            p.name = f"att.{name}"
            self.params[p.name] = p
        self.scorer = scorer
        head_in = N + H
        if c.output_kind == "symbols":
            self._w("out.W", (c.output_vocab, head_in), head_in, c.output_vocab, rng)
            self._zeros("out.b", (c.output_vocab,))
        else:
            r = c.frames_per_step
            self._w("out.primary.W", (r * c.primary_dim, head_in), head_in, r * c.primary_dim, rng)
            self._zeros("out.primary.b", (r * c.primary_dim,))
            self._w("out.secondary.W", (r * c.secondary_dim, head_in), head_in, r * c.secondary_dim, rng)
            self._zeros("out.secondary.b", (r * c.secondary_dim,))
            self._w("out.end.W", (r, head_in), head_in, r, rng)
            self._zeros("out.end.b", (r,))

    def parameters(self):
        return self.params

    def n_parameters(self):
        return int(np.sum([p.data.size for p in self.params.values()]))

    def load_arrays(self, arrays):
        for name, p in self.params.items():
            a = np.asarray(arrays[name])
            if a.shape != p.shape:
                raise ValueError(f"parameter {name}: expected shape {p.shape}, got {a.shape}")
            p.data = a.astype(self.dtype, copy=True)

    # encoder
    def encode(self, src, src_mask=None):
        """Encoder states [B, S', H] and the shortened mask [B, S']."""
        c = self.config
        p = self.params
        src = np.asarray(src)
        B, S = src.shape[0], src.shape[1]
        mask = np.ones((B, S), dtype=bool) if src_mask is None else np.asarray(src_mask, dtype=bool)
        lengths = mask.sum(axis=1)
        if np.any(lengths < c.reduction):
            raise InputTooShortError(f"input length {int(lengths.min())} is shorter than the reduction factor {c.reduction}")
        if c.input_kind == "symbols":
            x = T.embedding(p["enc.embed"], src)
        else:
            x = Tensor(src.astype(self.dtype, copy=False))
        x = T.leaky_relu(T.affine(x, p["enc.proj.W"], p["enc.proj.b"]))
        for layer, factor in enumerate(c.subsampling()):
            pre = f"enc.l{layer}"
            fwd = T.lstm_sequence(x, mask, p[f"{pre}.fwd.W"], p[f"{pre}.fwd.U"], p[f"{pre}.fwd.b"])
            bwd = T.lstm_sequence(x, mask, p[f"{pre}.bwd.W"], p[f"{pre}.bwd.U"], p[f"{pre}.bwd.b"], reverse=True)
            x = T.concat([fwd, bwd], axis=-1)
            if factor == 2:
                x = x[:, ::2]
                mask = mask[:, ::2]
        return x, mask

    # decoder
    def initial_state(self, batch):
        N = self.config.dec_hidden
        z = np.zeros((batch, N), dtype=self.dtype)
        L = self.config.dec_layers
        return DecoderState(tuple(Tensor(z) for _ in range(L)), tuple(Tensor(z) for _ in range(L)))

    def initial_history(self, hE):
        B, S, M = hE.shape
        return history_init(self.config.order, S, M, batch=B, dtype=self.dtype)

    def precompute(self, hE):
        return self.scorer.precompute(hE)

    def _decoder_input(self, prev):
        p = self.params
        if self.config.output_kind == "symbols":
            return T.embedding(p["dec.embed"], np.asarray(prev, dtype=np.int64))
        prev = T.as_tensor(prev)
        return T.leaky_relu(T.affine(prev, p["dec.prenet.W"], p["dec.prenet.b"]))

    def decoder_step(self, prev, state, hist, hE, cache, mask):
        """One decoding step: recurrent update, scoring from the pre-push history, attend, push."""
        if hist is None or len(hist) != self.config.order:
            raise ContractViolation("decoder_step needs a history initialised with the model's order")
        p = self.params
        x = self._decoder_input(prev)
        N = self.config.dec_hidden
        hs, cs = [], []
        for layer in range(self.config.dec_layers):
            pre = f"dec.l{layer}"
            hc = T.lstm_cell(x, state.h[layer], state.c[layer], p[f"{pre}.W"], p[f"{pre}.U"], p[f"{pre}.b"])
            x = hc[:, :N]
            hs.append(x)
            cs.append(hc[:, N:])
        scores = self.scorer(hE, cache, x, hist)
        align = T.softmax_masked(scores, mask)
        ctx = T.weighted_sum(align, hE)
        new_hist = history_step(hist, align, ctx, mask)
        return StepOutput(DecoderState(tuple(hs), tuple(cs)), new_hist, align, ctx, T.concat([x, ctx], axis=-1))

    def logits(self, head_in):
        return T.affine(head_in, self.params["out.W"], self.params["out.b"])

    def frame_outputs(self, head_in):
        """(primary [B, r, Dm], secondary [B, r, Dr], ending probabilities [B, r])."""
        c = self.config
        p = self.params
        B = head_in.shape[0]
        r = c.frames_per_step
        prim = T.reshape(T.affine(head_in, p["out.primary.W"], p["out.primary.b"]), (B, r, c.primary_dim))
        sec = T.reshape(T.affine(head_in, p["out.secondary.W"], p["out.secondary.b"]), (B, r, c.secondary_dim))
        end = T.sigmoid(T.affine(head_in, p["out.end.W"], p["out.end.b"]))
        return prim, sec, end

    def tts_decoder_step(self, prev_frame, state, hist, hE, cache, mask):
        out = self.decoder_step(prev_frame, state, hist, hE, cache, mask)
        return out, self.frame_outputs(out.head_in)

    # training objectives
    def loss(self, batch):
        if self.config.output_kind == "symbols":
            return self.symbol_loss(batch)
        return self.frame_loss(batch)

    def symbol_loss(self, batch):
        hE, mask = self.encode(batch.src, batch.src_mask)
        cache = self.precompute(hE)
        state = self.initial_state(batch.size)
        hist = self.initial_history(hE)
        logits = []
        for t in range(batch.tgt_in.shape[1]):
            out = self.decoder_step(batch.tgt_in[:, t], state, hist, hE, cache, mask)
            state, hist = out.state, out.hist
            logits.append(self.logits(out.head_in))
        return mle_loss(T.stack(logits, axis=1), batch.tgt_out, batch.tgt_mask)

    def frame_loss(self, batch):
        c = self.config
        r = c.frames_per_step
        hE, mask = self.encode(batch.src, batch.src_mask)
        cache = self.precompute(hE)
        B, Tf = batch.ending.shape
        if Tf % r:
            raise ValueError(f"frame targets ({Tf}) must be padded to a multiple of r={r}")
        state = self.initial_state(B)
        hist = self.initial_history(hE)
        prev = np.zeros((B, c.primary_dim), dtype=self.dtype)
        prims, secs, ends = [], [], []
        for g in range(Tf // r):
            out, (pm, ps, pe) = self.tts_decoder_step(prev, state, hist, hE, cache, mask)
            state, hist = out.state, out.hist
            prims.append(pm)
            secs.append(ps)
            ends.append(pe)
            prev = batch.frames_primary[:, (g + 1) * r - 1]
        return tts_loss(
            T.concat(prims, axis=1), T.concat(secs, axis=1), T.concat(ends, axis=1),
            batch.frames_primary, batch.frames_secondary, batch.ending, batch.frame_mask,
        )


def encoder_length(S, reduction):
    """Length after the keep-every-second rule at each halving stage."""
    n = S
    r = reduction
    while r > 1:
        n = -(-n // 2)
        r //= 2
    return n
