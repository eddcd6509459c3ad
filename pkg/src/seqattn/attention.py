"""Attention scorers, alignment/context history queues and the expected context.

Five scorer variants are available:

* ``dot`` -- Σ_m hE[m]·hD[m], no parameters
* ``bilinear`` -- hEᵀ W hD
* ``mlp`` -- w_out · tanh(W1 hE + W2 hD)
* ``mlp_location`` -- adds a convolution of the previous alignment
* ``mlp_ma_c`` -- adds multiscale convolutions over the last O alignments and
  a summary of the last O context vectors

All functions accept either a single encoder row ``[M]`` or a stack of rows
``[..., S, M]``; in the stacked case the decoder query ``[..., N]`` is shared
across the S positions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ConfigurationError, ContractViolation, DimensionError, Tensor

VARIANTS = ("dot", "bilinear", "mlp", "mlp_location", "mlp_ma_c")


class HistorySizeError(ValueError):
    pass


@dataclass(frozen=True)
class FilterBank:
    """K groups of 1-D filters; group k has ``widths[k]`` taps and ``channels[k]`` outputs."""

    widths: tuple = (7, 15, 31, 63)
    channels: tuple = (64, 64, 64, 64)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "channels", tuple(int(d) for d in self.channels))
        if not self.widths:
            raise ConfigurationError("filter bank is empty")
        if len(self.widths) != len(self.channels):
            raise ConfigurationError(f"{len(self.widths)} widths but {len(self.channels)} channel counts")
        if any(w % 2 == 0 or w < 1 for w in self.widths):
            raise ConfigurationError(f"filter widths must be odd and positive, got {self.widths}")
        if any(d < 1 for d in self.channels):
            raise ConfigurationError(f"filter channels must be >= 1, got {self.channels}")

    @property
    def total_channels(self):
        return int(np.sum(self.channels))


def glorot(rng, shape, fan_in, fan_out, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# --- history queues ------------------------------------------------------------

class AttentionHistory:
    """The last ``order`` alignments and contexts, oldest first.

    Values are immutable: :func:`history_step` returns a new history, so a beam
    hypothesis can keep its own copy without aliasing.
    """

    __slots__ = ("order", "aligns", "contexts")

    def __init__(self, order, aligns, contexts):
        self.order = order
        self.aligns = tuple(aligns)
        self.contexts = tuple(contexts)

    def __len__(self):
        return len(self.aligns)

    def lag(self, i):
        """(alignment, context) from i steps ago; i=1 is the most recent."""
        return self.aligns[-i], self.contexts[-i]

    def recent_aligns(self):
        return list(reversed(self.aligns))

    def recent_contexts(self):
        return list(reversed(self.contexts))

    def select(self, rows):
        """Reorder/duplicate the batch rows of every stored entry (beam bookkeeping)."""
        rows = np.asarray(rows)
        return AttentionHistory(
            self.order,
            [Tensor(a.data[rows]) for a in self.aligns],
            [Tensor(c.data[rows]) for c in self.contexts],
        )


def history_init(order, S, M, batch=None, dtype=np.float64):
    """O one-hot alignments (mass on the first position) and O zero contexts."""
    if order < 1:
        raise ConfigurationError(f"history order must be >= 1, got {order}")
    if S < 1:
        raise ConfigurationError(f"encoder length must be >= 1, got {S}")
    lead = () if batch is None else (batch,)
    onehot = np.zeros(lead + (S,), dtype=dtype)
    onehot[..., 0] = 1.0
    zeros = np.zeros(lead + (M,), dtype=dtype)
    return AttentionHistory(order, [Tensor(onehot.copy()) for _ in range(order)],
                            [Tensor(zeros.copy()) for _ in range(order)])


def history_step(hist, a_t, c_t, mask=None, tol=1e-4):
    """Drop the oldest entries and append (a_t, c_t)."""
    ad = a_t.data
    valid = ad if mask is None else np.where(T._mask_array(mask, ad.shape), ad, 0.0)
    sums = valid.sum(axis=-1)
    if not np.all(np.abs(sums - 1.0) <= tol):
        raise ContractViolation(f"alignment pushed to history is not normalised (sums {np.ravel(sums)[:4]})")
    return AttentionHistory(hist.order, hist.aligns[1:] + (a_t,), hist.contexts[1:] + (c_t,))


# --- scoring primitives ----------------------------------------------------------

def _query(hD, hE):
    """Give the decoder query a broadcast axis for the encoder positions."""
    if hE.ndim == hD.ndim + 1:
        return T.reshape(hD, hD.shape[:-1] + (1, hD.shape[-1]))
    return hD


def _squeeze_last(x):
    return T.reshape(x, x.shape[:-1])


def score_dot(hE, hD):
    if hE.shape[-1] != hD.shape[-1]:
        raise DimensionError(f"dot score needs equal sizes, got encoder {hE.shape} and decoder {hD.shape}")
    return T.dot_last(hE, _query(hD, hE))


def score_bilinear(hE, hD, W):
    if W.shape != (hE.shape[-1], hD.shape[-1]):
        raise DimensionError(f"bilinear weight {W.shape} does not match encoder {hE.shape} / decoder {hD.shape}")
    return T.dot_last(hE, _query(T.affine(hD, W), hE))


def _energy(terms, b, w_out, g="tanh"):
    pre = terms[0]
    for t in terms[1:]:
        pre = pre + t
    if b is not None:
        pre = pre + b
    return _squeeze_last(T.affine(T.activation(pre, g), w_out))


def score_mlp(hE, hD, W1, W2, W3, b=None):
    """W3 · tanh(W1 hE + W2 hD [+ b])."""
    return _energy([T.affine(hE, W1), _query(T.affine(hD, W2), hE)], b, W3)


def location_features(prev_align, F):
    """F * a_{t-1} for a single width filter F [1, width, C]; returns [..., S, C]."""
    a = T.reshape(prev_align, prev_align.shape + (1,))
    return T.conv1d_same(a, F)


def score_location(hE, hD, prev_align, W1, W2, Wf, F, W_out, b):
    """W_out · tanh(W1 hE + W2 hD + Wf (F * a_{t-1})[s] + b)."""
    loc = T.affine(location_features(prev_align, F), Wf)
    return _energy([T.affine(hE, W1), _query(T.affine(hD, W2), hE), loc], b, W_out)


def multiscale_features(align, filters, act="leaky_relu"):
    """f([F_1 * a, ..., F_K * a]) concatenated on the channel axis: [..., S, Σ d_k]."""
    if not filters:
        raise ConfigurationError("filter bank is empty")
    a = T.reshape(align, align.shape + (1,))
    convs = [T.conv1d_same(a, F) for F in filters]
    z = convs[0] if len(convs) == 1 else T.concat(convs, axis=-1)
    return T.activation(z, act)


def mixture_weights(logits):
    """Point on the simplex from unconstrained logits."""
    return T.softmax_masked(logits)


def merge_alignment_history(features, p):
    """Σ_i p_i · ẑ_{t-i}. ``features`` is a list (most recent first) or a stacked tensor [O, ...]."""
    O = p.shape[0]
    n = len(features) if isinstance(features, (list, tuple)) else features.shape[0]
    if n != O:
        raise HistorySizeError(f"got {n} alignment features for a mixture over {O} lags")
    stacked = T.stack(features, axis=0) if isinstance(features, (list, tuple)) else features
    w = T.reshape(p, (O,) + (1,) * (stacked.ndim - 1))
    return T.sum(w * stacked, axis=0)


def context_history_features(contexts, Ws, bs, act="leaky_relu"):
    """f(Σ_i (W_i c_{t-i} + b_i)); contexts[0] is the most recent and pairs with Ws[0]."""
    if len(contexts) != len(Ws) or len(Ws) != len(bs):
        raise HistorySizeError(f"{len(contexts)} contexts for {len(Ws)} weights / {len(bs)} biases")
    acc = T.affine(contexts[0], Ws[0], bs[0])
    for c, W, b in zip(contexts[1:], Ws[1:], bs[1:]):
        acc = acc + T.affine(c, W, b)
    return T.activation(acc, act)


def score_combined(hE, hD, zA, zC, W1, W2, W3, W4, W5, b, g="tanh"):
    """W5 · g(W1 hE + W2 hD + W3 zA[s] + W4 zC + b).

    ``zA`` carries one row per encoder position (same leading shape as hE).
    """
    if zA.shape[:-1] != hE.shape[:-1]:
        raise DimensionError(f"alignment features {zA.shape} do not line up with encoder states {hE.shape}")
    terms = [T.affine(hE, W1), _query(T.affine(hD, W2), hE), T.affine(zA, W3), _query(T.affine(zC, W4), hE)]
    return _energy(terms, b, W5, g)


def attend(hE, scores, mask=None):
    """Alignment = masked softmax of the scores; context = expectation of hE under it."""
    align = T.softmax_masked(scores, mask)
    return align, T.weighted_sum(align, hE)


# --- scorer objects used by the model ------------------------------------------

class Scorer:
    """Holds one variant's parameters and scores every encoder position at once."""

    variant = ""
    uses_history = False

    def __init__(self, params):
        self.params = dict(params)

    def precompute(self, hE):
        """Query-independent work done once per utterance."""
        return None

    def __call__(self, hE, cache, hD, hist):
        raise NotImplementedError


class DotScorer(Scorer):
    variant = "dot"

    def __call__(self, hE, cache, hD, hist):
        return score_dot(hE, hD)


class BilinearScorer(Scorer):
    variant = "bilinear"

    def __call__(self, hE, cache, hD, hist):
        return score_bilinear(hE, hD, self.params["W"])


class MLPScorer(Scorer):
    variant = "mlp"

    def precompute(self, hE):
        return T.affine(hE, self.params["W1"])

    def __call__(self, hE, cache, hD, hist):
        p = self.params
        return _energy([cache, _query(T.affine(hD, p["W2"]), hE)], p.get("b"), p["W3"])


class LocationScorer(Scorer):
    variant = "mlp_location"
    uses_history = True

    def precompute(self, hE):
        return T.affine(hE, self.params["W1"])

    def __call__(self, hE, cache, hD, hist):
        p = self.params
        prev, _ = hist.lag(1)
        loc = T.affine(location_features(prev, p["F"]), p["Wf"])
        return _energy([cache, _query(T.affine(hD, p["W2"]), hE), loc], p["b"], p["W_out"])


class MultiscaleContextScorer(Scorer):
    variant = "mlp_ma_c"
    uses_history = True

    def __init__(self, params, order, n_filters, f_act="leaky_relu", g_act="tanh"):
        super().__init__(params)
        self.order = order
        self.n_filters = n_filters
        self.f_act = f_act
        self.g_act = g_act

    def filters(self):
        return [self.params[f"F{k}"] for k in range(self.n_filters)]

    def alignment_features(self, hist):
        """z^A_t from the queued alignments: shared filters over every lag, then the mixture."""
        aligns = hist.recent_aligns()
        if len(aligns) != self.order:
            raise HistorySizeError(f"history holds {len(aligns)} alignments, scorer expects {self.order}")
        stacked = T.stack(aligns, axis=0)
        feats = multiscale_features(stacked, self.filters(), self.f_act)
        return merge_alignment_history(feats, mixture_weights(self.params["mix_logits"]))

    def context_features(self, hist):
        ctxs = hist.recent_contexts()
        if len(ctxs) != self.order:
            raise HistorySizeError(f"history holds {len(ctxs)} contexts, scorer expects {self.order}")
        p = self.params
        Ws = [p[f"Wc{i}"] for i in range(1, self.order + 1)]
        bs = [p[f"bc{i}"] for i in range(1, self.order + 1)]
        return context_history_features(ctxs, Ws, bs, self.f_act)

    def precompute(self, hE):
        return T.affine(hE, self.params["W1"])

    def __call__(self, hE, cache, hD, hist):
        p = self.params
        zA = self.alignment_features(hist)
        zC = self.context_features(hist)
        terms = [cache, _query(T.affine(hD, p["W2"]), hE), T.affine(zA, p["W3"]), _query(T.affine(zC, p["W4"]), hE)]
        return _energy(terms, p["b"], p["W5"], self.g_act)


def make_scorer(variant, enc_dim, dec_dim, rng, attn_dim=32, order=1, bank=None,
                ctx_dim=16, location_width=15, location_channels=8, mlp_bias=False,
                f_act="leaky_relu", g_act="tanh", dtype=np.float64):
    """Build a scorer with freshly initialised parameters (uniform Glorot, zero biases)."""
    M, N, P = enc_dim, dec_dim, attn_dim

    def w(shape, fan_in, fan_out):
        return T.parameter(glorot(rng, shape, fan_in, fan_out, dtype))

    def zeros(*shape):
        return T.parameter(np.zeros(shape, dtype=dtype))

    if variant == "dot":
        if M != N:
            raise ConfigurationError(f"dot scorer needs encoder size == decoder size, got {M} and {N}")
        return DotScorer({})
    if variant == "bilinear":
        return BilinearScorer({"W": w((M, N), N, M)})
    if variant == "mlp":
        params = {"W1": w((P, M), M, P), "W2": w((P, N), N, P), "W3": w((1, P), P, 1)}
        if mlp_bias:
            params["b"] = zeros(P)
        return MLPScorer(params)
    if variant == "mlp_location":
        if location_width % 2 == 0:
            raise ConfigurationError(f"location filter width must be odd, got {location_width}")
        C = location_channels
        return LocationScorer({
            "W1": w((P, M), M, P), "W2": w((P, N), N, P),
            "F": w((1, location_width, C), location_width, location_width * C),
            "Wf": w((P, C), C, P), "W_out": w((1, P), P, 1), "b": zeros(P),
        })
    if variant == "mlp_ma_c":
        bank = bank or FilterBank()
        if order < 1:
            raise ConfigurationError(f"history order must be >= 1, got {order}")
        D = bank.total_channels
        params = {
            "W1": w((P, M), M, P), "W2": w((P, N), N, P), "W3": w((P, D), D, P),
            "W4": w((P, ctx_dim), ctx_dim, P), "W5": w((1, P), P, 1), "b": zeros(P),
            "mix_logits": zeros(order),
        }
        for k, (tw, d) in enumerate(zip(bank.widths, bank.channels)):
            params[f"F{k}"] = w((1, tw, d), tw, tw * d)
        for i in range(1, order + 1):
            params[f"Wc{i}"] = w((ctx_dim, M), M, ctx_dim)
            params[f"bc{i}"] = zeros(ctx_dim)
        return MultiscaleContextScorer(params, order, len(bank.widths), f_act, g_act)
    raise ConfigurationError(f"unknown scorer variant {variant!r}; expected one of {VARIANTS}")
