"""Independent reference implementations written with explicit loops.

None of these call into seqattn; they are the "other route" the tests compare against.
"""
import math

import numpy as np


def oracle_affine(x, W, b):
    out = np.zeros(x.shape[:-1] + (W.shape[0],))
    for idx in np.ndindex(x.shape[:-1]):
        for o in range(W.shape[0]):
            acc = 0.0 if b is None else b[o]
            for i in range(W.shape[1]):
                acc += x[idx + (i,)] * W[o, i]
            out[idx + (o,)] = acc
    return out


def oracle_conv(x, F):
    """x [S, Cin], F [Cin, width, Cout]; zero padding outside [0, S)."""
    S, Cin = x.shape
    _, width, Cout = F.shape
    half = width // 2
    out = np.zeros((S, Cout))
    for s in range(S):
        for o in range(Cout):
            acc = 0.0
            for j in range(width):
                src = s + j - half
                if 0 <= src < S:
                    for c in range(Cin):
                        acc += x[src, c] * F[c, j, o]
            out[s, o] = acc
    return out


def oracle_softmax(scores, valid):
    m = max(scores[i] for i in range(len(scores)) if valid[i])
    e = [np.exp(scores[i] - m) if valid[i] else 0.0 for i in range(len(scores))]
    tot = 0.0
    for v in e:
        tot += v
    return np.array([v / tot for v in e])


def oracle_leaky(v, alpha=0.01):
    return v if v >= 0 else alpha * v


def oracle_leaky_vec(v, alpha=0.01):
    return np.array([oracle_leaky(float(x), alpha) for x in np.ravel(v)]).reshape(np.shape(v))


def oracle_mlp_score(hE_s, hD, W1, W2, w_out, b=None, extra=()):
    """w_out · tanh(W1 hE + W2 hD + Σ extra + b) with explicit loops."""
    P = W1.shape[0]
    total = 0.0
    for p in range(P):
        pre = 0.0
        for m in range(len(hE_s)):
            pre += W1[p, m] * hE_s[m]
        for n in range(len(hD)):
            pre += W2[p, n] * hD[n]
        for vec, W in extra:
            for k in range(len(vec)):
                pre += W[p, k] * vec[k]
        if b is not None:
            pre += b[p]
        total += w_out[0, p] * math.tanh(pre)
    return total


def oracle_multiscale(align, filters, alpha=0.01):
    cols = [oracle_conv(np.asarray(align)[:, None], F) for F in filters]
    z = np.concatenate(cols, axis=1)
    return oracle_leaky_vec(z, alpha)


def oracle_merge(features, p):
    out = np.zeros_like(features[0])
    for idx in np.ndindex(out.shape):
        acc = 0.0
        for i in range(len(features)):
            acc += p[i] * features[i][idx]
        out[idx] = acc
    return out


def oracle_context_history(contexts, Ws, bs, alpha=0.01):
    P = Ws[0].shape[0]
    out = np.zeros(P)
    for q in range(P):
        acc = 0.0
        for c, W, b in zip(contexts, Ws, bs):
            acc += b[q]
            for m in range(len(c)):
                acc += W[q, m] * c[m]
        out[q] = oracle_leaky(acc, alpha)
    return out


def oracle_attend(hE, scores, valid):
    a = oracle_softmax(scores, valid)
    S, M = hE.shape
    ctx = np.zeros(M)
    for m in range(M):
        acc = 0.0
        for s in range(S):
            acc += a[s] * hE[s, m]
        ctx[m] = acc
    return a, ctx


def oracle_mle(logits, targets, mask):
    """Σ −log softmax(logits)[target] over valid positions, divided by the number of sequences."""
    B, Tn, V = logits.shape
    total = 0.0
    for b in range(B):
        for t in range(Tn):
            if not mask[b, t]:
                continue
            row = logits[b, t]
            mx = max(row)
            lse = mx + math.log(sum(math.exp(v - mx) for v in row))
            total += lse - row[targets[b, t]]
    return total / B


def oracle_tts(pm, ps, pb, xm, xs, b, mask, eps=1e-7):
    B, S = b.shape
    total = 0.0
    for i in range(B):
        for s in range(S):
            if not mask[i, s]:
                continue
            for d in range(xm.shape[2]):
                total += (xm[i, s, d] - pm[i, s, d]) ** 2
            for d in range(xs.shape[2]):
                total += (xs[i, s, d] - ps[i, s, d]) ** 2
            q = min(max(pb[i, s], eps), 1 - eps)
            total -= b[i, s] * math.log(q) + (1 - b[i, s]) * math.log(1 - q)
    return total / B


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def oracle_lstm_cell(x, h, c, W, U, b):
    """One LSTM step, gate order (input, forget, candidate, output), scalar loops."""
    n = len(h)
    pre = [b[j] + sum(W[j, k] * x[k] for k in range(len(x))) + sum(U[j, k] * h[k] for k in range(n))
           for j in range(4 * n)]
    h2, c2 = np.zeros(n), np.zeros(n)
    for j in range(n):
        i, f, g, o = _sig(pre[j]), _sig(pre[n + j]), math.tanh(pre[2 * n + j]), _sig(pre[3 * n + j])
        c2[j] = f * c[j] + i * g
        h2[j] = o * math.tanh(c2[j])
    return h2, c2


def oracle_scores(variant, P, hE, hD, aligns, ctxs):
    """Scores of every encoder row for one utterance.

    ``P`` maps scorer parameter names (without the ``att.`` prefix) to arrays;
    ``aligns``/``ctxs`` hold the queued history, most recent first.
    """
    S = hE.shape[0]
    if variant == "dot":
        return np.array([sum(hE[s, m] * hD[m] for m in range(len(hD))) for s in range(S)])
    if variant == "bilinear":
        W = P["W"]
        return np.array([sum(hE[s, m] * W[m, n] * hD[n] for m in range(W.shape[0]) for n in range(W.shape[1]))
                         for s in range(S)])
    if variant == "mlp":
        return np.array([oracle_mlp_score(hE[s], hD, P["W1"], P["W2"], P["W3"], P.get("b")) for s in range(S)])
    if variant == "mlp_location":
        conv = oracle_conv(np.asarray(aligns[0])[:, None], P["F"])
        return np.array([oracle_mlp_score(hE[s], hD, P["W1"], P["W2"], P["W_out"], P["b"], extra=[(conv[s], P["Wf"])])
                         for s in range(S)])
    filters = [P[f"F{k}"] for k in range(sum(1 for name in P if name.startswith("F")))]
    logits = P["mix_logits"]
    mx = max(logits)
    ex = [math.exp(v - mx) for v in logits]
    p = [v / sum(ex) for v in ex]
    zA = oracle_merge([oracle_multiscale(a, filters) for a in aligns], p)
    O = len(ctxs)
    zC = oracle_context_history(ctxs, [P[f"Wc{i}"] for i in range(1, O + 1)], [P[f"bc{i}"] for i in range(1, O + 1)])
    return np.array([oracle_mlp_score(hE[s], hD, P["W1"], P["W2"], P["W5"], P["b"],
                                      extra=[(zA[s], P["W3"]), (zC, P["W4"])]) for s in range(S)])


class OracleDecoder:
    """Hand-unrolled single-utterance decoder (one recurrent layer, symbol input).

    Mirrors the decoding loop step by step: recurrent update from the previous
    symbol, scores from the queue contents as they stand, attend, then evict the
    oldest entries and append the new alignment/context.
    """

    def __init__(self, params, variant, order, hE, valid):
        self.P = {k: np.asarray(v) for k, v in params.items()}
        self.att = {k[4:]: v for k, v in self.P.items() if k.startswith("att.")}
        self.variant = variant
        self.hE, self.valid = np.asarray(hE), np.asarray(valid, bool)
        S, M = self.hE.shape
        N = self.P["dec.l0.U"].shape[1]
        onehot = np.zeros(S)
        onehot[0] = 1.0
        self.aligns = [onehot.copy() for _ in range(order)]  # oldest first
        self.ctxs = [np.zeros(M) for _ in range(order)]
        self.h, self.c = np.zeros(N), np.zeros(N)

    def step(self, prev_symbol=None, prev_frame=None):
        P = self.P
        if prev_frame is None:
            x = P["dec.embed"][prev_symbol]
        else:
            x = oracle_leaky_vec(oracle_affine(np.asarray(prev_frame), P["dec.prenet.W"], P["dec.prenet.b"]))
        self.h, self.c = oracle_lstm_cell(x, self.h, self.c, P["dec.l0.W"], P["dec.l0.U"], P["dec.l0.b"])
        scores = oracle_scores(self.variant, self.att, self.hE, self.h, self.aligns[::-1], self.ctxs[::-1])
        a, ctx = oracle_attend(self.hE, scores, self.valid)
        self.aligns = self.aligns[1:] + [a]
        self.ctxs = self.ctxs[1:] + [ctx]
        head = np.concatenate([self.h, ctx])
        return a, ctx, head

    def logits(self, head):
        return oracle_affine(head, self.P["out.W"], self.P["out.b"])
