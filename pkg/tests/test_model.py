import dataclasses
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqattn import tensor as T
from seqattn.attention import VARIANTS, ContractViolation, history_init
from seqattn.gradcheck import grad_check, model_grad_check
from seqattn.model import BCE_EPS, BOS, InputTooShortError, Seq2Seq, encoder_length, mle_loss, tts_loss
from seqattn.tasks import Example, collate

from conftest import tiny_config, tiny_model
from oracles import OracleDecoder, oracle_mle, oracle_tts


def staged_ceiling(S, R):
    n = S
    while R > 1:
        n = math.ceil(n / 2)
        R //= 2
    return n


class TestEncoder:
    @pytest.mark.parametrize("S,R,expected", [(16, 8, 2), (17, 8, 3), (9, 1, 9)])
    def test_examples(self, S, R, expected):
        model = tiny_model(enc_layers=3, reduction=R)
        hE, mask = model.encode(np.full((1, S), 4))
        assert hE.shape == (1, expected, 4)
        assert encoder_length(S, R) == expected

    @given(st.integers(8, 60), st.sampled_from([1, 2, 4, 8]))
    @settings(max_examples=40, deadline=None)
    def test_length_rule(self, S, R):
        assert encoder_length(S, R) == staged_ceiling(S, R)

    def test_mask_shortened_with_sequence(self):
        model = tiny_model(enc_layers=2, reduction=4)
        mask = np.zeros((2, 17), bool)
        mask[0, :17] = True
        mask[1, :9] = True
        hE, m = model.encode(np.full((2, 17), 4), mask)
        assert hE.shape[1] == 5
        np.testing.assert_array_equal(m.sum(axis=1), [5, 3])

    def test_too_short(self):
        with pytest.raises(InputTooShortError):
            tiny_model(enc_layers=3, reduction=8).encode(np.full((1, 7), 4))

    def test_padding_does_not_leak(self):
        model = tiny_model(jitter=0.2)
        short, _ = model.encode(np.array([[4, 5, 6]]))
        mask = np.array([[True, True, True, False, False]])
        padded, _ = model.encode(np.array([[4, 5, 6, 7, 7]]), mask)
        np.testing.assert_allclose(padded.data[0, :3], short.data[0], atol=1e-14)

    @pytest.mark.parametrize("R", [3, 6])
    def test_reduction_must_be_power_of_two(self, R):
        with pytest.raises(T.ConfigurationError):
            tiny_config(enc_layers=3, reduction=R).validate()

    def test_frame_input(self):
        model = tiny_model(input_kind="frames", input_dim=3, enc_layers=2, reduction=2)
        hE, _ = model.encode(np.random.default_rng(0).normal(size=(2, 7, 3)))
        assert hE.shape == (2, 4, 4)


class TestMLELoss:
    def test_certain_model_zero_loss(self):
        logits = np.full((1, 3, 5), -1e3)
        targets = np.array([[1, 4, 2]])
        logits[0, np.arange(3), targets[0]] = 0.0
        assert mle_loss(T.Tensor(logits), targets).item() == 0.0

    @pytest.mark.parametrize("Tn", [1, 4, 9])
    def test_uniform_over_32(self, Tn):
        loss = mle_loss(T.Tensor(np.zeros((1, Tn, 32))), np.zeros((1, Tn), int)).item()
        assert loss == pytest.approx(Tn * math.log(32), abs=1e-12)

    def test_divided_by_sequences(self):
        one = mle_loss(T.Tensor(np.zeros((1, 3, 4))), np.zeros((1, 3), int)).item()
        two = mle_loss(T.Tensor(np.zeros((2, 3, 4))), np.zeros((2, 3), int)).item()
        assert one == pytest.approx(two, abs=1e-14)

    def test_against_oracle(self, rng):
        for _ in range(30):
            B, Tn, V = rng.integers(1, 4), rng.integers(1, 6), rng.integers(2, 8)
            logits = rng.normal(size=(B, Tn, V)) * 3
            targets = rng.integers(0, V, size=(B, Tn))
            mask = rng.random((B, Tn)) < 0.8
            got = mle_loss(T.Tensor(logits), targets, mask).item()
            assert got == pytest.approx(oracle_mle(logits, targets, mask), abs=1e-10)

    def test_out_of_vocab(self):
        with pytest.raises(ValueError):
            mle_loss(T.Tensor(np.zeros((1, 2, 4))), np.array([[1, 4]]))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(2, 3, 5)) * 20
        assert mle_loss(T.Tensor(logits), rng.integers(0, 5, size=(2, 3))).item() >= 0.0


def _tts_case(rng, B=2, S=5, Dm=3, Dr=3):
    return (rng.normal(size=(B, S, Dm)), rng.normal(size=(B, S, Dr)), rng.uniform(0.05, 0.95, size=(B, S)),
            rng.normal(size=(B, S, Dm)), rng.normal(size=(B, S, Dr)), (rng.random((B, S)) < 0.5).astype(float))


class TestTTSLoss:
    def test_perfect_prediction(self, rng):
        xm, xs = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
        b = np.array([0, 0, 0, 0, 1, 1.0])
        loss = tts_loss(T.Tensor(xm), T.Tensor(xs), T.Tensor(b.copy()), xm, xs, b).item()
        assert 0.0 <= loss <= 6 * BCE_EPS * 2

    def test_half_probability_is_ln2_per_frame(self, rng):
        xm = rng.normal(size=(7, 2))
        b = (rng.random(7) < 0.5).astype(float)
        loss = tts_loss(T.Tensor(xm), T.Tensor(xm), T.Tensor(np.full(7, 0.5)), xm, xm, b).item()
        assert loss == pytest.approx(7 * math.log(2), abs=1e-12)

    def test_against_oracle(self, rng):
        for _ in range(30):
            pm, ps, pb, xm, xs, b = _tts_case(rng)
            mask = rng.random(b.shape) < 0.8
            got = tts_loss(T.Tensor(pm), T.Tensor(ps), T.Tensor(pb), xm, xs, b, mask).item()
            assert got == pytest.approx(oracle_tts(pm, ps, pb, xm, xs, b, mask), abs=1e-10)

    def test_stream_swap_invariance(self, rng):
        pm, ps, pb, xm, xs, b = _tts_case(rng)
        a = tts_loss(T.Tensor(pm), T.Tensor(ps), T.Tensor(pb), xm, xs, b).item()
        c = tts_loss(T.Tensor(ps), T.Tensor(pm), T.Tensor(pb), xs, xm, b).item()
        assert a == pytest.approx(c, abs=1e-12)

    def test_clamp_logged_and_finite(self, caplog):
        x = np.zeros((2, 1))
        with caplog.at_level(logging.DEBUG, logger="seqattn.model"):
            loss = tts_loss(T.Tensor(x), T.Tensor(x), T.Tensor(np.array([0.0, 1.0])), x, x, np.array([1.0, 0.0]))
        assert math.isfinite(loss.item())
        assert loss.item() == pytest.approx(-2 * math.log(BCE_EPS), rel=1e-9)
        assert "clamping" in caplog.text

    def test_shape_mismatch(self):
        with pytest.raises(T.DimensionError):
            tts_loss(T.Tensor(np.zeros((3, 2))), T.Tensor(np.zeros((3, 2))), T.Tensor(np.zeros(3)),
                     np.zeros((4, 2)), np.zeros((3, 2)), np.zeros(3))


def _frames_model(r=4, **kw):
    return tiny_model(output_kind="frames", primary_dim=3, secondary_dim=2, frames_per_step=r, jitter=0.1, **kw)


def _frames_example(rng, n_frames, S=5, scale=1.0):
    end = np.zeros(n_frames)
    end[-1] = 1.0
    return Example("symbols-to-frames", rng.integers(3, 8, size=S), None,
                   scale * rng.normal(size=(n_frames, 3)), scale * rng.normal(size=(n_frames, 2)), end)


class TestFrameDecoder:
    @pytest.mark.parametrize("n_frames,steps", [(12, 3), (10, 3), (4, 1), (5, 2)])
    def test_step_count(self, rng, n_frames, steps, monkeypatch):
        model = _frames_model(r=4)
        calls = []
        orig = model.tts_decoder_step
        monkeypatch.setattr(model, "tts_decoder_step", lambda *a: calls.append(1) or orig(*a))
        model.loss(collate([_frames_example(rng, n_frames)], frames_per_step=4))
        assert len(calls) == steps

    def test_r1_one_frame_per_step(self, rng):
        model = _frames_model(r=1)
        b = collate([_frames_example(rng, 3)], frames_per_step=1)
        hE, mask = model.encode(b.src)
        out, (pm, ps, pe) = model.tts_decoder_step(np.zeros((1, 3)), model.initial_state(1),
                                                   model.initial_history(hE), hE, model.precompute(hE), mask)
        assert pm.shape == (1, 1, 3) and pe.shape == (1, 1)

    def test_padded_frames_do_not_count(self, rng):
        model = _frames_model(r=4)
        b = collate([_frames_example(rng, 10)], frames_per_step=4)
        assert b.frames_primary.shape[1] == 12 and b.frame_mask.sum() == 10
        base = model.loss(b).item()
        b.frames_primary[0, 10:] = 50.0
        b.frames_secondary[0, 10:] = -50.0
        b.ending[0, 10:] = 0.0
        assert model.loss(b).item() == base

    def test_r_must_be_positive(self):
        with pytest.raises(T.ConfigurationError):
            tiny_config(output_kind="frames", primary_dim=2, secondary_dim=2, frames_per_step=0).validate()

    def test_group_input_is_last_frame(self, rng):
        """The next step sees the last target frame of the previous group (teacher forcing)."""
        model = _frames_model(r=2)
        ex = _frames_example(rng, 4)
        seen = []
        orig = model.tts_decoder_step
        def spy(prev, *a):
            seen.append(np.array(T.as_tensor(prev).data))
            return orig(prev, *a)
        model.tts_decoder_step = spy
        model.loss(collate([ex], frames_per_step=2))
        np.testing.assert_array_equal(seen[0], np.zeros((1, 3)))
        np.testing.assert_array_equal(seen[1][0], ex.primary[1])


class TestDecoderStep:
    def _run(self, model, src, steps):
        hE, mask = model.encode(src)
        cache, state, hist = model.precompute(hE), model.initial_state(1), model.initial_history(hE)
        outs = []
        prev = np.array([BOS])
        for y in steps:
            out = model.decoder_step(prev, state, hist, hE, cache, mask)
            state, hist = out.state, out.hist
            outs.append(out)
            prev = np.array([y])
        return hE, outs

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_unrolled_trace(self, variant):
        model = tiny_model(variant, jitter=0.3, order=2)
        hE, outs = self._run(model, np.array([[4, 5, 6, 7, 3]]), [5, 6, 4])
        ref = OracleDecoder({k: p.data for k, p in model.params.items()}, variant, 2, hE.data[0], np.ones(5))
        prev = BOS
        for out, y in zip(outs, [5, 6, 4]):
            a, c, head = ref.step(prev)
            np.testing.assert_allclose(out.align.data[0], a, rtol=0, atol=1e-10)
            np.testing.assert_allclose(out.context.data[0], c, rtol=0, atol=1e-10)
            np.testing.assert_allclose(model.logits(out.head_in).data[0], ref.logits(head), rtol=0, atol=1e-10)
            prev = y

    def test_order_one_second_step_uses_first_context_only(self):
        model = tiny_model("mlp_ma_c", jitter=0.3, order=1)
        hE, outs = self._run(model, np.array([[4, 5, 6, 7]]), [5, 6])
        hist1 = outs[0].hist
        assert len(hist1) == 1
        assert hist1.lag(1)[1] is outs[0].context
        zc = model.scorer.context_features(hist1).data
        W, b = model.params["att.Wc1"].data, model.params["att.bc1"].data
        pre = outs[0].context.data @ W.T + b
        np.testing.assert_allclose(zc, np.where(pre > 0, pre, 0.01 * pre), atol=1e-14)

    def test_first_step_ma_c_features_from_one_hots(self):
        model = tiny_model("mlp_ma_c", jitter=0.3, order=3)
        hE, _ = model.encode(np.array([[4, 5, 6, 7, 3, 4]]))
        hist = model.initial_history(hE)
        for a, c in zip(hist.aligns, hist.contexts):
            np.testing.assert_array_equal(a.data, [[1, 0, 0, 0, 0, 0]])
            np.testing.assert_array_equal(c.data, np.zeros((1, 4)))

    def test_mlp_ignores_history_order(self):
        src = np.array([[4, 5, 6, 7, 3]])
        m1, m5 = tiny_model("mlp", order=1, jitter=0.2), tiny_model("mlp", order=5, jitter=0.2)
        for name in m1.params:
            np.testing.assert_array_equal(m1.params[name].data, m5.params[name].data)
        _, o1 = self._run(m1, src, [4, 5, 6])
        _, o5 = self._run(m5, src, [4, 5, 6])
        for a, b in zip(o1, o5):
            np.testing.assert_array_equal(a.align.data, b.align.data)
            np.testing.assert_array_equal(a.head_in.data, b.head_in.data)

    def test_mlp_history_contents_irrelevant(self, rng):
        model = tiny_model("mlp", order=2, jitter=0.2)
        hE, mask = model.encode(np.array([[4, 5, 6, 7]]))
        cache, state = model.precompute(hE), model.initial_state(1)
        hist = model.initial_history(hE)
        other = history_init(2, 4, 4, batch=1)
        other = other.__class__(2, [T.Tensor(rng.dirichlet(np.ones(4))[None]) for _ in range(2)],
                                [T.Tensor(rng.normal(size=(1, 4))) for _ in range(2)])
        a = model.decoder_step(np.array([BOS]), state, hist, hE, cache, mask)
        b = model.decoder_step(np.array([BOS]), state, other, hE, cache, mask)
        np.testing.assert_array_equal(a.head_in.data, b.head_in.data)

    def test_history_required(self):
        model = tiny_model(order=2)
        hE, mask = model.encode(np.array([[4, 5, 6]]))
        with pytest.raises(ContractViolation):
            model.decoder_step(np.array([BOS]), model.initial_state(1), None, hE, model.precompute(hE), mask)
        with pytest.raises(ContractViolation):
            model.decoder_step(np.array([BOS]), model.initial_state(1), history_init(3, 3, 4, batch=1),
                               hE, model.precompute(hE), mask)

    def test_queue_size_constant(self):
        model = tiny_model(order=3, jitter=0.1)
        _, outs = self._run(model, np.array([[4, 5, 6, 7]]), [4] * 6)
        assert all(len(o.hist.aligns) == 3 and len(o.hist.contexts) == 3 for o in outs)


def _symbol_batch(rng, B=2, S=6, Tn=3):
    exs = [Example("copy", rng.integers(3, 8, size=S - i), rng.integers(3, 7, size=Tn - 1 - i % 2)) for i in range(B)]
    return collate(exs)


class TestFullModelGradients:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_symbol_model(self, rng, variant):
        model = tiny_model(variant, jitter=0.2)
        batch = _symbol_batch(rng)
        rep = grad_check(lambda: model.loss(batch), model.params)
        assert rep.passed, rep.summary()

    def test_frame_model(self, rng):
        # targets on the unit scale keep the loss O(1), so central differences at h=1e-5 resolve
        # the smallest gradient entries (those reaching the oldest context lag) above roundoff
        model = _frames_model(r=2, enc_layers=2, reduction=2)
        batch = collate([_frames_example(rng, 5, S=6, scale=0.3), _frames_example(rng, 3, S=4, scale=0.3)],
                        frames_per_step=2)
        rep = grad_check(lambda: model.loss(batch), model.params)
        assert rep.passed, rep.summary()

    def test_subsampled_encoder(self, rng):
        model = tiny_model("mlp_ma_c", jitter=0.2, enc_layers=2, reduction=2)
        batch = _symbol_batch(rng)
        rep = grad_check(lambda: model.loss(batch), model.params)
        assert rep.passed, rep.summary()

    def test_planted_filter_gradient_error_is_caught(self, monkeypatch):
        from seqattn import kernels

        real = kernels.conv1d_same_backward

        def off_by_one_percent(x, F, gy):
            gx, gF = real(x, F, gy)
            return gx, gF * 1.01

        assert model_grad_check("mlp_ma_c").passed
        monkeypatch.setattr(kernels, "conv1d_same_backward", off_by_one_percent)
        rep = model_grad_check("mlp_ma_c")
        assert not rep.passed
        assert rep.worst[0].startswith("att.F")


class TestConstruction:
    def test_deterministic_init(self):
        a, b = tiny_model(seed=3), tiny_model(seed=3)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k].data, b.params[k].data)

    def test_forget_bias_one(self):
        b = tiny_model().params["dec.l0.b"].data
        np.testing.assert_array_equal(b[4:8], np.ones(4))
        np.testing.assert_array_equal(np.delete(b, range(4, 8)), np.zeros(12))

    def test_float32(self, rng):
        model = Seq2Seq(dataclasses.replace(tiny_config(), dtype="float32"), rng=np.random.default_rng(0))
        loss = model.loss(_symbol_batch(rng))
        assert loss.data.dtype == np.float32
        loss.backward()
        assert all(p.grad.dtype == np.float32 for p in model.params.values())

    @pytest.mark.parametrize("bad", [dict(enc_hidden=5), dict(scorer="dot", dec_hidden=6), dict(order=0),
                                     dict(dtype="float16"), dict(filter_widths=(4,), filter_channels=(1,)),
                                     dict(output_vocab=3)])
    def test_invalid(self, bad):
        with pytest.raises(T.ConfigurationError):
            tiny_config(**bad).validate()

    def test_load_arrays_shape_check(self):
        model = tiny_model()
        arrays = {k: p.data for k, p in model.params.items()}
        arrays["out.W"] = np.zeros((2, 2))
        with pytest.raises(ValueError, match="out.W"):
            model.load_arrays(arrays)
