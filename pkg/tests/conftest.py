import numpy as np
import pytest

from seqattn import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def param(rng, *shape, name=None, scale=1.0):
    return T.parameter(rng.normal(0.0, scale, size=shape), name)


def tiny_config(scorer="mlp_ma_c", **overrides):
    """A float64 model small enough for finite-difference checks (all dims <= 8)."""
    from seqattn.model import ModelConfig

    base = dict(input_kind="symbols", input_vocab=8, output_kind="symbols", output_vocab=7, embed_dim=4,
                enc_hidden=4, enc_layers=1, reduction=1, dec_hidden=4, dec_layers=1, scorer=scorer,
                attn_dim=3, order=2, filter_widths=(3, 5), filter_channels=(2, 1), ctx_dim=2,
                location_width=3, location_channels=2, mlp_bias=True, frames_per_step=2, prenet_dim=3)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(scorer="mlp_ma_c", seed=0, jitter=0.0, **overrides):
    """Tiny model; ``jitter`` adds noise so zero-initialised parameters take generic values."""
    from seqattn.model import Seq2Seq

    model = Seq2Seq(tiny_config(scorer, **overrides), rng=np.random.default_rng(seed))
    if jitter:
        rng = np.random.default_rng([seed, 99])
        for p in model.params.values():
            p.data = p.data + rng.normal(0.0, jitter, size=p.shape).astype(p.data.dtype)
    return model


ACCEPTANCE_LINES = []


def report(name, ok, detail):
    """Record one acceptance verdict; printed again in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
