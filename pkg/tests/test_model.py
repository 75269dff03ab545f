import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import random_tokens, tiny_model
from topic_convs2s import model as M
from topic_convs2s import tensor as T
from topic_convs2s.data import BOS, EOS, PAD
from topic_convs2s.tensor import Tensor


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# -- embeddings -------------------------------------------------------------------

def test_non_topic_token_uses_word_embedding():
    m = tiny_model(topic_ids=(4, 5))
    e, r, tmask = m.embed_source([7])
    np.testing.assert_array_equal(r.data, e.data)
    assert not tmask.any()


def test_topic_token_uses_topic_embedding():
    m = tiny_model(topic_ids=(4, 5))
    _, r, tmask = m.embed_source([5])
    row = m.params["D_topic"].data[1]
    np.testing.assert_allclose(r.data[0, 0] - m.params["P_enc"].data[0], row, rtol=0, atol=1e-15)
    assert tmask[0, 0]


def test_positions_are_additive():
    m = tiny_model()
    e, _, _ = m.embed_source([7, 7])
    P = m.params["P_enc"].data
    np.testing.assert_allclose(e.data[0, 1] - e.data[0, 0], P[1] - P[0], atol=1e-15)


def test_source_longer_than_positions_rejected():
    m = tiny_model(max_source_len=4)
    with pytest.raises(ValueError, match="max_source_len"):
        m.embed_source([5] * 5)


# -- convolution blocks -------------------------------------------------------------

def test_zero_kernel_block_is_identity():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(4, 3)))
    out = M.conv_block(x, Tensor(np.zeros((6, 9))), Tensor(np.zeros(6)), 3, causal=False)
    np.testing.assert_array_equal(out.data, x.data)


def test_single_position_window_is_zero_padded():
    x = Tensor([[1.5, -2.0]])
    np.testing.assert_array_equal(T.windows(x, 3, causal=False).data, [[0, 0, 1.5, -2.0, 0, 0]])


def _conv_oracle(x, W, b, causal):
    """Gated convolution written out position by position, k = 3."""
    n, d = x.shape
    out = np.zeros_like(x)
    for i in range(n):
        idx = (i - 2, i - 1, i) if causal else (i - 1, i, i + 1)
        window = []
        for j in idx:
            window.extend(x[j] if 0 <= j < n else [0.0] * d)
        y = [sum(W[r][c] * window[c] for c in range(3 * d)) + b[r] for r in range(2 * d)]
        for c in range(d):
            out[i, c] = y[c] * sigmoid(y[d + c]) + x[i, c]
    return out


@pytest.mark.parametrize("causal", [False, True])
def test_conv_block_matches_straight_line_oracle(causal):
    rng = np.random.default_rng(42)
    x, W, b = rng.normal(size=(3, 2)), rng.normal(size=(4, 6)), rng.normal(size=4)
    got = M.conv_block(Tensor(x), Tensor(W), Tensor(b), 3, causal).data
    np.testing.assert_allclose(got, _conv_oracle(x, W, b, causal), rtol=0, atol=1e-12)


# -- attention ----------------------------------------------------------------------

def test_attention_single_source_position():
    np.testing.assert_array_equal(M.attention_weights(Tensor([0.3, -1.0]), Tensor([[2.0, 5.0]])).data, [1.0])


def test_attention_identical_rows_uniform():
    z = Tensor(np.tile([0.4, -0.7], (4, 1)))
    np.testing.assert_allclose(M.attention_weights(Tensor([1.0, 2.0]), z).data, 0.25, atol=1e-15)


def test_attention_hand_case():
    w = M.attention_weights(Tensor([1.0, 0.0]), Tensor([[1.0, 0.0], [0.0, 1.0]])).data
    np.testing.assert_allclose(w, [0.7310586, 0.2689414], atol=5e-8)


def test_attention_ignores_padding():
    w = M.attention_weights(Tensor([1.0, 0.0]), Tensor([[1.0, 0.0], [9.0, 1.0]]), np.array([True, False])).data
    np.testing.assert_allclose(w, [1.0, 0.0], atol=1e-300)


def test_joint_attention_zero_topic_reduces():
    rng = np.random.default_rng(1)
    d, zw = rng.normal(size=3), rng.normal(size=(4, 3))
    joint = M.joint_attention_weights(Tensor(d), Tensor(zw), Tensor(np.zeros((4, 3)))).data
    np.testing.assert_allclose(joint, M.attention_weights(Tensor(d), Tensor(zw)).data, atol=1e-15)


def test_joint_attention_constant_sum_uniform():
    rng = np.random.default_rng(2)
    zw = rng.normal(size=(3, 2))
    zt = np.array([0.5, 1.0]) - zw
    joint = M.joint_attention_weights(Tensor([1.0, -3.0]), Tensor(zw), Tensor(zt)).data
    np.testing.assert_allclose(joint, 1 / 3, atol=1e-12)


def test_joint_attention_hand_case():
    # scores: position 0 -> 1 + 0, position 1 -> 0 + 1 + 1
    d = Tensor([1.0, 1.0])
    zw = Tensor([[1.0, 0.0], [0.0, 1.0]])
    zt = Tensor([[0.0, 0.0], [1.0, 0.0]])
    s0, s1 = 1.0, 2.0
    expected = [math.exp(s0) / (math.exp(s0) + math.exp(s1)), math.exp(s1) / (math.exp(s0) + math.exp(s1))]
    np.testing.assert_allclose(M.joint_attention_weights(d, zw, zt).data, expected, atol=1e-15)


def test_context_one_hot_selects_row():
    z, aux = np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.5, 0.5], [-1.0, 1.0]])
    c = M.context(Tensor([0.0, 1.0]), Tensor(z), Tensor(aux)).data
    np.testing.assert_array_equal(c, z[1] + aux[1])


def test_context_cancellation():
    z = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(M.context(Tensor([0.3, 0.7]), Tensor(z), Tensor(-z)).data, [0.0, 0.0])


def test_context_uniform_is_mean():
    z, aux = np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0, 0.0], [0.0, 1.0]])
    c = M.context(Tensor([0.5, 0.5]), Tensor(z), Tensor(aux)).data
    np.testing.assert_allclose(c, (z + aux).mean(axis=0), atol=1e-15)


# -- decoder states ----------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_decoder_is_causal(seed):
    rng = np.random.default_rng(seed)
    layers = int(rng.integers(1, 3))
    k = int(rng.choice([2, 3, 4]))
    m = tiny_model(seed=seed, layers=layers, kernel_width=k, topic_layers=int(rng.integers(1, 3)),
                   init_scale=1.0, max_target_len=7)
    src = random_tokens(rng, int(rng.integers(1, 6)), 10)
    n = int(rng.integers(2, 7))
    prefix = np.concatenate([[BOS], random_tokens(rng, n - 1, 10)])
    j = int(rng.integers(1, n))
    changed = prefix.copy()
    changed[j] = 4 + (prefix[j] - 4 + int(rng.integers(1, 6))) % 6
    enc = m.encode(src)
    h1, t1 = m.decode_states(prefix, enc)
    h2, t2 = m.decode_states(changed, enc)
    np.testing.assert_array_equal(h1.data[0, :j], h2.data[0, :j])
    np.testing.assert_array_equal(t1.data[0, :j], t2.data[0, :j])
    assert not np.array_equal(h1.data[0, j:], h2.data[0, j:])


def test_zero_kernels_straight_line_oracle():
    """d=2, two decoder positions, two source positions, one layer per stack."""
    m = tiny_model(seed=5, d=2, layers=1, init_scale=1.0, topic_ids=(5,))
    p = m.params
    for name, t in p.named_tensors():
        if name.split(".")[-1] in ("W", "b", "Wd"):
            t.data[...] = 0.0
    rng = np.random.default_rng(9)
    p["dec_word.0.bd"].data[...] = rng.normal(size=2)
    p["dec_topic.0.bd"].data[...] = rng.normal(size=2)
    src, prefix = np.array([5, 7]), np.array([BOS, 5])

    D, Dt, Pe, Pd = (p[n].data for n in ("D_word", "D_topic", "P_enc", "P_dec"))
    e = np.stack([D[w] for w in src]) + Pe[:2]
    r = np.stack([Dt[0] if w == 5 else D[w] for w in src]) + Pe[:2]
    q = np.stack([D[w] for w in prefix]) + Pd[:2]
    s = np.stack([Dt[0] if w == 5 else D[w] for w in prefix]) + Pd[:2]
    z_word, z_topic = e, r  # zero-kernel encoder blocks are identities

    def softmax(v):
        v = np.exp(v - v.max())
        return v / v.sum()

    h = np.zeros((2, 2))
    ht = np.zeros((2, 2))
    for i in range(2):
        dw = p["dec_word.0.bd"].data + q[i]
        a = softmax(np.array([dw @ z_word[j] for j in range(2)]))
        c = sum(a[j] * (z_word[j] + e[j]) for j in range(2))
        h[i] = q[i] + c
        dt = p["dec_topic.0.bd"].data + s[i]
        b = softmax(np.array([dt @ z_word[j] + dt @ z_topic[j] for j in range(2)]))
        ct = sum(b[j] * (z_topic[j] + r[j]) for j in range(2))
        ht[i] = s[i] + ct + c
    got_h, got_ht = m.decode_states(prefix, m.encode(src))
    np.testing.assert_allclose(got_h.data[0], h, atol=1e-12)
    np.testing.assert_allclose(got_ht.data[0], ht, atol=1e-12)


def test_single_source_token_context():
    m = tiny_model(seed=3, layers=1, init_scale=1.0)
    src = np.array([8])
    enc = m.encode(src)
    prefix = np.array([BOS, 6, 9])
    h, _ = m.decode_states(prefix, enc)
    p = m.params
    q = T.gather(p["D_word"], prefix) + p["P_dec"][:3]
    conv = M.conv_block(q, p["dec_word.0.W"], p["dec_word.0.b"], 3, causal=True).data
    c = enc.z_word.data[0, 0] + enc.e.data[0, 0]
    np.testing.assert_allclose(h.data[0] - conv, np.tile(c, (3, 1)), atol=1e-12)


def test_padding_does_not_change_encoding():
    m = tiny_model(seed=4, init_scale=1.0)
    a = m.encode(np.array([[5, 8, 9]]))
    b = m.encode(np.array([[5, 8, 9, PAD, PAD]]))
    np.testing.assert_allclose(b.z_word.data[0, :3], a.z_word.data[0], atol=1e-12)
    np.testing.assert_allclose(b.z_topic.data[0, :3], a.z_topic.data[0], atol=1e-12)


# -- output distribution -------------------------------------------------------------

def _psi(W, b):
    return {"W_o": Tensor(W), "b_o": Tensor(b)}


def test_output_distribution_hand_case():
    out = M.output_distribution(np.zeros(3), np.zeros(3), _psi(np.zeros((2, 3)), np.zeros(2)), [False, True])
    np.testing.assert_allclose(out.probs, [1 / 3, 2 / 3], atol=1e-15)


def _softmax(v):
    v = np.exp(v - v.max(axis=-1, keepdims=True))
    return v / v.sum(axis=-1, keepdims=True)


def test_output_distribution_reductions():
    rng = np.random.default_rng(0)
    for _ in range(100):
        V, d = int(rng.integers(2, 12)), int(rng.integers(1, 6))
        W, b = rng.normal(size=(V, d)) * 3, rng.normal(size=V)
        h, ht = rng.normal(size=d), rng.normal(size=d)
        ref = _softmax(W @ h + b)
        none = M.output_distribution(h, ht, _psi(W, b), np.zeros(V, bool)).probs
        full = M.output_distribution(h, h, _psi(W, b), np.ones(V, bool)).probs
        np.testing.assert_allclose(none, ref, atol=1e-9)
        np.testing.assert_allclose(full, ref, atol=1e-9)


def test_output_distribution_sums_to_one():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        V, d = int(rng.integers(2, 20)), int(rng.integers(1, 8))
        scale = float(rng.choice([0.1, 1.0, 10.0]))
        out = M.output_distribution(
            rng.normal(size=d), rng.normal(size=d),
            _psi(rng.normal(size=(V, d)) * scale, rng.normal(size=V)), rng.random(V) < 0.5,
        )
        assert abs(out.probs.sum() - 1.0) < 1e-6


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_biasing_monotonicity(seed):
    rng = np.random.default_rng(seed)
    V, d = int(rng.integers(2, 10)), 3
    psi = _psi(rng.normal(size=(V, d)), rng.normal(size=V))
    h, ht = rng.normal(size=d), rng.normal(size=d)
    mask = rng.random(V) < 0.5
    w = int(rng.integers(V))
    mask[w] = False
    before = M.output_distribution(h, ht, psi, mask).probs
    mask[w] = True
    after = M.output_distribution(h, ht, psi, mask).probs
    assert after[w] >= before[w] - 1e-15
    others = np.arange(V) != w
    assert np.all(after[others] <= before[others] + 1e-15)


def test_argmax_invariant_under_shared_bias_shift():
    rng = np.random.default_rng(7)
    for _ in range(100):
        V, d = 6, 3
        W, b = rng.normal(size=(V, d)), rng.normal(size=V)
        h, ht, mask = rng.normal(size=d), rng.normal(size=d), rng.random(V) < 0.5
        base = M.output_distribution(h, ht, _psi(W, b), mask).probs
        shifted = M.output_distribution(h, ht, _psi(W, b + 3.7), mask).probs
        assert base.argmax() == shifted.argmax()
        np.testing.assert_allclose(shifted, base, atol=1e-12)


# -- gradients ----------------------------------------------------------------------

def _nll(model, src, tgt):
    def loss(_):
        lp = model.forward(src, tgt[:-1])
        return -T.pick(lp, tgt[None, 1:]).sum() / float(len(tgt) - 1)
    return loss


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_model_gradient_check(seed):
    m = tiny_model(seed=seed, d=8, layers=2)
    src = np.array([4, 7, 5, 9, 6])
    tgt = np.array([BOS, 5, 8, 4, 6, EOS])
    assert T.check_gradients(_nll(m, src, tgt), m.params, num_coords=150, seed=seed) < 1e-4


@pytest.mark.parametrize("piece", ["encoder", "attention", "joint_attention", "biased_output"])
def test_composite_op_gradient_check(piece):
    rng = np.random.default_rng(3)
    d, m_len, n = 4, 3, 2
    p = {
        "x": Tensor(rng.normal(size=(m_len, d)), requires_grad=True),
        "W": Tensor(rng.normal(size=(2 * d, 3 * d)) * 0.3, requires_grad=True),
        "b": Tensor(rng.normal(size=2 * d) * 0.1, requires_grad=True),
        "q": Tensor(rng.normal(size=(n, d)), requires_grad=True),
        "zt": Tensor(rng.normal(size=(m_len, d)), requires_grad=True),
        "W_o": Tensor(rng.normal(size=(5, d)), requires_grad=True),
        "b_o": Tensor(rng.normal(size=5), requires_grad=True),
    }
    w_out = Tensor(rng.normal(size=(n, d)))
    w_enc = Tensor(rng.normal(size=(m_len, d)))
    fns = {
        "encoder": lambda p: (M.encode(p["x"], [(p["W"], p["b"])], 3) * w_enc).sum(),
        "attention": lambda p: (M.context(M.attention_weights(p["q"], p["x"]), p["x"], p["zt"]) * w_out).sum(),
        "joint_attention": lambda p: (M.context(M.joint_attention_weights(p["q"], p["x"], p["zt"]), p["zt"], p["x"]) * w_out).sum(),
        "biased_output": lambda p: T.pick(M.biased_log_probs(p["q"], p["x"][:n], p["W_o"], p["b_o"],
                                                              np.array([1, 0, 1, 0, 0], bool)), np.array([0, 3])).sum(),
    }
    assert T.check_gradients(fns[piece], p) < 1e-6
