import numpy as np
import pytest

from subilstm.encoders import (
    Encoder,
    EncoderConfig,
    combine,
    encode_bilstm,
    encode_subilstm_naive,
    normalize_variant,
    param_count,
    pool_max,
    pool_max_batch,
)
from subilstm.lstm import LstmParams, run_sequence
from subilstm.numerics import Rng, Tensor, grad_check
from subilstm.verify import slice_oracle


def make_encoder(variant, d=3, h=4, seed=0, combiner="max"):
    return Encoder.init(EncoderConfig(variant, d, h, combiner), Rng(seed))


def test_combine_examples():
    p, s = Tensor([1.0, -2.0, 3.0]), Tensor([0.0, 5.0, 3.0])
    np.testing.assert_array_equal(combine(p, s, "max").data, [1.0, 5.0, 3.0])
    np.testing.assert_array_equal(combine(p, s, "mean").data, [0.5, 1.5, 3.0])
    np.testing.assert_array_equal(combine(p, s, "concat").data, [1.0, -2.0, 3.0, 0.0, 5.0, 3.0])
    with pytest.raises(ValueError):
        combine(p, Tensor([1.0]), "max")
    with pytest.raises(ValueError):
        combine(p, s, "sum")


def test_pool_max():
    H = Tensor([[1.0, -1.0], [0.5, 2.0], [9.0, 9.0]])
    np.testing.assert_array_equal(pool_max(H, 2).data, [1.0, 2.0])
    np.testing.assert_array_equal(pool_max(H).data, [9.0, 9.0])
    with pytest.raises(ValueError):
        pool_max(H, 0)


def test_pool_max_batch_ignores_padding():
    H = Tensor(np.array([[[-5.0, -6.0], [0.0, 0.0]], [[1.0, 2.0], [3.0, -1.0]]]))
    np.testing.assert_array_equal(pool_max_batch(H, [1, 2]).data, [[-5.0, -6.0], [3.0, 2.0]])


def test_variant_names():
    assert normalize_variant("SuBiLSTM-Tied") == "subilstm-tied"
    assert normalize_variant("bilstm-2layer") == "bilstm2"
    with pytest.raises(ValueError):
        normalize_variant("transformer")
    with pytest.raises(ValueError):
        EncoderConfig("bilstm", 0, 4)


@pytest.mark.parametrize("d,h", [(3, 4), (50, 64), (300, 300)])
def test_param_counts(d, h):
    counts = {v: param_count(EncoderConfig(v, d, h)) for v in ("bilstm", "bilstm2", "subilstm", "subilstm-tied")}
    assert counts["subilstm-tied"] == counts["bilstm"]
    assert counts["subilstm"] == 2 * counts["bilstm"]
    assert counts["bilstm2"] > counts["subilstm"]


@pytest.mark.parametrize("variant", ["bilstm", "bilstm2", "subilstm", "subilstm-tied"])
def test_instantiated_counts_match_formula(variant):
    enc = make_encoder(variant)
    assert enc.num_params == param_count(enc.config)


@pytest.mark.parametrize("variant,combiner,width", [
    ("bilstm", "max", 8), ("bilstm2", "max", 8), ("subilstm", "max", 8),
    ("subilstm-tied", "mean", 8), ("subilstm-tied", "concat", 16),
])
def test_width(variant, combiner, width):
    enc = make_encoder(variant, combiner=combiner)
    assert enc.config.width == width
    reps = enc.encode(Tensor(Rng(1).uniform(-1, 1, (5, 3))))
    assert reps.H.shape == (5, width)


def test_tied_shares_objects():
    enc = make_encoder("subilstm-tied")
    assert enc.lstms["fwd_prefix"] is enc.lstms["fwd_suffix"]
    assert enc.lstms["rev_prefix"] is enc.lstms["rev_suffix"]
    assert len(enc.unique_lstms()) == 2


def test_tied_flag_requires_shared_objects():
    rng = Rng(0)
    a, b, c, d = (LstmParams.init(3, 4, rng) for _ in range(4))
    with pytest.raises(ValueError):
        encode_subilstm_naive(Tensor(np.ones((2, 3))), a, b, c, d, tied=True)


def test_naive_matches_slice_oracle():
    for variant in ("subilstm", "subilstm-tied"):
        enc = make_encoder(variant, seed=3)
        seq = Rng(4).uniform(-1, 1, (7, 3))
        np.testing.assert_array_equal(enc.encode(Tensor(seq)).H.data, slice_oracle(enc, seq))


def test_single_token_tied_equals_bilstm():
    enc = make_encoder("subilstm-tied", seed=5)
    x = Tensor(Rng(6).uniform(-1, 1, (1, 3)))
    bi = encode_bilstm(x, enc.lstms["fwd_prefix"], enc.lstms["rev_prefix"])
    np.testing.assert_array_equal(enc.encode(x).H.data, bi.H.data)


def test_single_token_untied_formula():
    enc = make_encoder("subilstm", seed=7)
    x = Tensor(Rng(8).uniform(-1, 1, (1, 3)))
    step = {k: run_sequence(x, p).data[0] for k, p in enc.lstms.items()}
    expected = np.concatenate([
        np.maximum(step["fwd_prefix"], step["fwd_suffix"]),
        np.maximum(step["rev_prefix"], step["rev_suffix"]),
    ])
    np.testing.assert_array_equal(enc.encode(x).H.data[0], expected)


def test_palindrome_symmetry():
    # with the same LSTM in both directions the reverse half of token i
    # equals the forward half of token n-1-i on a palindrome
    rng = Rng(9)
    p = LstmParams.init(3, 4, rng)
    half = rng.uniform(-1, 1, (3, 3))
    seq = np.concatenate([half, half[::-1]])
    enc = Encoder.from_bilstm(p, p)
    H = enc.encode(Tensor(seq)).H.data
    n = len(seq)
    for i in range(n):
        np.testing.assert_array_equal(H[i, 4:], H[n - 1 - i, :4])


def test_reversal_swaps_roles():
    # encoding the reversed sentence with the LSTM roles swapped mirrors the output
    rng = Rng(10)
    enc = make_encoder("subilstm", seed=11)
    seq = rng.uniform(-1, 1, (6, 3))
    L = enc.lstms
    swapped = Encoder(enc.config, dict(
        fwd_prefix=L["rev_suffix"], fwd_suffix=L["rev_prefix"],
        rev_prefix=L["fwd_suffix"], rev_suffix=L["fwd_prefix"],
    ))
    H = enc.encode(Tensor(seq)).H.data
    R = swapped.encode(Tensor(seq[::-1].copy())).H.data[::-1]
    np.testing.assert_allclose(R[:, :4], H[:, 4:], atol=1e-12, rtol=0)
    np.testing.assert_allclose(R[:, 4:], H[:, :4], atol=1e-12, rtol=0)


def test_two_layer_is_composition():
    enc = make_encoder("bilstm2", seed=12)
    seq = Tensor(Rng(13).uniform(-1, 1, (5, 3)))
    L = enc.lstms
    first = encode_bilstm(seq, L["fwd"], L["rev"]).H
    second = encode_bilstm(first, L["fwd2"], L["rev2"]).H
    np.testing.assert_array_equal(enc.encode(seq).H.data, second.data)


def test_first_token_has_full_context():
    # the forward suffix at token 0 reads the whole sentence, so changing
    # the last token must move the first token's representation
    enc = make_encoder("subilstm-tied", seed=14)
    seq = Rng(15).uniform(-1, 1, (6, 3))
    other = seq.copy()
    other[-1] += 1.0
    a = enc.encode(Tensor(seq)).H.data
    b = enc.encode(Tensor(other)).H.data
    assert np.max(np.abs(a[0] - b[0])) > 0


def test_empty_sentence_rejected():
    with pytest.raises(ValueError):
        make_encoder("subilstm").encode(Tensor(np.zeros((0, 3))))


@pytest.mark.parametrize("variant", ["subilstm", "subilstm-tied"])
def test_encoder_gradient(variant):
    enc = make_encoder(variant, h=3, seed=16)
    seq = Tensor(Rng(17).uniform(-1, 1, (4, 3)), requires_grad=True)
    w = Tensor(Rng(18).uniform(-1, 1, (6,)))
    f = lambda: (pool_max(enc.encode(seq)) * w).sum()  # noqa: E731
    assert grad_check(f, [seq] + enc.parameters()) <= 1e-5
