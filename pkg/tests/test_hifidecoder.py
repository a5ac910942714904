import numpy as np
import pytest
import torch

from filmseg.dualenc import DualEncoder, EncoderConfig
from filmseg.hifidecoder import (
    VARIANTS,
    Decoder,
    DecoderConfig,
    EncoderMismatchError,
    FiLMLayer,
    MaskHead,
    PredictionMask,
    UnknownVariantError,
    build_variant,
    film_modulate,
    load_decoder,
    parameter_counts,
    predict_mask,
    save_decoder,
)
from filmseg.layers import count_parameters
from filmseg.scenegen.grammar import vocabulary
from filmseg.trainloop import pixel_bce

from .gradcheck import max_relative_error, parameter_gradient_errors

TINY = dict(taps=(1, 2), width=8, n_heads=2, attn_dim=4, mlp_dim=8, encoder_width=6, joint_dim=5,
            image_size=8, patch_size=4, head_hidden=(3, 2))


def tiny(variant="hierarchical_film", seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    return Decoder(DecoderConfig(variant=variant, **TINY)).to(dtype)


def tiny_inputs(batch=2, seed=1, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    projs = [torch.randn(batch, 4, 6, generator=g, dtype=dtype) for _ in range(2)]
    q = torch.nn.functional.normalize(torch.randn(batch, 5, generator=g, dtype=dtype), dim=-1)
    return projs, q


def randomize_film(decoder, seed=3):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for layer in decoder.fusion:
            for p in layer.parameters():
                p.add_(0.5 * torch.randn(p.shape, generator=g, dtype=p.dtype))


# -- FiLM arithmetic --
def test_film_direct_arithmetic():
    x = torch.tensor([[[0.5, -0.5]]])
    out = film_modulate(x, torch.tensor([[2.0, 2.0]]), torch.tensor([[1.0, 1.0]]))
    assert torch.equal(out, torch.tensor([[[2.0, 0.0]]]))


def test_film_identity_init_and_zero_input():
    layer = FiLMLayer(5, 4)
    q = torch.randn(3, 5)
    x = torch.randn(3, 7, 4)
    assert torch.equal(layer(q, x), x)
    with torch.no_grad():
        layer.beta_net.weight.normal_()
    out = layer(q, torch.zeros(3, 7, 4))
    _, beta = layer.coefficients(q)
    assert torch.equal(out, beta.unsqueeze(1).expand(-1, 7, -1))


def test_film_shape_mismatch():
    with pytest.raises(ValueError):
        film_modulate(torch.zeros(2, 3, 4), torch.zeros(2, 5), torch.zeros(2, 5))


# -- recurrence --
@pytest.mark.parametrize("variant", VARIANTS)
def test_recurrence_holds_to_round_off(variant):
    dec = tiny(variant)
    randomize_film(dec)
    projs, q = tiny_inputs()
    trace = []
    final = dec.decode(projs, q, trace=trace)
    assert torch.equal(final, trace[-1]["D"])
    prev = None
    for i, st in enumerate(trace):
        p = dec.reduce[i](projs[i])
        carried = torch.zeros_like(p) if prev is None else dec.blocks[i - 1](prev)
        if variant == "hierarchical_film" or (variant == "single_film" and i == 0):
            layer = dec.fusion[i]
            expected = layer.alpha_net(q).unsqueeze(1) * (p + carried) + layer.beta_net(q).unsqueeze(1)
        elif variant == "single_film":
            expected = p + carried
        else:
            expected = dec.fusion[i](q, p + carried)
        assert torch.allclose(st["D"], expected, rtol=0, atol=1e-12)
        prev = st["D"]
    # base case: the first stage sees no carried state
    assert torch.count_nonzero(trace[0]["T"]) == 0


def test_identity_film_equals_unfused_reference():
    dec = tiny()
    projs, q = tiny_inputs()
    assert torch.allclose(dec.decode(projs, q), dec.decode(projs, q, fuse=False), atol=0, rtol=0)


def test_single_film_differs_only_through_later_stages():
    hier, single = tiny("hierarchical_film"), tiny("single_film")
    single.load_state_dict({k: v for k, v in hier.state_dict().items() if not k.startswith("fusion.1")})
    projs, q = tiny_inputs()
    assert torch.allclose(hier(projs, q), single(projs, q))
    with torch.no_grad():
        hier.fusion[1].alpha_net.weight.normal_()
    assert not torch.allclose(hier(projs, q), single(projs, q))


def test_projection_count_mismatch():
    with pytest.raises(ValueError):
        tiny()(tiny_inputs()[0][:1], tiny_inputs()[1])


def test_unknown_variant():
    with pytest.raises(UnknownVariantError):
        DecoderConfig(variant="late_fusion")


# -- gradients --
@pytest.mark.parametrize("variant", VARIANTS)
def test_decoder_parameter_gradients_match_finite_differences(variant):
    dec = tiny(variant)
    randomize_film(dec)
    projs, q = tiny_inputs()
    gt = (torch.rand(2, 8, 8, generator=torch.Generator().manual_seed(9)) > 0.5).double()

    def loss():
        return pixel_bce(dec(projs, q).softmax(1)[:, 1], gt)

    errors = parameter_gradient_errors(dec, loss)
    assert max(errors.values()) <= 1e-3, errors


@pytest.mark.parametrize("variant", VARIANTS)
def test_decoder_input_gradients(variant):
    dec = tiny(variant)
    randomize_film(dec)
    projs, q = tiny_inputs()
    inputs = [p.clone().requires_grad_() for p in projs] + [q.clone().requires_grad_()]
    assert torch.autograd.gradcheck(lambda a, b, c: dec([a, b], c), inputs, eps=1e-6, atol=1e-7, rtol=1e-3)


def test_film_layer_gradients():
    torch.manual_seed(0)
    layer = FiLMLayer(5, 8).double()
    randomize_film(type("M", (), {"fusion": [layer]})())
    q = torch.randn(2, 5, dtype=torch.float64)
    x = torch.randn(2, 4, 8, dtype=torch.float64)
    w = torch.randn(2, 4, 8, dtype=torch.float64)
    errors = parameter_gradient_errors(layer, lambda: (layer(q, x) * w).sum())
    assert max(errors.values()) <= 1e-3
    ins = (q.clone().requires_grad_(), x.clone().requires_grad_())
    assert torch.autograd.gradcheck(lambda a, b: layer(a, b), ins, eps=1e-6, atol=1e-7, rtol=1e-3)


def test_relative_error_helper_is_not_vacuous():
    a = torch.tensor([1.0, 2.0])
    assert max_relative_error(a, a) == 0
    assert max_relative_error(a, a * 1.01) > 1e-3


# -- mask head --
def test_mask_head_shapes_and_softmax():
    cfg = DecoderConfig()
    head = MaskHead(cfg)
    logits = head(torch.randn(2, 64, cfg.width))
    assert logits.shape == (2, 2, 128, 128)
    probs = logits.softmax(1)
    assert torch.allclose(probs.sum(1), torch.ones(2, 128, 128), atol=1e-6)
    pm = PredictionMask.from_logits(logits[0])
    shifted = PredictionMask.from_logits(logits[0] + 3.7)
    assert np.allclose(pm.prob_map, shifted.prob_map, atol=1e-6)
    assert np.array_equal(pm.binary_mask, pm.prob_map > 0.5)
    with pytest.raises(ValueError):
        head(torch.randn(1, 63, cfg.width))


# -- parameter accounting --
def test_parameter_economy_at_base_preset():
    enc = DualEncoder(EncoderConfig.preset("base", vocabulary()))
    counts = {}
    for variant in VARIANTS:
        dec = build_variant(DecoderConfig(variant=variant))
        c = parameter_counts(dec, enc)
        counts[variant] = c["decoder"]
        if variant == "hierarchical_film":
            assert c["decoder_trainable"] / c["total"] < 0.15
    assert counts["cross_attention"] > counts["hierarchical_film"]
    assert count_parameters(enc) > 5 * counts["hierarchical_film"]


# -- inference and checkpoints --
def test_predict_mask_contract(tiny_encoder, small_split):
    from filmseg.trainloop import decoder_config_for, init_decoder

    dec = init_decoder(decoder_config_for(tiny_encoder), 0)
    s = small_split.test_seen[0]
    a = predict_mask(s.image, s.query.text, tiny_encoder, dec)
    b = predict_mask(s.image, s.query.text, tiny_encoder, dec)
    assert a.prob_map.shape == (128, 128)
    assert ((a.prob_map >= 0) & (a.prob_map <= 1)).all()
    assert np.array_equal(a.binary_mask, b.binary_mask)


def test_checkpoint_binding(tmp_path, tiny_encoder):
    from filmseg.trainloop import decoder_config_for, init_decoder

    dec = init_decoder(decoder_config_for(tiny_encoder), 0)
    path = save_decoder(dec, tiny_encoder.fingerprint, tmp_path / "d.safetensors")
    back = load_decoder(path, tiny_encoder.fingerprint)
    for k, v in dec.state_dict().items():
        assert torch.equal(v, back.state_dict()[k])
    with pytest.raises(EncoderMismatchError) as e:
        load_decoder(path, "0" * 64)
    assert e.value.code == "fingerprint-mismatch"
