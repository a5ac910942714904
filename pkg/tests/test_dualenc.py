import math

import numpy as np
import pytest
import torch

from filmseg.dualenc import (
    CheckpointError,
    ContrastiveBatchError,
    DualEncoder,
    EncoderConfig,
    EncoderWeights,
    PretrainConfig,
    Tokenizer,
    contrastive_loss,
    contrastive_pretrain,
    freeze,
    load_encoder,
    make_corpus,
    make_pairs,
    retrieval_top1,
    save_encoder,
    unfreeze,
)
from filmseg.scenegen.grammar import vocabulary

from .conftest import tiny_encoder_config


def test_tokenizer_examples():
    tok = Tokenizer(vocabulary(), max_len=20)
    ids = tok.tokenize("grab the red apple")
    assert len(ids) == 20
    assert all(i > tok.unk_id for i in ids[:4]) and ids[4] == tok.eos_id
    assert set(ids[5:]) == {tok.pad_id}
    empty = tok.tokenize("")
    assert empty[0] == tok.eos_id and set(empty[1:]) == {tok.pad_id}
    assert tok.tokenize("grab the zorp")[2] == tok.unk_id
    long = tok.tokenize(" ".join(["apple"] * 50))
    assert len(long) == 20 and long[-1] == tok.eos_id
    assert tok.decode(ids) == "grab the red apple"


def test_config_invariants():
    v = tuple(vocabulary())
    with pytest.raises(ValueError):
        EncoderConfig(v, taps=(3,))
    with pytest.raises(ValueError):
        EncoderConfig(v, n_vision_blocks=4, taps=(1, 5))
    with pytest.raises(ValueError):
        EncoderConfig(v, image_size=100)
    with pytest.raises(ValueError):
        EncoderConfig(v, text_pooling="cls")
    assert EncoderConfig.preset("large", v).model_width == 96


def test_base_preset_shapes():
    torch.manual_seed(0)
    model = DualEncoder(EncoderConfig.preset("base", vocabulary()))
    images = np.random.default_rng(0).integers(0, 256, size=(2, 128, 128, 3), dtype=np.uint8)
    with torch.no_grad():
        vp, g = model.encode_image(images)
    assert len(vp) == 5 and vp.taps == (1, 3, 5, 7, 9)
    assert all(p.shape == (2, 64, 64) for p in vp.projections)
    assert torch.allclose(g.norm(dim=-1), torch.ones(2), atol=1e-5)
    assert not torch.equal(vp.projections[0][0], vp.projections[0][1])
    with pytest.raises(ValueError):
        model.encode_image(np.zeros((1, 64, 64, 3), np.uint8))


def test_text_embedding_contract(tiny_encoder):
    a = tiny_encoder.encode_text("grab the red apple")
    b = tiny_encoder.encode_text("grab the red apple")
    assert torch.equal(a.vector, b.vector)
    assert abs(a.vector.norm().item() - 1) < 1e-5
    assert int(a.pool_index) == 4
    mean = DualEncoder(tiny_encoder_config(text_pooling="mean"))
    with torch.no_grad():
        assert abs(mean.encode_text("a cup").vector.norm().item() - 1) < 1e-5


def test_tap_consistency(tiny_encoder, small_split):
    img = np.stack([s.image for s in small_split.train[:2]])
    full, _ = tiny_encoder.encode_image(img, (1, 2, 3))
    part, _ = tiny_encoder.encode_image(img, (1, 3))
    assert torch.equal(full.projections[0], part.projections[0])
    assert torch.equal(full.projections[2], part.projections[1])


def test_contrastive_loss_rules():
    with pytest.raises(ContrastiveBatchError):
        contrastive_loss(torch.randn(1, 8), torch.randn(1, 8), torch.tensor(0.0))
    with pytest.raises(ContrastiveBatchError):
        PretrainConfig(batch_size=8)
    # identical logits for every pair -> ln(batch)
    z = torch.nn.functional.normalize(torch.ones(16, 8), dim=-1)
    assert contrastive_loss(z, z, torch.tensor(0.0)).item() == pytest.approx(math.log(16), abs=1e-6)


def test_small_pretraining_run(tmp_path):
    cfg = PretrainConfig(n_pairs=64, epochs=3, batch_size=16, warmup_steps=2, twin_fraction=0.0, seed=1)
    corpus = make_corpus(64, 1)
    held = make_pairs(32, 2)
    w = contrastive_pretrain(corpus, tiny_encoder_config(), 1, cfg, held)
    m = w.metrics
    assert not w.frozen and len(w.fingerprint) == 64
    assert m["epoch_loss"][-1] < m["epoch_loss"][0]
    # random weights put the first loss near the uniform-logit value
    assert abs(m["initial_loss"] - math.log(16)) < 1.0
    assert 0.0 <= m["heldout_retrieval"] <= 1.0
    path = save_encoder(freeze(w), tmp_path / "enc.safetensors")
    back = load_encoder(path)
    assert back.frozen and back.fingerprint == w.fingerprint


def test_shuffled_pairs_retrieve_near_chance(tiny_encoder):
    pairs = make_pairs(32, 5)
    rng = np.random.default_rng(0)
    captions = [p[1] for p in pairs]
    rng.shuffle(captions)
    assert retrieval_top1(tiny_encoder.model, np.stack([p[0] for p in pairs]), captions) <= 0.25


def test_disjoint_text_provenance_resets_text_tower():
    cfg = PretrainConfig(n_pairs=32, epochs=1, batch_size=16, warmup_steps=1, twin_fraction=0.0,
                         text_provenance="disjoint", seed=2)
    w = contrastive_pretrain(make_corpus(32, 2), tiny_encoder_config(), 2, cfg)
    assert "mlm_epoch_loss" in w.metrics


def test_freeze_is_idempotent(tiny_encoder):
    again = freeze(tiny_encoder)
    assert again.frozen and again.fingerprint == tiny_encoder.fingerprint
    assert not any(p.requires_grad for p in again.model.parameters())
    thawed = unfreeze(again)
    assert not thawed.frozen and all(p.requires_grad for p in thawed.model.parameters())


def test_checkpoint_rejects_tampering(tmp_path, tiny_encoder):
    from filmseg.tensorio import read_meta, read_tensors, write_tensors

    path = save_encoder(tiny_encoder, tmp_path / "e.safetensors")
    meta, tensors = read_meta(path), read_tensors(path)
    tensors["logit_scale"] = tensors["logit_scale"] + 1
    write_tensors(tmp_path / "bad.safetensors", tensors, meta)
    with pytest.raises(CheckpointError):
        load_encoder(tmp_path / "bad.safetensors")
    with pytest.raises(CheckpointError):
        load_encoder(tmp_path / "missing.safetensors")


def test_weights_wrapper(tiny_encoder):
    assert isinstance(tiny_encoder, EncoderWeights)
    assert tiny_encoder.config.taps == (1, 3)
