import numpy as np
import pytest
import torch

from sadm.autoencoder import (
    AutoencoderConfig,
    AutoencoderModel,
    ae_training_step,
    decode_svd,
    encode,
    load_autoencoder,
    save_autoencoder,
)
from sadm.canvas import RgbImage, crop_paste_white, generate_canvas_mask
from sadm.errors import DivergenceError, ParameterError, ShapeError
from sadm.rng import substream


def small_ae(seed=0) -> AutoencoderModel:
    torch.manual_seed(seed)
    model = AutoencoderModel(AutoencoderConfig(base_channels=16, mid_channels=24))
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.02 * torch.randn(p.shape, generator=gen))
    return model


def rand_pairs(n, seed=0):
    rng = substream(seed, "pairs")
    out = []
    for i in range(n):
        mask = generate_canvas_mask(i, 64, 64, "ellipse" if i % 2 else "glyphlike")
        img = RgbImage(rng.random((64, 64, 3)).astype(np.float32))
        out.append((crop_paste_white(img, mask), mask))
    return out


def test_encode_decode_shapes_ranges_determinism():
    model = small_ae()
    img, mask = rand_pairs(1)[0]
    z1 = encode(model, img)
    z2 = encode(model, img)
    assert torch.equal(z1, z2)
    assert z1.shape == (4, 16, 16)
    rec1, alpha1 = decode_svd(model, z1, mask)
    rec2, alpha2 = decode_svd(model, z1, mask)
    assert np.array_equal(rec1.data, rec2.data)
    assert np.array_equal(alpha1.data, alpha2.data)
    assert rec1.data.min() >= 0.0 and rec1.data.max() <= 1.0
    assert alpha1.data.min() >= 0.0 and alpha1.data.max() <= 1.0


def test_decoder_channel_contract():
    model = AutoencoderModel()
    assert model.dec_in.in_channels == model.config.latent_channels + 1
    # final pixel-shuffle yields 3 RGB + 1 alpha plane
    assert model.dec_out.out_channels == 4 * 4


def test_conditioning_mask_changes_output():
    model = small_ae(2)
    img, mask = rand_pairs(1, seed=2)[0]
    z = encode(model, img)
    from sadm.canvas import augment_mask
    _, a_expand = decode_svd(model, z, augment_mask(mask, 3.0, "expand"))
    _, a_contract = decode_svd(model, z, augment_mask(mask, 3.0, "contract"))
    assert not np.array_equal(a_expand.data, a_contract.data)


def test_shape_validation():
    model = small_ae(3)
    with pytest.raises(ShapeError):
        encode(model, RgbImage(np.zeros((32, 32, 3), dtype=np.float32)))
    with pytest.raises(ShapeError):
        decode_svd(model, torch.zeros(4, 8, 8), generate_canvas_mask(0, 64, 64, "ellipse"))


def test_training_step_lr_zero_keeps_weights_and_is_deterministic():
    model = small_ae(4)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    batch = rand_pairs(4, seed=4)
    l1 = ae_training_step(model, batch, 9, lr=0.0)
    l2 = ae_training_step(model, batch, 9, lr=0.0)
    assert l1 == l2 and np.isfinite(l1)
    for k, v in model.state_dict().items():
        assert torch.equal(before[k], v), k
    with pytest.raises(ParameterError):
        ae_training_step(model, [], 0, 1e-3)


def test_divergence_error_on_nonfinite_loss():
    model = small_ae(5)
    with torch.no_grad():
        model.enc_in.weight[0, 0, 0, 0] = float("nan")
    with pytest.raises(DivergenceError):
        ae_training_step(model, rand_pairs(2, seed=5), 0, 1e-3)


def test_gradients_match_finite_differences():
    model = small_ae(6).double()
    batch = rand_pairs(2, seed=6)
    seed = 31
    ae_training_step(model, batch, seed, lr=0.0)
    grads = {n: p.grad.clone() for n, p in model.named_parameters() if p.grad is not None}

    rng = np.random.default_rng(17)
    names = list(grads)
    h = 1e-5
    checked = 0
    while checked < 8:
        name = names[int(rng.integers(len(names)))]
        param = dict(model.named_parameters())[name]
        idx = tuple(int(rng.integers(s)) for s in param.shape)
        an = grads[name][idx].item()
        if abs(an) < 1e-10:
            continue
        with torch.no_grad():
            param[idx] += h
        hi = ae_training_step(model, batch, seed, lr=0.0)
        with torch.no_grad():
            param[idx] -= 2 * h
        lo = ae_training_step(model, batch, seed, lr=0.0)
        with torch.no_grad():
            param[idx] += h
        fd = (hi - lo) / (2 * h)
        assert abs(fd - an) / max(abs(fd), abs(an)) < 1e-3, (name, idx, fd, an)
        checked += 1


def test_fixed_batch_loss_halves_in_500_steps():
    torch.manual_seed(8)
    model = AutoencoderModel()  # default architecture
    batch = rand_pairs(8, seed=8)
    state = {}
    first = ae_training_step(model, batch, 0, lr=1e-3, momentum=0.9, momentum_state=state)
    last = first
    for step in range(1, 500):
        last = ae_training_step(model, batch, step, lr=1e-3, momentum=0.9, momentum_state=state)
    assert last < 0.5 * first, (first, last)


def test_fold_latent_scale_preserves_reconstruction():
    model = small_ae(9)
    img, mask = rand_pairs(1, seed=9)[0]
    z_before = encode(model, img)
    rec_before, alpha_before = decode_svd(model, z_before, mask)
    model.fold_latent_scale(2.5)
    z_after = encode(model, img)
    assert torch.allclose(z_after, z_before / 2.5, atol=1e-5)
    rec_after, alpha_after = decode_svd(model, z_after, mask)
    assert np.allclose(rec_after.data, rec_before.data, atol=1e-5)
    assert np.allclose(alpha_after.data, alpha_before.data, atol=1e-5)
    with pytest.raises(ParameterError):
        model.fold_latent_scale(0.0)


def test_save_load_roundtrip(tmp_path):
    model = small_ae(10)
    state = {}
    ae_training_step(model, rand_pairs(2, seed=10), 1, 1e-3, momentum=0.9, momentum_state=state)
    p = tmp_path / "ae.sadm"
    save_autoencoder(model, p, state)
    back, mom = load_autoencoder(p)
    assert back.config == model.config
    for (ka, va), (kb, vb) in zip(model.state_dict().items(), back.state_dict().items()):
        assert ka == kb and torch.equal(va, vb)
    for k in state:
        assert torch.equal(mom[k], state[k])
