import numpy as np
import pytest

from sadm.canvas import CanvasMask
from sadm.errors import ParameterError
from sadm.synthdata import (
    N_CLASSES,
    TEXTURE_CLASSES,
    make_triplet,
    read_dataset,
    render_texture,
    stripes_texture,
    texture_class,
    write_dataset,
)

NON_WHITE_TOL = 0.5 / 255.0


def _non_white(data: np.ndarray) -> np.ndarray:
    return (1.0 - data).max(axis=2) > NON_WHITE_TOL


def test_class_table_shape():
    assert N_CLASSES == 8
    assert len({c.name for c in TEXTURE_CLASSES}) == 8
    assert [c.id for c in TEXTURE_CLASSES] == list(range(8))
    with pytest.raises(ParameterError):
        texture_class(8)


def test_render_texture_deterministic():
    for cid in range(N_CLASSES):
        a = render_texture(cid, 77, 64, 64)
        b = render_texture(cid, 77, 64, 64)
        assert np.array_equal(a.data, b.data)


def test_stripes_exact_periodicity():
    c1 = np.array([0.8, 0.1, 0.1], dtype=np.float32)
    c2 = np.array([0.1, 0.1, 0.8], dtype=np.float32)
    period = 12
    arr = stripes_texture(64, 64, c1, c2, (1, 0), period, 0.3, 0.5)
    assert np.array_equal(arr[:, : 64 - period], arr[:, period:])
    arr_v = stripes_texture(64, 64, c1, c2, (0, 1), period, 0.3, 0.5)
    assert np.array_equal(arr_v[: 64 - period, :], arr_v[period:, :])
    arr_d = stripes_texture(64, 64, c1, c2, (1, 1), period, 0.3, 0.5)
    # shifting both axes by the period moves s by 2 full periods
    assert np.array_equal(arr_d[: 64 - period, : 64 - period], arr_d[period:, period:])


def test_distinct_classes_are_separable():
    for seed in (0, 5):
        images = [render_texture(cid, seed, 64, 64).data for cid in range(N_CLASSES)]
        for i in range(N_CLASSES):
            for j in range(i + 1, N_CLASSES):
                diff = np.abs(images[i] - images[j]).mean()
                assert diff > 0.05, (i, j, diff)


def test_texture_pixels_never_white():
    for cid in range(N_CLASSES):
        for seed in range(4):
            img = render_texture(cid, seed, 64, 64)
            assert _non_white(img.data).all(), (cid, seed)


def test_make_triplet_deterministic_and_invariants():
    t1 = make_triplet(123)
    t2 = make_triplet(123)
    assert np.array_equal(t1.image.data, t2.image.data)
    assert np.array_equal(t1.mask.data, t2.mask.data)
    assert t1.label == t2.label

    for seed in range(300):
        t = make_triplet(seed)
        outside = t.mask.data == 0
        assert (t.image.data[outside] == 1.0).all(), seed
        inside_nonwhite = _non_white(t.image.data)[t.mask.data == 1]
        assert inside_nonwhite.mean() >= 0.30, seed


def test_class_balance_binomial():
    n = 10_000
    counts = np.zeros(N_CLASSES)
    for seed in range(n):
        counts[make_triplet(seed).label] += 1
    freqs = counts / n
    assert (np.abs(freqs - 0.125) < 0.015).all(), freqs


def test_mask_family_split():
    # families recoverable by regenerating; just verify the split is active via
    # mask variety: rectangles are axis-aligned solid boxes
    fams = {"ellipse": 0, "rectangle": 0, "glyphlike": 0}
    from sadm.rng import substream
    for seed in range(2000):
        u = substream(seed, "triplet").random()
        if u < 0.4:
            fams["ellipse"] += 1
        elif u < 0.6:
            fams["rectangle"] += 1
        else:
            fams["glyphlike"] += 1
    assert abs(fams["ellipse"] / 2000 - 0.4) < 0.05
    assert abs(fams["rectangle"] / 2000 - 0.2) < 0.04
    assert abs(fams["glyphlike"] / 2000 - 0.4) < 0.05


def test_write_read_dataset_roundtrip(tmp_path):
    write_dataset(tmp_path / "ds", 6, seed=9)
    items = read_dataset(tmp_path / "ds")
    assert len(items) == 6
    for t in items:
        assert isinstance(t.mask, CanvasMask)
        assert t.image.data.shape == (64, 64, 3)
        assert 0 <= t.label < N_CLASSES
    # deterministic regeneration produces byte-identical files
    write_dataset(tmp_path / "ds2", 6, seed=9)
    for i in range(6):
        a = (tmp_path / "ds" / f"{i:06d}_img.png").read_bytes()
        b = (tmp_path / "ds2" / f"{i:06d}_img.png").read_bytes()
        assert a == b


def test_encode_dataset_order_and_length():
    import torch
    from sadm.autoencoder import AutoencoderModel
    from sadm.synthdata import encode_dataset
    torch.manual_seed(0)
    ae = AutoencoderModel()
    triplets = [make_triplet(s) for s in range(3)]
    encoded = encode_dataset(triplets, ae)
    assert len(encoded) == 3
    for (z, label, mask), t in zip(encoded, triplets):
        assert z.shape == (4, 16, 16)
        assert label == t.label
        assert mask is t.mask
