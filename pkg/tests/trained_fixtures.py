"""Shared trained-model fixture for the acceptance suite.

Training runs once per checkout and is cached under tests/_artifacts; the
checkpoints are fully determined by the constants below, so any test that
needs trained models converges on the same files. Delete the directory to
force a retrain.
"""

from pathlib import Path

from sadm.rng import derive_seed
from sadm.synthdata import encode_dataset, make_triplet
from sadm.training import (
    resume_autoencoder,
    resume_denoiser,
    train_autoencoder,
    train_denoiser,
)

ARTIFACTS = Path(__file__).parent / "_artifacts"
DATASET_SEED = 7
DATASET_SIZE = 8192
HELD_OUT_SEED = 8
AE_SEED = 42
AE_STEPS = 4000
AE_BATCH = 32
AE_LR = 1e-3
DEN_SEED = 43
DEN_STEPS = 10_000
DEN_BATCH = 16
DEN_LR = 2e-4


def dataset_triplets(size: int = DATASET_SIZE):
    return [make_triplet(derive_seed(DATASET_SEED, "dataset", i)) for i in range(size)]


def held_out_triplets(n: int = 64):
    return [make_triplet(derive_seed(HELD_OUT_SEED, "held", i)) for i in range(n)]


def ensure_trained():
    """Return (denoiser, autoencoder), training and caching on first use."""
    ae_path = ARTIFACTS / "ae.sadm"
    den_path = ARTIFACTS / "denoiser.sadm"
    ARTIFACTS.mkdir(exist_ok=True)

    if not ae_path.exists():
        triplets = dataset_triplets()
        train_autoencoder(triplets, AE_STEPS, AE_SEED, batch_size=AE_BATCH, lr=AE_LR,
                          checkpoint_path=ae_path, log_path=ARTIFACTS / "ae_loss.csv")
    ae, _ = resume_autoencoder(ae_path)
    ae.eval()

    if not den_path.exists():
        triplets = dataset_triplets()
        encoded = encode_dataset(triplets, ae)
        train_denoiser(encoded, DEN_STEPS, DEN_SEED, batch_size=DEN_BATCH, lr=DEN_LR,
                       checkpoint_path=den_path,
                       log_path=ARTIFACTS / "denoiser_loss.csv")
    den, _ = resume_denoiser(den_path)
    den.eval()
    return den, ae
