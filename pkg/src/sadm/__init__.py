"""Shape-adaptive latent diffusion on irregular canvases, desk scale.

Library surface: canvas rasters and procedural masks (`canvas`), the noise
schedule and DDIM pieces (`schedule`), partitioned attention (`attention`),
the mask-conditioned denoiser and alpha-predicting autoencoder (`denoiser`,
`autoencoder`), the two-stage generation/transfer pipeline (`pipeline`),
procedural training data (`synthdata`), masked metrics (`metrics`), the
benchmark format and runner (`bench`), and the CLI (`cli`).
"""

__version__ = "0.1.0"

from .canvas import AlphaMask, CanvasMask, RgbImage  # noqa: F401
from .pipeline import EffectResult, TransferContext  # noqa: F401
