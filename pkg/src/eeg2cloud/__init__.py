"""EEG-to-colored-point-cloud decoding pipeline.

Preprocess multi-channel EEG, encode static+dynamic responses with an
attention-based fusion encoder, decouple geometry/appearance features under
contrastive alignment, and reconstruct colored 3D point clouds with a
conditional denoising diffusion decoder. Includes a synthetic paired-data
generator and a full evaluation/ablation harness.
"""

__version__ = "0.1.0"
