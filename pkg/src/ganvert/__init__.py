"""Two-step inversion of a small split generator into its latent space and
its first dense layer, with attention-based segmentation and interpolation."""

__version__ = "0.1.0"

from .generator import (GeneratorConfig, GeneratorBundle, LinearProbe, DenseCode, init_weights,
                        load_weights, save_weights, g1_forward, g2_forward, full_forward)
from .loss import LossConfig, FeatureExtractor, loss_mse_feat
from .inversion import (InversionConfig, InversionResult, invert_latent, invert_dense,
                        invert_two_step, invert_dense_unregularized)
from .segmentation import segment, agglomerative_cluster, dissimilarity, upsample_attention
from .interpolation import interpolate
from .config import RunConfig
