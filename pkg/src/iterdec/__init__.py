"""Iterative-refinement neural decoding of quantized image patches."""

__version__ = "0.1.0"

from .codec import (DatasetFile, QuantizerConfig, block_window, dct_quantize,
                    dequantize_baseline, extract_dataset, import_quantized,
                    load_pgm, partition, save_pgm, stitch)
from .metrics import MetricReport, ms_ssim, psnr, ssim
from .model import (DecoderConfig, DecoderParams, ForwardTrace, GradientSet,
                    embed, init_params, load_checkpoint, reconstruct,
                    run_episode, save_checkpoint)
from .numerics import (NonFiniteError, SeededRng, activate, activate_deriv,
                       clip_global_norm, finite_diff_grad, init_uniform)
