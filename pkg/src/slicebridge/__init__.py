"""Slice-consistent volumetric image-to-image translation with a 2D
Brownian bridge diffusion model, histogram style-key conditioning, and
aligned (co-predict + correct) deterministic sampling."""

from .schedule import ScheduleParams, ScheduleTable, build_schedule, posterior_mean, subsequence
from .volume import (Volume, SubVolume, VolumeFormatError, load_volume, save_volume,
                     min_max_normalize, extract_subvolume, reslice, reassemble, save_pgm)
from .style_key import (StyleKey, compute_style_key, average_style_keys,
                        histogram_distance, key_from_hist)
from .phantom import PhantomConfig, StyleParams, generate_pair, generate_dataset
from .estimator import (NoiseEstimator, OracleEstimator, TrainableEstimator,
                        TrainingConfig, make_training_example, train,
                        predict_with_sourcecond, save_checkpoint, load_checkpoint,
                        gradient_check)
from .sampler import (SamplerConfig, forward_sample, reverse_step, co_predict,
                      score, correct, ista_sample, naive_sample)
from .metrics import EvalReport, nrmse, psnr, ssim, slice_consistency, evaluate
from .phantom import sample_styles
from .verify import VerificationReport, run_battery

__version__ = "0.1.0"
