"""maskvid: masked visual-token video generation at desk scale.

Pipeline: a k-means patch codebook tokenizes videos into discrete grids; a
patchwise spatio-temporal transformer learns to predict masked tokens under
text and action prompts; a confidence-based parallel decoder generates videos
for image-to-video, text-to-video, inpainting, stylization and action-to-video.
"""

from .inference import (DecodeConfig, DecodeReport, autoregressive_decode, build_task_mask,
                        cfg_logits, parallel_decode)
from .masking import (FrameMask, UnmaskSchedule, inference_unmask_counts, sample_mask_rate,
                      sample_train_mask)
from .model import VideoTokenModel, build_model
from .prompt import PromptEncoder, text_to_ids
from .tokenizer import Codebook, TokenGrid, Video, decode_tokens, encode_video, fit_codebook
from .training import (TrainConfig, Trainer, finite_diff_gradcheck, load_checkpoint,
                       masked_top1_accuracy, save_checkpoint, train_step)
from .transformer import ModelConfig, SpatioTemporalTransformer, masked_ce_loss

__version__ = "0.1.0"

__all__ = [
    "Codebook", "DecodeConfig", "DecodeReport", "FrameMask", "ModelConfig", "PromptEncoder",
    "SpatioTemporalTransformer", "TokenGrid", "TrainConfig", "Trainer", "UnmaskSchedule",
    "Video", "VideoTokenModel", "autoregressive_decode", "build_model", "build_task_mask",
    "cfg_logits", "decode_tokens", "encode_video", "finite_diff_gradcheck", "fit_codebook",
    "inference_unmask_counts", "load_checkpoint", "masked_ce_loss", "masked_top1_accuracy",
    "parallel_decode", "sample_mask_rate", "sample_train_mask", "save_checkpoint", "text_to_ids",
]
