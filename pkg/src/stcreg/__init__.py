"""Self-supervised video feature pretraining via siamese consistency.

A clean branch sees a raw crop of a clip; a noise branch sees the same
content after a random flip/rotation transform and frame mixing.  Both
run through one shared 3D-CNN, and two losses pull their features back
together: a temporal mean-squared term on spatial-max descriptors
(after undoing the transform on the feature grid) and a channel-wise KL
term between small learnable heads.  Everything runs on a from-scratch
float64 autodiff engine so gradients can be verified against finite
differences.
"""

from . import autodiff, augment, data, evaluate, losses, model, train, transforms, viz
from .augment import (
    AugmentVariant,
    MixupRecord,
    gaussian_noise,
    inter_video_mixup,
    intra_video_mixup,
    video_cutmix,
    video_mixup,
)
from .config import AppConfig, EvalSettings, load_config
from .data import SyntheticSpec, gen_synthetic, generate_clips, read_clip, write_clip
from .errors import ConfigError, DimensionError, FormatError, NumericError, StcrError
from .evaluate import extract_features, linear_probe, retrieval_eval
from .losses import LossReport, channel_consistency_loss, combined_loss, temporal_consistency_loss
from .model import (
    BackboneConfig,
    ModelParams,
    backbone_forward,
    channel_head,
    init_params,
    load_checkpoint,
    save_checkpoint,
    spatial_max_pool,
)
from .train import TrainConfig, TrainState, collapse_metric, double_crop, pretrain_step, run_pretraining
from .transforms import (
    ALL_TRANSFORMS,
    IDENTITY,
    Flip,
    Rotation,
    TransformId,
    compose,
    invert,
    invert_transform_on_feature,
    sample_transform,
    transform_clip,
    transform_feature,
)

__version__ = "0.1.0"
