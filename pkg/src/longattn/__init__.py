"""Patch-based long-range attention deepfake detector.

A CNN backbone is guided by two template-attention banks: a spatial bank
scoring the patches of one frame and a temporal bank scoring the patches of
the frame plus the motion residuals of its following frames.  The package
also ships a synthetic-defect corpus generator and a training/evaluation
harness with finite-difference gradient verification.
"""

from .attention import (
    TemplateAttentionBank,
    combine_heads,
    head_forward,
    latent_transform,
    recalibrate,
    resize_map,
    template_activation,
)
from .backbone import Backbone, BackboneConfig
from .metrics import auc_exact, roc_points
from .model import (
    MODES,
    DetectorModel,
    ModelConfig,
    build_model,
    desk_config,
    full_config,
    load_checkpoint,
    micro_config,
    save_checkpoint,
)
from .patches import (
    PatchFrontEnd,
    PatchSequence,
    add_position,
    flatten_and_project,
    reassemble_patches,
    split_into_patches,
)
from .synthcorpus import (
    CorpusConfig,
    SyntheticSample,
    build_corpus,
    gen_base_face,
    gen_video_window,
    inject_blur,
    inject_checkerboard,
    inject_recolor,
    inject_warp,
    load_manifest,
)
from .temporal import (
    FrameWindow,
    aggregate_temporal_activations,
    motion_residual,
    residual_window,
    temporal_forward,
)
from .train import TrainConfig, evaluate, load_split, train

__version__ = "0.1.0"
