"""Desk-scale two-stage vision-language compression.

Stage 1 distills a frozen teacher's image feature maps (through a 1x1
channel adapter) and text embeddings (through a projection head) into small
students with a smooth-L1 objective. Stage 2 aligns the towers with
bidirectional InfoNCE while the image side stays locked. A synthetic
bilingual world with an aligned-by-construction teacher makes every stage's
effect measurable with zero-shot classification.
"""

from .align import (AlignConfig, AlignmentBatch, contrastive_total, infonce_i2t,
                    infonce_t2i, run_stage2)
from .config import RunConfig, config_from_dict, load_config
from .data import (FrozenTeacher, ImageTextPair, WorldSpec, augment, batches,
                   caption, generate_world, make_frozen_teacher, make_pairs,
                   render_image)
from .distill import (DistillConfig, DistillReport, image_distill_loss,
                      run_stage1, text_distill_loss)
from .nn import (ImageEncoderSpec, ImageTower, LinearSpec, ParamSet,
                 TextEncoderSpec, TextTower, channel_adapter, image_encode,
                 init_params, pool_features, projection_head, set_trainable,
                 text_encode)
from .optim import AdamState, adam_step
from .tensor import Tensor, backward, grad_check, l2_normalize_rows, smooth_l1, softmax_rows
from .zeroshot import (Benchmark, EvalReport, ablation_report, build_benchmark,
                       class_embeddings, classify, evaluate)

__version__ = "0.1.0"
