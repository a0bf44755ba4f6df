"""Stage 1: feature distillation from the frozen teacher.

The image pipeline trains the student encoder plus its channel adapter to
reproduce the teacher's positions x channels feature maps under a shared
augmented view. The text pipeline trains the student text encoder plus its
projection head against teacher embeddings of the same captions, with both
languages interleaved in every batch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .data import FrozenTeacher, ImageTextPair, WorldSpec, augment, batches, derived_rng
from .errors import NumericError, TrainingError
from .nn import ImageEncoderSpec, LinearSpec, ParamSet, TextEncoderSpec
from .optim import AdamState, adam_step
from .tensor import Tensor


@dataclass(frozen=True)
class DistillConfig:
    target: str                 # "image" or "text"
    beta: float = 1.0
    lr: float = 3e-4
    weight_decay: float = 0.0
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    heldout_fraction: float = 0.1
    aug_dropout: float = 0.1
    aug_jitter: float = 0.05

    def __post_init__(self):
        if self.target not in ("image", "text"):
            raise ValueError(f"target must be 'image' or 'text', got {self.target!r}")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.heldout_fraction < 0.5:
            raise ValueError("heldout_fraction must be in (0, 0.5)")


@dataclass
class DistillReport:
    target: str
    initial_heldout_loss: float
    train_losses: list[float] = field(default_factory=list)   # per-epoch means
    heldout_losses: list[float] = field(default_factory=list)  # per-epoch
    wall_ms: float = 0.0

    @property
    def final_heldout_loss(self) -> float:
        return self.heldout_losses[-1] if self.heldout_losses else self.initial_heldout_loss


def _stacked_teacher_image_maps(teacher: FrozenTeacher, views: np.ndarray) -> Tensor:
    """Teacher feature maps for a batch of views, stacked head-major; constant."""
    h = nn.image_trunk(teacher.image_spec, teacher.image_params, Tensor(views))
    rows = [nn.affine(h, teacher.image_params[f"head.{p}.w"],
                       teacher.image_params[f"head.{p}.b"])
            for p in range(teacher.image_spec.positions)]
    return T.concat_rows(rows)


def image_distill_loss(teacher: FrozenTeacher, student_spec: ImageEncoderSpec,
                       student_params: ParamSet, adapter_params: ParamSet,
                       images: list[np.ndarray], aug_seeds: list[int],
                       beta: float = 1.0, aug_dropout: float = 0.1,
                       aug_jitter: float = 0.05) -> Tensor:
    """Mean smooth-L1 between adapted student maps and teacher maps.

    Each image is augmented once and the identical view feeds both paths.
    The teacher path never enters the autodiff trace.
    """
    if len(images) != len(aug_seeds):
        raise ValueError("one aug_seed per image required")
    views = np.stack([augment(img, s, aug_dropout, aug_jitter)
                      for img, s in zip(images, aug_seeds)])

    h = nn.image_trunk(student_spec, student_params, Tensor(views))
    student_rows = T.concat_rows([
        nn.affine(h, student_params[f"head.{p}.w"], student_params[f"head.{p}.b"])
        for p in range(student_spec.positions)])
    f_s = nn.channel_adapter(student_rows, adapter_params)
    f_t = _stacked_teacher_image_maps(teacher, views)
    return T.smooth_l1(f_s, f_t, beta)


def text_distill_loss(teacher: FrozenTeacher, student_spec: TextEncoderSpec,
                      student_params: ParamSet, projection_params: ParamSet,
                      token_batch: list[list[int]], beta: float = 1.0) -> Tensor:
    """Mean smooth-L1 between projected student and teacher text embeddings.

    The same token sequences go to both towers; batches may mix languages.
    """
    if not token_batch:
        raise ValueError("empty token batch")
    embed = student_params["embed"]
    mean_embeds = [T.mean_rows(T.gather_rows(embed, toks)) for toks in token_batch]
    h = T.concat_rows(mean_embeds)
    for i in range(len(student_spec.hidden)):
        h = T.tanh(nn.affine(h, student_params[f"mlp.{i}.w"],
                              student_params[f"mlp.{i}.b"]))
    w_s = nn.affine(h, student_params["out.w"], student_params["out.b"])
    w_s = nn.projection_head(w_s, projection_params)

    teacher_rows = np.concatenate(
        [nn.text_encode(teacher.text_spec, teacher.text_params, toks).data
         for toks in token_batch], axis=0)
    return T.smooth_l1(w_s, Tensor(teacher_rows), beta)


def default_image_student_spec(world: WorldSpec, teacher: FrozenTeacher,
                               channels: int = 16,
                               hidden: tuple[int, ...] = (32,)) -> ImageEncoderSpec:
    return ImageEncoderSpec(d_img=world.d_img,
                            positions=teacher.image_spec.positions,
                            channels=channels, hidden=hidden)


def default_text_student_spec(world: WorldSpec, embed_width: int = 16,
                              hidden: tuple[int, ...] = (16,),
                              out_width: int = 16) -> TextEncoderSpec:
    return TextEncoderSpec(vocab_size=world.vocab_size, embed_width=embed_width,
                           hidden=hidden, out_width=out_width)


def _split_heldout(items: list, fraction: float, seed: int) -> tuple[list, list]:
    perm = derived_rng(seed, "heldout-split").permutation(len(items))
    n_held = max(1, int(round(fraction * len(items))))
    held = [items[i] for i in perm[:n_held]]
    train = [items[i] for i in perm[n_held:]]
    return train, held


def stage1_initial_sets(target: str, seed: int, teacher: FrozenTeacher,
                        spec) -> dict[str, ParamSet]:
    """The parameter sets a stage-1 run starts from, before any step."""
    encoder = nn.init_params(spec, derived_rng(seed, "init-enc").integers(2**31))
    if target == "image":
        head = nn.init_params(LinearSpec(spec.channels, teacher.width),
                              derived_rng(seed, "init-head").integers(2**31))
        return {"encoder": encoder, "adapter": head}
    head = nn.init_params(LinearSpec(spec.out_width, teacher.width),
                          derived_rng(seed, "init-head").integers(2**31))
    return {"encoder": encoder, "projection": head}


def run_stage1(config: DistillConfig, world: WorldSpec, teacher: FrozenTeacher,
               dataset: list[ImageTextPair],
               image_spec: ImageEncoderSpec | None = None,
               text_spec: TextEncoderSpec | None = None,
               on_step=None) -> tuple[dict[str, ParamSet], DistillReport]:
    """Train one stage-1 pipeline (image or text) over the dataset.

    Returns the trained parameter sets ("encoder" plus "adapter" or
    "projection") and a per-epoch loss report. Fully deterministic in
    config.seed; held-out losses are computed without augmentation.
    """
    start = time.perf_counter()
    if config.target == "image":
        spec = image_spec or default_image_student_spec(world, teacher)
        sets = stage1_initial_sets("image", config.seed, teacher, spec)
        encoder, head = sets["encoder"], sets["adapter"]

        def batch_loss(batch, aug_seeds):
            return image_distill_loss(teacher, spec, encoder, head,
                                      [p.image for p in batch], aug_seeds,
                                      config.beta, config.aug_dropout,
                                      config.aug_jitter)
    else:
        spec = text_spec or default_text_student_spec(world)
        sets = stage1_initial_sets("text", config.seed, teacher, spec)
        encoder, head = sets["encoder"], sets["projection"]

        def batch_loss(batch, aug_seeds):
            tokens = [p.tokens(lang) for p in batch for lang in ("L1", "L2")]
            return text_distill_loss(teacher, spec, encoder, head, tokens, config.beta)

    params = ParamSet().union(sets)
    opt = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    train, held = _split_heldout(dataset, config.heldout_fraction, config.seed)

    def heldout_loss() -> float:
        return batch_loss(held, [0] * len(held)).item()

    report = DistillReport(target=config.target, initial_heldout_loss=heldout_loss())
    step = 0
    try:
        for epoch in range(config.epochs):
            epoch_losses = []
            aug_rng = derived_rng(config.seed, "aug", epoch)
            for batch in batches(train, config.batch_size,
                                 epoch_seed=derived_rng(config.seed, "epoch", epoch).integers(2**31),
                                 shuffle=True):
                seeds = [int(s) for s in aug_rng.integers(1, 2**62, len(batch))]
                loss = batch_loss(batch, seeds)
                T.backward(loss)
                adam_step(params, opt)
                epoch_losses.append(loss.item())
                step += 1
                if on_step is not None:
                    on_step(step, epoch_losses[-1])
            report.train_losses.append(float(np.mean(epoch_losses)))
            report.heldout_losses.append(heldout_loss())
    except NumericError as e:
        raise TrainingError(
            f"stage-1 {config.target} distillation diverged at step {step}: {e}") from e
    report.wall_ms = (time.perf_counter() - start) * 1000.0
    return sets, report
