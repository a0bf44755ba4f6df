"""Glue from a RunConfig to concrete worlds, teachers, students, and reports.

Every stage is a pure function of (config, upstream artifacts); the helpers
here also define how each artifact is packed into the DCKP container so the
CLI stages can hand work to each other through files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import zeroshot
from .align import AlignConfig, AlignReport, run_stage2
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (FrozenTeacher, ImageTextPair, WorldSpec, derived_rng,
                   generate_world, make_frozen_teacher, make_pairs)
from .distill import DistillConfig, DistillReport, run_stage1
from .errors import CheckpointError
from .nn import (ImageEncoderSpec, ImageTower, ParamSet, TextEncoderSpec,
                 TextTower)
from .tensor import Tensor


def image_student_spec(cfg: RunConfig) -> ImageEncoderSpec:
    return ImageEncoderSpec(
        d_img=cfg.d_img, positions=cfg.positions, channels=cfg.student_channels,
        hidden=(cfg.image_hidden_width,) * cfg.image_hidden_layers)


def text_student_spec(cfg: RunConfig, vocab_size: int) -> TextEncoderSpec:
    return TextEncoderSpec(
        vocab_size=vocab_size, embed_width=cfg.text_embed_width,
        hidden=(cfg.text_hidden_width,) * cfg.text_hidden_layers,
        out_width=cfg.text_embed_width)


def build_world(cfg: RunConfig) -> WorldSpec:
    return generate_world(cfg.concepts, cfg.d_img,
                          seed=int(derived_rng(cfg.seed, "world-seed").integers(2**31)))


def build_teacher(cfg: RunConfig, world: WorldSpec) -> FrozenTeacher:
    return make_frozen_teacher(
        world, seed=int(derived_rng(cfg.seed, "teacher-seed").integers(2**31)),
        positions=cfg.positions, width=cfg.teacher_width)


def build_pairs(cfg: RunConfig, world: WorldSpec) -> list[ImageTextPair]:
    return make_pairs(world, cfg.train_pairs, cfg.train_sigma,
                      seed=int(derived_rng(cfg.seed, "pairs-seed").integers(2**31)))


def build_benchmark(cfg: RunConfig, world: WorldSpec,
                    sigma: float | None = None) -> zeroshot.Benchmark:
    return zeroshot.build_benchmark(
        world, cfg.eval_per_language,
        cfg.eval_sigma if sigma is None else sigma,
        seed=int(derived_rng(cfg.seed, "benchmark-seed").integers(2**31)))


def distill_image(cfg: RunConfig, world: WorldSpec, teacher: FrozenTeacher,
                  pairs: list[ImageTextPair],
                  on_step=None) -> tuple[dict[str, ParamSet], DistillReport]:
    dc = DistillConfig(target="image", beta=cfg.beta, lr=cfg.image_lr,
                       weight_decay=cfg.image_weight_decay, epochs=cfg.image_epochs,
                       batch_size=cfg.image_batch, seed=cfg.seed,
                       heldout_fraction=cfg.heldout_fraction,
                       aug_dropout=cfg.aug_dropout, aug_jitter=cfg.aug_jitter)
    return run_stage1(dc, world, teacher, pairs,
                      image_spec=image_student_spec(cfg), on_step=on_step)


def distill_text(cfg: RunConfig, world: WorldSpec, teacher: FrozenTeacher,
                 pairs: list[ImageTextPair],
                 on_step=None) -> tuple[dict[str, ParamSet], DistillReport]:
    dc = DistillConfig(target="text", beta=cfg.beta, lr=cfg.text_lr,
                       weight_decay=cfg.text_weight_decay, epochs=cfg.text_epochs,
                       batch_size=cfg.text_batch, seed=cfg.seed,
                       heldout_fraction=cfg.heldout_fraction)
    return run_stage1(dc, world, teacher, pairs,
                      text_spec=text_student_spec(cfg, world.vocab_size),
                      on_step=on_step)


def align_text(cfg: RunConfig, image_tower: ImageTower, text_tower: TextTower,
               pairs: list[ImageTextPair]) -> tuple[dict[str, ParamSet], AlignReport]:
    ac = AlignConfig(tau=cfg.tau, lr=cfg.align_lr, batch_size=cfg.align_batch,
                     passes=cfg.align_passes, seed=cfg.seed)
    return run_stage2(ac, image_tower, text_tower, pairs)


def make_image_tower(cfg: RunConfig, sets: dict[str, ParamSet]) -> ImageTower:
    return ImageTower(spec=image_student_spec(cfg), params=sets["encoder"],
                      adapter=sets["adapter"])


def make_text_tower(cfg: RunConfig, vocab_size: int,
                    sets: dict[str, ParamSet]) -> TextTower:
    return TextTower(spec=text_student_spec(cfg, vocab_size),
                     params=sets["encoder"], projection=sets["projection"])


def copy_sets(sets: dict[str, ParamSet]) -> dict[str, ParamSet]:
    """Deep copy so one variant can keep training while the other stays put."""
    out = {}
    for key, ps in sets.items():
        cp = ParamSet()
        for name, t in ps.items():
            cp.add(name, Tensor(t.data, requires_grad=t.requires_grad))
        out[key] = cp
    return out


@dataclass
class PipelineResult:
    world: WorldSpec
    teacher: FrozenTeacher
    image_sets: dict[str, ParamSet]
    stage1_text_sets: dict[str, ParamSet]
    full_text_sets: dict[str, ParamSet]
    image_report: DistillReport
    text_report: DistillReport
    align_report: AlignReport
    image_tower: ImageTower
    stage1_text_tower: TextTower
    full_text_tower: TextTower


def run_full_pipeline(cfg: RunConfig) -> PipelineResult:
    """World through stage 2, keeping both text-tower variants for ablation."""
    world = build_world(cfg)
    teacher = build_teacher(cfg, world)
    pairs = build_pairs(cfg, world)
    image_sets, image_report = distill_image(cfg, world, teacher, pairs)
    text_sets, text_report = distill_text(cfg, world, teacher, pairs)

    stage1_text_sets = copy_sets(text_sets)
    image_tower = make_image_tower(cfg, image_sets)
    full_text_tower = make_text_tower(cfg, world.vocab_size, text_sets)
    _, align_report = align_text(cfg, image_tower, full_text_tower, pairs)

    return PipelineResult(
        world=world, teacher=teacher, image_sets=image_sets,
        stage1_text_sets=stage1_text_sets, full_text_sets=text_sets,
        image_report=image_report, text_report=text_report,
        align_report=align_report, image_tower=image_tower,
        stage1_text_tower=make_text_tower(cfg, world.vocab_size, stage1_text_sets),
        full_text_tower=full_text_tower,
    )


# ---------------------------------------------------------------------------
# checkpoint packing


def _meta(cfg: RunConfig, stage: str, **extra) -> dict:
    return {"config_hash": cfg.config_hash(), "stage": stage, "seed": cfg.seed,
            **extra}


def paramsets_to_tensors(sets: dict[str, ParamSet]) -> dict[str, np.ndarray]:
    return {f"{prefix}.{name}": t.data
            for prefix, ps in sets.items() for name, t in ps.items()}


def tensors_to_paramsets(tensors: dict[str, np.ndarray]) -> dict[str, ParamSet]:
    sets: dict[str, ParamSet] = {}
    for full_name, arr in tensors.items():
        prefix, name = full_name.split(".", 1)
        sets.setdefault(prefix, ParamSet()).add(name, Tensor(arr))
    return sets


def save_dataset(path, cfg: RunConfig, world: WorldSpec,
                 pairs: list[ImageTextPair]) -> None:
    """World plus training pairs in one container; tokens padded with -1."""
    max_len = max(max(len(p.tokens_l1), len(p.tokens_l2)) for p in pairs)

    def pad(seqs):
        out = -np.ones((len(seqs), max_len))
        for i, s in enumerate(seqs):
            out[i, :len(s)] = s
        return out

    tensors = {
        "prototypes": world.prototypes,
        "images": np.stack([p.image for p in pairs]),
        "concepts": np.array([p.concept for p in pairs], dtype=np.float64),
        "tokens_l1": pad([p.tokens_l1 for p in pairs]),
        "tokens_l2": pad([p.tokens_l2 for p in pairs]),
    }
    meta = _meta(cfg, "gen-data",
                 world={
                     "n_concepts": world.n_concepts,
                     "d_img": world.d_img,
                     "token_ranges": world.token_ranges,
                     "label_tokens": world.label_tokens,
                     "templates": world.templates,
                     "vocab_size": world.vocab_size,
                     "seed": world.seed,
                 })
    save_checkpoint(path, tensors, meta)


def load_dataset(path) -> tuple[WorldSpec, list[ImageTextPair]]:
    ck = load_checkpoint(path)
    try:
        w = ck.meta["world"]
        world = WorldSpec(
            n_concepts=w["n_concepts"], d_img=w["d_img"],
            prototypes=ck.tensors["prototypes"],
            token_ranges={k: tuple(v) for k, v in w["token_ranges"].items()},
            label_tokens=w["label_tokens"],
            templates=w["templates"],
            vocab_size=w["vocab_size"], seed=w["seed"],
        )
        images = ck.tensors["images"]
        concepts = ck.tensors["concepts"].astype(int).ravel()
        toks1 = ck.tensors["tokens_l1"].astype(int)
        toks2 = ck.tensors["tokens_l2"].astype(int)
    except KeyError as e:
        raise CheckpointError(f"dataset checkpoint {path} missing entry {e}") from e
    pairs = [
        ImageTextPair(image=images[i],
                      tokens_l1=[t for t in toks1[i] if t >= 0],
                      tokens_l2=[t for t in toks2[i] if t >= 0],
                      concept=int(concepts[i]))
        for i in range(images.shape[0])
    ]
    return world, pairs


def save_teacher(path, cfg: RunConfig, teacher: FrozenTeacher) -> None:
    tensors = paramsets_to_tensors({"img": teacher.image_params,
                                    "txt": teacher.text_params})
    meta = _meta(cfg, "make-teacher", teacher={
        "positions": teacher.image_spec.positions,
        "width": teacher.width,
        "d_img": teacher.image_spec.d_img,
        "vocab_size": teacher.text_spec.vocab_size,
    })
    save_checkpoint(path, tensors, meta)


def load_teacher(path) -> FrozenTeacher:
    ck = load_checkpoint(path)
    info = ck.meta["teacher"]
    sets = tensors_to_paramsets(ck.tensors)
    image_spec = ImageEncoderSpec(d_img=info["d_img"], positions=info["positions"],
                                  channels=info["width"], hidden=(),
                                  nonlinearity="identity")
    text_spec = TextEncoderSpec(vocab_size=info["vocab_size"],
                                embed_width=info["width"], hidden=(),
                                out_width=info["width"])
    return FrozenTeacher(image_spec=image_spec, image_params=sets["img"],
                         text_spec=text_spec, text_params=sets["txt"],
                         width=info["width"])


def save_student(path, cfg: RunConfig, stage: str,
                 sets: dict[str, ParamSet]) -> None:
    save_checkpoint(path, paramsets_to_tensors(sets), _meta(cfg, stage))


def load_student(path) -> dict[str, ParamSet]:
    return tensors_to_paramsets(load_checkpoint(path).tensors)
