"""Stage 2: contrastive alignment with a locked image tower.

Both directional losses are bidirectional InfoNCE over cosine similarity;
with unit-norm rows the cosine is a plain dot product, and temperature 1
reproduces the untempered softmax form exactly. The image encoder and its
channel adapter stay frozen for the whole stage; only the text encoder and
projection head receive gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ImageTextPair, batches, derived_rng
from .errors import DegenerateInputError, NumericError, TrainingError
from .nn import ImageTower, ParamSet, TextTower, set_trainable
from .optim import AdamState, adam_step
from .tensor import Tensor

_UNIT_TOL = 1e-8


@dataclass(frozen=True)
class AlignConfig:
    tau: float = 1.0
    lr: float = 2e-6
    batch_size: int = 8
    passes: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")


@dataclass
class AlignmentBatch:
    """Paired unit-norm embedding rows; row i of images matches row i of texts."""
    images: Tensor          # (N, d)
    texts: Tensor           # (N, d)
    languages: list[str] | None = None
    concepts: list[int] | None = None

    def __post_init__(self):
        if self.images.shape != self.texts.shape:
            raise ValueError(
                f"image rows {self.images.shape} vs text rows {self.texts.shape}")
        if self.n < 1:
            raise ValueError("empty alignment batch")
        for name, t in (("images", self.images), ("texts", self.texts)):
            norms = np.linalg.norm(t.data, axis=1)
            if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
                raise DegenerateInputError(f"{name} rows are not unit-norm")
        concepts = self.concepts if self.concepts is not None else list(range(self.n))
        if len(set(concepts)) != len(concepts):
            raise ValueError("concept ids within a batch must be unique")

    @property
    def n(self) -> int:
        return self.images.shape[0]


def _nce(queries: Tensor, keys: Tensor, tau: float) -> Tensor:
    logits = T.scale(T.matmul(queries, T.transpose(keys)), 1.0 / tau)
    return T.mean_all(T.sub(T.logsumexp_rows(logits), T.diag_part(logits)))


def infonce_i2t(batch: AlignmentBatch, tau: float) -> Tensor:
    """Mean over images of -log softmax mass on the paired text."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return _nce(batch.images, batch.texts, tau)


def infonce_t2i(batch: AlignmentBatch, tau: float) -> Tensor:
    """Mirror of infonce_i2t with text rows as queries."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return _nce(batch.texts, batch.images, tau)


def contrastive_total(batch: AlignmentBatch, tau: float = 1.0) -> Tensor:
    """Arithmetic mean of the two directional losses."""
    return T.scale(T.add(infonce_i2t(batch, tau), infonce_t2i(batch, tau)), 0.5)


@dataclass
class AlignReport:
    pass_losses: list[float] = field(default_factory=list)
    first_loss: float = 0.0
    last_loss: float = 0.0
    wall_ms: float = 0.0


def run_stage2(config: AlignConfig, image_tower: ImageTower, text_tower: TextTower,
               dataset: list[ImageTextPair]) -> tuple[dict[str, ParamSet], AlignReport]:
    """Contrastive passes over the pair dataset with the image tower locked.

    Image embeddings are precomputed once (no augmentation) since nothing on
    that side can change. Batches hold unique concepts, and languages
    alternate within each batch so every batch is bilingual. The image
    tower's byte digest is asserted unchanged at the end of the run.
    """
    if image_tower.adapter is None:
        raise TrainingError("stage 2 requires the stage-1 channel adapter")
    if text_tower.projection is None:
        raise TrainingError("stage 2 requires the stage-1 projection head")
    start = time.perf_counter()

    for ps in (image_tower.params, image_tower.adapter):
        set_trainable(ps, "*", False)
    trainable = text_tower.trainable_params()
    set_trainable(trainable, "*", True)
    frozen_digest = image_tower.frozen_digest()

    all_images = np.stack([p.image for p in dataset])
    image_rows = image_tower.embed_batch(all_images).data
    image_rows = image_rows / np.linalg.norm(image_rows, axis=1, keepdims=True)
    row_of = {id(p): i for i, p in enumerate(dataset)}

    opt = AdamState(lr=config.lr)
    report = AlignReport()
    step = 0
    try:
        for pass_i in range(config.passes):
            losses = []
            epoch_seed = int(derived_rng(config.seed, "pass", pass_i).integers(2**31))
            for batch_pairs in batches(dataset, config.batch_size, epoch_seed,
                                       shuffle=True, unique_concepts=True):
                langs = ["L1" if i % 2 == 0 else "L2" for i in range(len(batch_pairs))]
                text_rows = T.l2_normalize_rows(T.concat_rows(
                    [text_tower.embed(p.tokens(lang))
                     for p, lang in zip(batch_pairs, langs)]))
                img = Tensor(np.stack([image_rows[row_of[id(p)]] for p in batch_pairs]))
                batch = AlignmentBatch(images=img, texts=text_rows, languages=langs,
                                       concepts=[p.concept for p in batch_pairs])
                loss = contrastive_total(batch, config.tau)
                T.backward(loss)
                adam_step(trainable, opt)
                losses.append(loss.item())
                if step == 0:
                    report.first_loss = losses[-1]
                step += 1
            report.pass_losses.append(float(np.mean(losses)))
    except NumericError as e:
        raise TrainingError(f"stage-2 alignment diverged at step {step}: {e}") from e

    report.last_loss = losses[-1]
    if image_tower.frozen_digest() != frozen_digest:
        raise TrainingError("stage 2 mutated the frozen image tower")
    report.wall_ms = (time.perf_counter() - start) * 1000.0
    sets = {"encoder": text_tower.params}
    if text_tower.projection is not None:
        sets["projection"] = text_tower.projection
    return sets, report
