"""Zero-shot classification over the synthetic bilingual benchmark.

Class embeddings follow the usual prompt-ensembling recipe: embed every
templated caption for a class, normalize, average across templates, and
re-normalize. Prediction is argmax cosine with ties broken toward the
lowest class index so reports are reproducible bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import LANGUAGES, SLOT, WorldSpec, derived_rng, render_image
from .errors import ShapeError
from .nn import ImageTower, TextTower


@dataclass
class Benchmark:
    """Labeled eval images per language plus the caption material for classes."""
    n_concepts: int
    sigma: float
    images: dict[str, np.ndarray]        # language -> (N, d_img)
    concepts: dict[str, list[int]]       # language -> N labels
    label_tokens: dict[str, list[list[int]]]
    templates: dict[str, list[list[int]]]


def build_benchmark(world: WorldSpec, per_language: int, sigma: float,
                    seed: int) -> Benchmark:
    """Render a seeded eval split, disjoint from training by seed namespace."""
    if per_language < world.n_concepts:
        raise ValueError(
            f"per_language ({per_language}) must cover all {world.n_concepts} concepts")
    images: dict[str, np.ndarray] = {}
    concepts: dict[str, list[int]] = {}
    for lang in LANGUAGES:
        rng = derived_rng(seed, "benchmark", lang)
        labels = [int(rng.integers(0, world.n_concepts)) for _ in range(per_language)]
        # round-robin prefix guarantees every concept appears in the split
        for i in range(min(world.n_concepts, per_language)):
            labels[i] = i
        images[lang] = np.stack([
            render_image(world, c, sigma, seed=int(rng.integers(1, 2**62)))
            for c in labels])
        concepts[lang] = labels
    return Benchmark(n_concepts=world.n_concepts, sigma=sigma, images=images,
                     concepts=concepts, label_tokens=world.label_tokens,
                     templates=world.templates)


def class_embeddings(text_tower: TextTower, label_tokens: list[list[int]],
                     templates: list[list[int]]) -> np.ndarray:
    """K x d matrix of unit-norm class rows, template-ensembled."""
    if not templates:
        raise ValueError("empty template list")
    rows = []
    for labels in label_tokens:
        per_template = []
        for template in templates:
            tokens = [labels[0] if t == SLOT else t for t in template]
            emb = text_tower.embed(tokens).data[0]
            per_template.append(emb / np.linalg.norm(emb))
        mean = np.mean(per_template, axis=0)
        rows.append(mean / np.linalg.norm(mean))
    return np.stack(rows)


def classify(embedding: np.ndarray, class_matrix: np.ndarray) -> int:
    """Argmax cosine over unit rows; first index wins exact ties."""
    if class_matrix.shape[0] == 0:
        raise ShapeError("empty class matrix")
    return int(np.argmax(class_matrix @ embedding))


@dataclass
class EvalReport:
    language: str
    variant: str
    n: int
    accuracy: float
    per_class_correct: list[int]
    per_class_total: list[int]
    confusion: list[list[int]]

    def per_class_accuracy(self) -> list[float]:
        return [c / t if t else 0.0
                for c, t in zip(self.per_class_correct, self.per_class_total)]

    def to_dict(self) -> dict:
        return {
            "language": self.language,
            "variant": self.variant,
            "n": self.n,
            "accuracy": self.accuracy,
            "per_class_correct": self.per_class_correct,
            "per_class_total": self.per_class_total,
            "confusion": self.confusion,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def format_table(self) -> str:
        lines = [f"variant={self.variant} language={self.language} "
                 f"n={self.n} top1={self.accuracy:.4f}",
                 "class  correct  total  acc"]
        for k, (c, t) in enumerate(zip(self.per_class_correct, self.per_class_total)):
            acc = c / t if t else 0.0
            lines.append(f"{k:5d}  {c:7d}  {t:5d}  {acc:.3f}")
        return "\n".join(lines)


def _image_embeddings(image_tower: ImageTower, images: np.ndarray) -> np.ndarray:
    rows = image_tower.embed_batch(images).data
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def evaluate(image_tower: ImageTower, text_tower: TextTower, benchmark: Benchmark,
             language: str, variant: str = "model", shards: int = 1) -> EvalReport:
    """Top-1 accuracy on one language split; no augmentation at eval time.

    Sharding sums integer per-shard counts, so any shard count yields the
    same report as a single pass.
    """
    if language not in benchmark.images:
        raise ValueError(f"unknown language {language!r}")
    if shards < 1:
        raise ValueError("shards must be >= 1")
    images = benchmark.images[language]
    labels = benchmark.concepts[language]
    if len(labels) == 0:
        raise ValueError("empty evaluation split")
    class_matrix = class_embeddings(text_tower, benchmark.label_tokens[language],
                                    benchmark.templates[language])
    if class_matrix.shape[1] != image_tower.embed_batch(images[:1]).shape[1]:
        raise ShapeError("image and text tower widths differ")

    k = benchmark.n_concepts
    correct = np.zeros(k, dtype=int)
    total = np.zeros(k, dtype=int)
    confusion = np.zeros((k, k), dtype=int)
    all_rows = _image_embeddings(image_tower, images)
    bounds = np.linspace(0, len(labels), shards + 1).astype(int)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        # shards accumulate integer counts; their sum is order-independent
        for row, label in zip(all_rows[lo:hi], labels[lo:hi]):
            pred = classify(row, class_matrix)
            total[label] += 1
            confusion[label][pred] += 1
            if pred == label:
                correct[label] += 1
    return EvalReport(
        language=language, variant=variant, n=len(labels),
        accuracy=float(correct.sum() / total.sum()),
        per_class_correct=correct.tolist(), per_class_total=total.tolist(),
        confusion=confusion.tolist(),
    )


@dataclass
class AblationReport:
    """Paired before/after-alignment evaluation, one row per language."""
    stage1: dict[str, EvalReport]
    full: dict[str, EvalReport]
    deltas: dict[str, float] = field(default_factory=dict)

    def format_table(self) -> str:
        lines = ["language  stage1-only  full    delta"]
        for lang in self.stage1:
            a, b = self.stage1[lang].accuracy, self.full[lang].accuracy
            lines.append(f"{lang:8s}  {a:11.4f}  {b:.4f}  {b - a:+.4f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "stage1": {k: r.to_dict() for k, r in self.stage1.items()},
            "full": {k: r.to_dict() for k, r in self.full.items()},
            "deltas": self.deltas,
        }


def ablation_report(image_tower: ImageTower, stage1_text: TextTower,
                    full_text: TextTower, benchmark: Benchmark) -> AblationReport:
    """Accuracy deltas (full minus stage1-only) sharing one frozen image tower."""
    stage1 = {}
    full = {}
    for lang in LANGUAGES:
        stage1[lang] = evaluate(image_tower, stage1_text, benchmark, lang,
                                variant="stage1-only")
        full[lang] = evaluate(image_tower, full_text, benchmark, lang,
                              variant="full")
    report = AblationReport(stage1=stage1, full=full)
    report.deltas = {lang: full[lang].accuracy - stage1[lang].accuracy
                     for lang in LANGUAGES}
    return report
