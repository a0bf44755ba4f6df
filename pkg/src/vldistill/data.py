"""Deterministic synthetic bilingual world: concepts, noisy prototype images,
two caption languages with disjoint vocabularies, shared-view augmentation,
and a frozen teacher that is aligned by construction.

Every generator takes explicit seeds and is a pure function of them, so a
full pipeline rerun reproduces its datasets bit-exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError
from .nn import ImageEncoderSpec, ImageTower, ParamSet, TextEncoderSpec, TextTower
from .tensor import Tensor

LANGUAGES = ("L1", "L2")
SLOT = -1  # placeholder inside a template where the concept label goes

# prototype rejection threshold: unit vectors in d >= 8 dims are ~sqrt(2) apart
_MIN_PROTO_DIST = 1.0
_MAX_REJECTS = 1000

_FILLERS_PER_LANGUAGE = 8
_TEMPLATES_PER_LANGUAGE = 4


def derived_rng(*keys) -> np.random.Generator:
    """Independent deterministic stream named by a mix of ints and strings."""
    entropy = []
    for k in keys:
        if isinstance(k, str):
            entropy.append(int.from_bytes(hashlib.sha256(k.encode()).digest()[:8], "little"))
        else:
            entropy.append(int(k))
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class WorldSpec:
    """The synthetic universe: prototypes plus two disjoint caption languages."""
    n_concepts: int
    d_img: int
    prototypes: np.ndarray              # (K, d_img), unit rows
    token_ranges: dict[str, tuple[int, int]]
    label_tokens: dict[str, list[list[int]]]   # language -> per-concept token ids
    templates: dict[str, list[list[int]]]      # language -> templates with SLOT
    vocab_size: int
    seed: int

    def language_of(self, token: int) -> str:
        for lang, (lo, hi) in self.token_ranges.items():
            if lo <= token < hi:
                return lang
        raise ValueError(f"token {token} outside every language range")


@dataclass
class ImageTextPair:
    image: np.ndarray       # (d_img,) vector
    tokens_l1: list[int]
    tokens_l2: list[int]
    concept: int

    def tokens(self, language: str) -> list[int]:
        return self.tokens_l1 if language == "L1" else self.tokens_l2


def generate_world(n_concepts: int, d_img: int, seed: int) -> WorldSpec:
    """Build prototypes, vocabularies, and caption templates from one seed."""
    if n_concepts < 2:
        raise GenerationError(f"need at least 2 concepts, got {n_concepts}")
    if d_img < n_concepts:
        raise GenerationError(
            f"image dimension {d_img} must be >= concept count {n_concepts}")

    rng = derived_rng(seed, "world")
    protos = np.empty((n_concepts, d_img))
    rejects = 0
    k = 0
    while k < n_concepts:
        cand = rng.normal(size=d_img)
        cand /= np.linalg.norm(cand)
        if k > 0 and np.linalg.norm(protos[:k] - cand, axis=1).min() <= _MIN_PROTO_DIST:
            rejects += 1
            if rejects > _MAX_REJECTS:
                raise GenerationError("prototype rejection loop exceeded 1000 retries")
            continue
        protos[k] = cand
        k += 1

    # token id layout, disjoint by construction:
    #   L1 labels | L1 fillers | L2 labels | L2 fillers
    f = _FILLERS_PER_LANGUAGE
    ranges = {
        "L1": (0, n_concepts + f),
        "L2": (n_concepts + f, 2 * (n_concepts + f)),
    }
    label_tokens = {
        "L1": [[c] for c in range(n_concepts)],
        "L2": [[ranges["L2"][0] + c] for c in range(n_concepts)],
    }
    filler_ids = {
        "L1": list(range(n_concepts, n_concepts + f)),
        "L2": list(range(ranges["L2"][0] + n_concepts, ranges["L2"][1])),
    }

    templates: dict[str, list[list[int]]] = {}
    for lang in LANGUAGES:
        templates[lang] = []
        for _ in range(_TEMPLATES_PER_LANGUAGE):
            length = int(rng.integers(3, 7))
            words = [int(rng.choice(filler_ids[lang])) for _ in range(length)]
            words[int(rng.integers(0, length))] = SLOT
            templates[lang].append(words)

    return WorldSpec(
        n_concepts=n_concepts,
        d_img=d_img,
        prototypes=protos,
        token_ranges=ranges,
        label_tokens=label_tokens,
        templates=templates,
        vocab_size=ranges["L2"][1],
        seed=seed,
    )


def render_image(world: WorldSpec, concept: int, noise_sigma: float,
                 seed: int) -> np.ndarray:
    """Prototype plus seeded gaussian noise."""
    if not 0 <= concept < world.n_concepts:
        raise ValueError(f"concept {concept} outside [0, {world.n_concepts})")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = derived_rng(seed, "render")
    return world.prototypes[concept] + noise_sigma * rng.normal(size=world.d_img)


def caption(world: WorldSpec, concept: int, language: str, template_index: int,
            seed: int = 0) -> list[int]:
    """Instantiate a language template with the concept's label token."""
    if language not in LANGUAGES:
        raise ValueError(f"unknown language {language!r}")
    if not 0 <= concept < world.n_concepts:
        raise ValueError(f"concept {concept} outside [0, {world.n_concepts})")
    templates = world.templates[language]
    if not 0 <= template_index < len(templates):
        raise ValueError(f"template index {template_index} outside [0, {len(templates)})")
    labels = world.label_tokens[language][concept]
    pick = labels[int(derived_rng(seed, "caption").integers(0, len(labels)))]
    return [pick if t == SLOT else t for t in templates[template_index]]


def augment(image: np.ndarray, aug_seed: int, dropout: float = 0.1,
            jitter: float = 0.05) -> np.ndarray:
    """Seeded coordinate dropout plus gaussian jitter; aug_seed 0 is identity.

    The same aug_seed always reproduces the same view bit for bit, which is
    what lets the teacher and student consume an identical augmented image.
    """
    if aug_seed == 0:
        return image.copy()
    rng = derived_rng(aug_seed, "augment")
    keep = rng.random(image.shape[0]) >= dropout
    noise = rng.normal(size=image.shape[0])
    return image * keep + jitter * noise


# ---------------------------------------------------------------------------
# frozen teacher, aligned by construction


@dataclass
class FrozenTeacher:
    """Teacher encoder pair standing in for a pretrained aligned model.

    Image and text paths both land near a fixed orthonormal basis row per
    concept, so alignment is a build-time guarantee rather than a training
    outcome. All parameters are frozen.
    """
    image_spec: ImageEncoderSpec
    image_params: ParamSet
    text_spec: TextEncoderSpec
    text_params: ParamSet
    width: int

    def image_tower(self) -> ImageTower:
        return ImageTower(self.image_spec, self.image_params)

    def text_tower(self) -> TextTower:
        return TextTower(self.text_spec, self.text_params)

    def digest(self) -> str:
        return ParamSet().union(
            {"img": self.image_params, "txt": self.text_params}).digest()


_MIN_SAME_COS = 0.99
_MAX_CROSS_COS = 0.3
_LABEL_SCALE = 6.0
_FILLER_SCALE = 0.01
_TARGET_JITTER = 0.03  # per-row perturbation norm; divided by sqrt(width) per coord


def _frozen(arr: np.ndarray) -> Tensor:
    return Tensor(arr, requires_grad=False)


def make_frozen_teacher(world: WorldSpec, seed: int, positions: int = 4,
                        width: int = 32) -> FrozenTeacher:
    """Construct the aligned teacher and assert its alignment bounds.

    The image path is linear: position p maps an input x to c_p * (x @ M),
    where M sends prototype k onto a jittered orthonormal basis row u_k.
    The text path embeds concept labels near the same u_k (in both
    languages) and fillers near zero.
    """
    k, d = world.n_concepts, world.d_img
    if width < k:
        raise GenerationError(f"teacher width {width} must be >= concept count {k}")
    rng = derived_rng(seed, "teacher")

    basis = np.linalg.qr(rng.normal(size=(width, width)))[0][:k]
    jitter = _TARGET_JITTER / np.sqrt(width)
    img_targets = basis + jitter * rng.normal(size=(k, width))
    img_targets /= np.linalg.norm(img_targets, axis=1, keepdims=True)
    txt_targets = basis + jitter * rng.normal(size=(k, width))
    txt_targets /= np.linalg.norm(txt_targets, axis=1, keepdims=True)

    channel_map = np.linalg.pinv(world.prototypes) @ img_targets
    image_spec = ImageEncoderSpec(d_img=d, positions=positions, channels=width,
                                  hidden=(), nonlinearity="identity")
    image_params = ParamSet()
    for p in range(positions):
        position_gain = 1.0 + 0.25 * p
        image_params.add(f"head.{p}.w", _frozen(position_gain * channel_map))
        image_params.add(f"head.{p}.b", _frozen(np.zeros((1, width))))

    embed = _FILLER_SCALE * rng.normal(size=(world.vocab_size, width))
    for lang in LANGUAGES:
        for concept, labels in enumerate(world.label_tokens[lang]):
            for token in labels:
                embed[token] = _LABEL_SCALE * txt_targets[concept]
    text_spec = TextEncoderSpec(vocab_size=world.vocab_size, embed_width=width,
                                hidden=(), out_width=width)
    text_params = ParamSet()
    text_params.add("embed", _frozen(embed))
    text_params.add("out.w", _frozen(np.eye(width)))
    text_params.add("out.b", _frozen(np.zeros((1, width))))

    teacher = FrozenTeacher(image_spec, image_params, text_spec, text_params, width)
    _assert_teacher_alignment(teacher, world)
    return teacher


def _unit(row: np.ndarray) -> np.ndarray:
    return row / np.linalg.norm(row)


def _assert_teacher_alignment(teacher: FrozenTeacher, world: WorldSpec) -> None:
    """Build-time check of the cosine bounds the rest of the pipeline relies on."""
    img_tower = teacher.image_tower()
    txt_tower = teacher.text_tower()
    k = world.n_concepts

    image_emb = np.stack([
        _unit(img_tower.embed(Tensor(world.prototypes[c])).data[0]) for c in range(k)])
    caption_emb: dict[str, list[list[np.ndarray]]] = {}
    for lang in LANGUAGES:
        caption_emb[lang] = [
            [_unit(txt_tower.embed(caption(world, c, lang, t)).data[0])
             for t in range(len(world.templates[lang]))]
            for c in range(k)
        ]

    for c in range(k):
        for lang in LANGUAGES:
            for emb in caption_emb[lang][c]:
                cos = float(image_emb[c] @ emb)
                if cos < _MIN_SAME_COS:
                    raise GenerationError(
                        f"teacher alignment: concept {c} {lang} cosine {cos:.4f} < "
                        f"{_MIN_SAME_COS}")
            for other in range(k):
                if other == c:
                    continue
                for emb in caption_emb[lang][other]:
                    cos = float(image_emb[c] @ emb)
                    if cos > _MAX_CROSS_COS:
                        raise GenerationError(
                            f"teacher alignment: concepts {c}/{other} {lang} cosine "
                            f"{cos:.4f} > {_MAX_CROSS_COS}")
        cross = float(caption_emb["L1"][c][0] @ caption_emb["L2"][c][0])
        if cross < _MIN_SAME_COS:
            raise GenerationError(
                f"teacher alignment: cross-language cosine {cross:.4f} for concept {c}")


# ---------------------------------------------------------------------------
# datasets and batching


def make_pairs(world: WorldSpec, n: int, noise_sigma: float,
               seed: int) -> list[ImageTextPair]:
    """n image-caption pairs with captions in both languages."""
    if n < 1:
        raise ValueError("need at least one pair")
    rng = derived_rng(seed, "pairs")
    pairs = []
    for i in range(n):
        concept = int(rng.integers(0, world.n_concepts))
        image = render_image(world, concept, noise_sigma,
                             seed=int(rng.integers(1, 2**62)))
        t1 = int(rng.integers(0, len(world.templates["L1"])))
        t2 = int(rng.integers(0, len(world.templates["L2"])))
        pairs.append(ImageTextPair(
            image=image,
            tokens_l1=caption(world, concept, "L1", t1, seed=int(rng.integers(1, 2**62))),
            tokens_l2=caption(world, concept, "L2", t2, seed=int(rng.integers(1, 2**62))),
            concept=concept,
        ))
    return pairs


def batches(pairs: list[ImageTextPair], batch_size: int, epoch_seed: int,
            shuffle: bool, unique_concepts: bool = False) -> list[list[ImageTextPair]]:
    """Split pairs into batches; seeded shuffle; short final batch kept.

    With unique_concepts, each batch holds at most one pair per concept
    (pairs that would collide are deferred to later batches), which keeps
    every in-batch non-match a true negative for the contrastive loss.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not pairs:
        raise ValueError("empty dataset")
    order = list(pairs)
    if shuffle:
        perm = derived_rng(epoch_seed, "shuffle").permutation(len(order))
        order = [order[i] for i in perm]

    if not unique_concepts:
        return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]

    out = []
    pending = order
    while pending:
        batch, seen, rest = [], set(), []
        for p in pending:
            if len(batch) < batch_size and p.concept not in seen:
                batch.append(p)
                seen.add(p.concept)
            else:
                rest.append(p)
        out.append(batch)
        pending = rest
    return out
