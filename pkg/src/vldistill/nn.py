"""Encoder building blocks: parameter sets, MLP encoders, and the two
dimension-matching layers (per-position channel adapter and text projection).

The image encoder is an MLP trunk followed by one linear head per feature
position, so its output is a positions x channels feature map rather than a
single vector. The text encoder is a bag-of-tokens mean embedding followed
by an MLP, which makes it order-invariant by construction.
"""

from __future__ import annotations

import fnmatch
import hashlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


class ParamSet:
    """Ordered name -> Tensor map; trainability lives on each tensor."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def union(self, others: dict[str, "ParamSet"]) -> "ParamSet":
        """Combined view with prefixed names; tensors are shared, not copied."""
        merged = ParamSet()
        for prefix, ps in others.items():
            for name, t in ps.items():
                merged.add(f"{prefix}.{name}", t)
        return merged

    def digest(self) -> str:
        """SHA-256 over names, shapes, and raw little-endian bytes of all tensors."""
        h = hashlib.sha256()
        for name, t in self._params.items():
            h.update(name.encode())
            h.update(repr(t.shape).encode())
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()


def set_trainable(params: ParamSet, pattern: str, flag: bool) -> None:
    """Set the trainable flag on every parameter whose name matches the glob.

    Matching nothing is a configuration error, not a silent no-op.
    """
    matched = fnmatch.filter(params.names(), pattern)
    if not matched:
        raise ConfigError(f"pattern {pattern!r} matches no parameter")
    for name in matched:
        params[name].requires_grad = flag


@dataclass(frozen=True)
class ImageEncoderSpec:
    d_img: int
    positions: int
    channels: int
    hidden: tuple[int, ...] = ()
    nonlinearity: str = "tanh"

    def __post_init__(self):
        if self.positions < 1 or self.channels < 1 or self.d_img < 1:
            raise ConfigError("image encoder dimensions must be positive")
        if self.nonlinearity not in ("tanh", "identity"):
            raise ConfigError(f"unknown nonlinearity {self.nonlinearity!r}")


@dataclass(frozen=True)
class TextEncoderSpec:
    vocab_size: int
    embed_width: int
    hidden: tuple[int, ...] = ()
    out_width: int = 0

    def __post_init__(self):
        if self.vocab_size < 1 or self.embed_width < 1 or self.out_width < 1:
            raise ConfigError("text encoder dimensions must be positive")


@dataclass(frozen=True)
class LinearSpec:
    """Shape of a single affine layer (the channel adapter or the projection head)."""
    d_in: int
    d_out: int


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


def init_params(spec, seed: int) -> ParamSet:
    """Seeded uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    if isinstance(spec, ImageEncoderSpec):
        width = spec.d_img
        for i, h in enumerate(spec.hidden):
            ps.add(f"trunk.{i}.w", Tensor(_xavier(rng, width, h), requires_grad=True))
            ps.add(f"trunk.{i}.b", Tensor(np.zeros((1, h)), requires_grad=True))
            width = h
        for p in range(spec.positions):
            ps.add(f"head.{p}.w",
                   Tensor(_xavier(rng, width, spec.channels), requires_grad=True))
            ps.add(f"head.{p}.b",
                   Tensor(np.zeros((1, spec.channels)), requires_grad=True))
    elif isinstance(spec, TextEncoderSpec):
        ps.add("embed", Tensor(_xavier(rng, spec.vocab_size, spec.embed_width),
                               requires_grad=True))
        width = spec.embed_width
        for i, h in enumerate(spec.hidden):
            ps.add(f"mlp.{i}.w", Tensor(_xavier(rng, width, h), requires_grad=True))
            ps.add(f"mlp.{i}.b", Tensor(np.zeros((1, h)), requires_grad=True))
            width = h
        ps.add("out.w", Tensor(_xavier(rng, width, spec.out_width), requires_grad=True))
        ps.add("out.b", Tensor(np.zeros((1, spec.out_width)), requires_grad=True))
    elif isinstance(spec, LinearSpec):
        ps.add("w", Tensor(_xavier(rng, spec.d_in, spec.d_out), requires_grad=True))
        ps.add("b", Tensor(np.zeros((1, spec.d_out)), requires_grad=True))
    else:
        raise ConfigError(f"cannot initialize parameters for {type(spec).__name__}")
    return ps


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    out = T.matmul(x, w)
    if out.shape[0] == 1:
        return T.add(out, b)
    return T.add(out, T.repeat_row(b, out.shape[0]))


def _nonlin(x: Tensor, tag: str) -> Tensor:
    return T.tanh(x) if tag == "tanh" else x


def image_trunk(spec: ImageEncoderSpec, params: ParamSet, x: Tensor) -> Tensor:
    """Shared MLP trunk; works on a single row or a whole batch of rows."""
    h = x
    for i in range(len(spec.hidden)):
        h = _nonlin(affine(h, params[f"trunk.{i}.w"], params[f"trunk.{i}.b"]),
                    spec.nonlinearity)
    return h


def image_encode(spec: ImageEncoderSpec, params: ParamSet, image: Tensor) -> Tensor:
    """Encode one image row into a positions x channels feature map."""
    if image.shape != (1, spec.d_img):
        raise ShapeError(
            f"image_encode expects shape (1, {spec.d_img}), got {image.shape}")
    h = image_trunk(spec, params, image)
    rows = [affine(h, params[f"head.{p}.w"], params[f"head.{p}.b"])
            for p in range(spec.positions)]
    return T.concat_rows(rows)


def channel_adapter(feature_map: Tensor, params: ParamSet) -> Tensor:
    """Map each position row through the same affine channel transform.

    This is exactly the semantics of a 1x1 convolution over channels:
    out[p] = F[p] @ W + b, independently per position.
    """
    w = params["w"]
    if feature_map.shape[1] != w.shape[0]:
        raise ShapeError(
            f"channel_adapter: {feature_map.shape[1]} input channels vs "
            f"weight {w.shape}")
    return affine(feature_map, w, params["b"])


def text_encode(spec: TextEncoderSpec, params: ParamSet,
                tokens: list[int]) -> Tensor:
    """Mean token embedding pushed through the MLP stack; one output row."""
    if len(tokens) == 0:
        raise ShapeError("text_encode: empty token sequence")
    if min(tokens) < 0 or max(tokens) >= spec.vocab_size:
        raise ShapeError(
            f"text_encode: token id outside vocabulary of size {spec.vocab_size}")
    h = T.mean_rows(T.gather_rows(params["embed"], tokens))
    for i in range(len(spec.hidden)):
        h = T.tanh(affine(h, params[f"mlp.{i}.w"], params[f"mlp.{i}.b"]))
    return affine(h, params["out.w"], params["out.b"])


def projection_head(w_text: Tensor, params: ParamSet) -> Tensor:
    """Affine map converting a text embedding row to the teacher's width."""
    if w_text.shape[1] != params["w"].shape[0]:
        raise ShapeError(
            f"projection_head: input width {w_text.shape[1]} vs weight "
            f"{params['w'].shape}")
    return affine(w_text, params["w"], params["b"])


def pool_features(feature_map: Tensor) -> Tensor:
    """Mean over positions: (P, C) feature map -> (1, C) embedding row."""
    return T.mean_rows(feature_map)


# ---------------------------------------------------------------------------
# tower compositions used by alignment and evaluation


@dataclass
class ImageTower:
    """Image encoder plus optional channel adapter, pooled to one row."""
    spec: ImageEncoderSpec
    params: ParamSet
    adapter: ParamSet | None = None

    def embed(self, image: Tensor) -> Tensor:
        fmap = image_encode(self.spec, self.params, image)
        if self.adapter is not None:
            fmap = channel_adapter(fmap, self.adapter)
        return pool_features(fmap)

    def embed_batch(self, images: np.ndarray) -> Tensor:
        """Pooled embeddings for a (B, d_img) batch, one row per image.

        Pooling commutes with the per-position heads, so the batch path
        averages head outputs directly; it matches embed() row for row.
        """
        h = image_trunk(self.spec, self.params, Tensor(images))
        pooled = None
        for p in range(self.spec.positions):
            row = affine(h, self.params[f"head.{p}.w"], self.params[f"head.{p}.b"])
            pooled = row if pooled is None else T.add(pooled, row)
        pooled = T.scale(pooled, 1.0 / self.spec.positions)
        if self.adapter is not None:
            pooled = channel_adapter(pooled, self.adapter)
        return pooled

    def frozen_digest(self) -> str:
        sets = {"encoder": self.params}
        if self.adapter is not None:
            sets["adapter"] = self.adapter
        return ParamSet().union(sets).digest()


@dataclass
class TextTower:
    """Text encoder plus optional projection head."""
    spec: TextEncoderSpec
    params: ParamSet
    projection: ParamSet | None = None

    def embed(self, tokens: list[int]) -> Tensor:
        out = text_encode(self.spec, self.params, tokens)
        if self.projection is not None:
            out = projection_head(out, self.projection)
        return out

    def trainable_params(self) -> ParamSet:
        sets = {"text": self.params}
        if self.projection is not None:
            sets["proj"] = self.projection
        return ParamSet().union(sets)
