"""Finite-difference verification of every differentiable loss.

Each check compares backward gradients against central differences at
several random points, including the full compositions through the tiny
encoder stacks, and reports the worst relative error per loss.
"""

from __future__ import annotations

import numpy as np

from . import nn
from . import tensor as T
from .align import AlignmentBatch, contrastive_total, infonce_i2t, infonce_t2i
from .data import generate_world, make_frozen_teacher, make_pairs
from .distill import image_distill_loss, text_distill_loss
from .nn import ImageEncoderSpec, LinearSpec, ParamSet, TextEncoderSpec
from .tensor import Tensor, grad_check

N_POINTS = 10
TOLERANCE = 1e-6


def _residuals_away_from_junction(rng, shape, beta):
    """Residuals for smooth-L1 checks, kept clear of the |d| = beta kink."""
    d = rng.uniform(-2 * beta, 2 * beta, size=shape)
    near = np.abs(np.abs(d) - beta) < 0.1 * beta
    d[near] = 0.5 * beta * np.sign(d[near])
    return d


def check_smooth_l1() -> float:
    worst = 0.0
    for point in range(N_POINTS):
        rng = np.random.default_rng(100 + point)
        beta = float(rng.uniform(0.3, 2.0))
        target = Tensor(rng.normal(size=(3, 4)))
        d = _residuals_away_from_junction(rng, (3, 4), beta)
        pred = Tensor(target.data + d)
        worst = max(worst, grad_check(
            lambda t, tt=target, b=beta: T.smooth_l1(t, tt, b), pred))
    return worst


def _random_batch(rng, n=3, d=5) -> tuple[Tensor, Tensor]:
    return (Tensor(rng.normal(size=(n, d))), Tensor(rng.normal(size=(n, d))))


def _check_contrastive(loss_fn) -> float:
    """Check w.r.t. both raw (pre-normalization) embedding matrices."""
    worst = 0.0
    for point in range(N_POINTS):
        rng = np.random.default_rng(200 + point)
        raw_f, raw_w = _random_batch(rng)
        tau = float(rng.uniform(0.5, 2.0))

        def wrt_f(t):
            batch = AlignmentBatch(images=T.l2_normalize_rows(t),
                                   texts=T.l2_normalize_rows(Tensor(raw_w.data)))
            return loss_fn(batch, tau)

        def wrt_w(t):
            batch = AlignmentBatch(images=T.l2_normalize_rows(Tensor(raw_f.data)),
                                   texts=T.l2_normalize_rows(t))
            return loss_fn(batch, tau)

        worst = max(worst, grad_check(wrt_f, raw_f), grad_check(wrt_w, raw_w))
    return worst


def _swap(params: ParamSet, name: str, t: Tensor) -> ParamSet:
    """Copy of a ParamSet with one tensor replaced by the probe tensor."""
    out = ParamSet()
    for n, old in params.items():
        out.add(n, t if n == name else Tensor(old.data))
    return out


def _tiny_setup(point: int):
    world = generate_world(3, 6, seed=50 + point)
    teacher = make_frozen_teacher(world, seed=50 + point, positions=2, width=4)
    pairs = make_pairs(world, 3, 0.1, seed=60 + point)
    return world, teacher, pairs


def check_image_distill() -> float:
    worst = 0.0
    for point in range(N_POINTS):
        world, teacher, pairs = _tiny_setup(point)
        spec = ImageEncoderSpec(d_img=6, positions=2, channels=3, hidden=(4,))
        student = nn.init_params(spec, seed=70 + point)
        adapter = nn.init_params(LinearSpec(3, teacher.width), seed=80 + point)
        images = [p.image for p in pairs]
        seeds = [0, 7 + point, 9 + point]

        def loss_with(enc, ada):
            return image_distill_loss(teacher, spec, enc, ada, images, seeds,
                                      beta=1.0)

        for name in student.names():
            worst = max(worst, grad_check(
                lambda t, n=name: loss_with(_swap(student, n, t), adapter),
                student[name]))
        for name in adapter.names():
            worst = max(worst, grad_check(
                lambda t, n=name: loss_with(student, _swap(adapter, n, t)),
                adapter[name]))
    return worst


def check_text_distill() -> float:
    worst = 0.0
    for point in range(N_POINTS):
        world, teacher, pairs = _tiny_setup(point)
        spec = TextEncoderSpec(vocab_size=world.vocab_size, embed_width=4,
                               hidden=(4,), out_width=4)
        student = nn.init_params(spec, seed=90 + point)
        proj = nn.init_params(LinearSpec(4, teacher.width), seed=95 + point)
        tokens = [p.tokens(lang) for p in pairs for lang in ("L1", "L2")]

        def loss_with(enc, pr):
            return text_distill_loss(teacher, spec, enc, pr, tokens, beta=1.0)

        for name in student.names():
            worst = max(worst, grad_check(
                lambda t, n=name: loss_with(_swap(student, n, t), proj),
                student[name]))
        for name in proj.names():
            worst = max(worst, grad_check(
                lambda t, n=name: loss_with(student, _swap(proj, n, t)),
                proj[name]))
    return worst


def run_suite() -> list[tuple[str, float]]:
    """All gradient checks; each entry is (loss name, max relative error)."""
    return [
        ("smooth_l1", check_smooth_l1()),
        ("infonce_i2t", _check_contrastive(infonce_i2t)),
        ("infonce_t2i", _check_contrastive(infonce_t2i)),
        ("contrastive_total", _check_contrastive(contrastive_total)),
        ("image_distill_loss", check_image_distill()),
        ("text_distill_loss", check_text_distill()),
    ]
