import math

import numpy as np
import pytest

from vldistill import nn
from vldistill import tensor as T
from vldistill.align import (AlignConfig, AlignmentBatch, contrastive_total,
                             infonce_i2t, infonce_t2i, run_stage2)
from vldistill.data import generate_world, make_frozen_teacher, make_pairs
from vldistill.distill import DistillConfig, run_stage1
from vldistill.errors import DegenerateInputError
from vldistill.nn import ImageTower, TextTower
from vldistill.tensor import Tensor


def _unit_rows(arr):
    return arr / np.linalg.norm(arr, axis=1, keepdims=True)


def _random_batch(seed, n=4, d=6):
    rng = np.random.default_rng(seed)
    return AlignmentBatch(images=Tensor(_unit_rows(rng.normal(size=(n, d)))),
                          texts=Tensor(_unit_rows(rng.normal(size=(n, d)))))


def _reference_infonce(f, w, tau):
    """Plain-loop oracle for the image-to-text direction."""
    n = f.shape[0]
    total = 0.0
    for i in range(n):
        logits = [float(f[i] @ w[j]) / tau for j in range(n)]
        m = max(logits)
        log_denom = m + math.log(sum(math.exp(x - m) for x in logits))
        total += log_denom - logits[i]
    return total / n


class TestInfoNCE:
    def test_single_pair_loss_zero(self):
        batch = AlignmentBatch(images=Tensor([[1.0, 0.0]]), texts=Tensor([[0.0, 1.0]]))
        assert infonce_i2t(batch, 1.0).item() == 0.0
        assert infonce_t2i(batch, 1.0).item() == 0.0

    @pytest.mark.parametrize("n", [2, 8, 64])
    def test_identical_embeddings_give_log_n(self, n):
        row = _unit_rows(np.random.default_rng(0).normal(size=(1, 8)))
        batch = AlignmentBatch(images=Tensor(np.tile(row, (n, 1))),
                               texts=Tensor(np.tile(row, (n, 1))))
        assert abs(infonce_i2t(batch, 1.0).item() - math.log(n)) < 1e-9

    def test_two_orthonormal_matched_pairs(self):
        eye = np.eye(2)
        batch = AlignmentBatch(images=Tensor(eye), texts=Tensor(eye))
        expected = math.log(1.0 + math.exp(-1.0))
        assert abs(infonce_i2t(batch, 1.0).item() - expected) < 1e-9
        assert abs(infonce_t2i(batch, 1.0).item() - expected) < 1e-9
        assert abs(contrastive_total(batch, 1.0).item() - expected) < 1e-9

    def test_matches_loop_oracle(self):
        batch = _random_batch(7, n=5, d=4)
        for tau in (0.5, 1.0, 2.0):
            expected = _reference_infonce(batch.images.data, batch.texts.data, tau)
            assert abs(infonce_i2t(batch, tau).item() - expected) < 1e-12
            mirrored = _reference_infonce(batch.texts.data, batch.images.data, tau)
            assert abs(infonce_t2i(batch, tau).item() - mirrored) < 1e-12

    def test_symmetric_batch_directions_equal(self):
        rows = _unit_rows(np.random.default_rng(1).normal(size=(4, 6)))
        batch = AlignmentBatch(images=Tensor(rows), texts=Tensor(rows))
        assert infonce_i2t(batch, 1.0).item() == infonce_t2i(batch, 1.0).item()
        assert contrastive_total(batch, 1.0).item() == infonce_i2t(batch, 1.0).item()

    def test_total_is_mean_and_bounded(self):
        batch = _random_batch(9)
        a = infonce_i2t(batch, 1.0).item()
        b = infonce_t2i(batch, 1.0).item()
        total = contrastive_total(batch, 1.0).item()
        assert abs(total - (a + b) / 2) < 1e-15
        assert 0.0 <= total <= max(a, b)

    def test_strictly_positive_for_n_at_least_two(self):
        for seed in range(5):
            batch = _random_batch(100 + seed, n=3)
            assert infonce_i2t(batch, 1.0).item() > 0.0

    def test_paired_permutation_invariance(self):
        batch = _random_batch(11, n=6)
        perm = np.random.default_rng(12).permutation(6)
        permuted = AlignmentBatch(images=Tensor(batch.images.data[perm]),
                                  texts=Tensor(batch.texts.data[perm]))
        for loss in (infonce_i2t, infonce_t2i):
            assert abs(loss(batch, 1.0).item() - loss(permuted, 1.0).item()) < 1e-12

    def test_scale_invariance_through_normalization(self):
        rng = np.random.default_rng(13)
        raw_f, raw_w = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        base = contrastive_total(AlignmentBatch(
            images=Tensor(_unit_rows(raw_f)), texts=Tensor(_unit_rows(raw_w))), 1.0)
        for c in (1e-3, 7.0, 1e4):
            scaled = contrastive_total(AlignmentBatch(
                images=Tensor(_unit_rows(c * raw_f)),
                texts=Tensor(_unit_rows(c * raw_w))), 1.0)
            assert abs(base.item() - scaled.item()) < 1e-12

    def test_non_normalized_rows_rejected(self):
        rng = np.random.default_rng(14)
        with pytest.raises(DegenerateInputError):
            AlignmentBatch(images=Tensor(rng.normal(size=(3, 4))),
                           texts=Tensor(_unit_rows(rng.normal(size=(3, 4)))))

    def test_duplicate_concepts_rejected(self):
        rows = _unit_rows(np.random.default_rng(15).normal(size=(3, 4)))
        with pytest.raises(ValueError):
            AlignmentBatch(images=Tensor(rows), texts=Tensor(rows),
                           concepts=[1, 1, 2])

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            infonce_i2t(_random_batch(16), 0.0)


@pytest.fixture(scope="module")
def trained():
    world = generate_world(4, 8, seed=41)
    teacher = make_frozen_teacher(world, seed=41, positions=2, width=6)
    pairs = make_pairs(world, 40, 0.1, seed=42)
    img_sets, _ = run_stage1(
        DistillConfig(target="image", lr=3e-3, epochs=6, batch_size=8, seed=1),
        world, teacher, pairs)
    txt_sets, _ = run_stage1(
        DistillConfig(target="text", lr=3e-3, epochs=6, batch_size=8, seed=1),
        world, teacher, pairs)
    return world, teacher, pairs, img_sets, txt_sets


def _distinct_concept_pairs(pairs, n):
    picked, seen = [], set()
    for p in pairs:
        if p.concept not in seen:
            picked.append(p)
            seen.add(p.concept)
        if len(picked) == n:
            return picked
    raise AssertionError("not enough distinct concepts in fixture data")


class TestStage2:
    def _towers(self, trained):
        world, teacher, pairs, img_sets, txt_sets = trained
        from vldistill.distill import (default_image_student_spec,
                                       default_text_student_spec)
        image_tower = ImageTower(default_image_student_spec(world, teacher),
                                 img_sets["encoder"], adapter=img_sets["adapter"])
        text_tower = TextTower(default_text_student_spec(world),
                               txt_sets["encoder"],
                               projection=txt_sets["projection"])
        return image_tower, text_tower

    def test_image_tower_frozen_across_run(self, trained):
        world, teacher, pairs, img_sets, txt_sets = trained
        image_tower, text_tower = self._towers(trained)
        before = image_tower.frozen_digest()
        run_stage2(AlignConfig(lr=1e-3, batch_size=4, passes=2, seed=7),
                   image_tower, text_tower, pairs)
        assert image_tower.frozen_digest() == before

    def test_gradients_flow_only_into_text_side(self, trained):
        world, teacher, pairs, img_sets, txt_sets = trained
        image_tower, text_tower = self._towers(trained)
        nn.set_trainable(image_tower.params, "*", False)
        nn.set_trainable(image_tower.adapter, "*", False)

        probe = _distinct_concept_pairs(pairs, 3)
        images = np.stack([p.image for p in probe])
        img_rows = image_tower.embed_batch(images)
        img_unit = Tensor(_unit_rows(img_rows.data))
        txt_rows = T.l2_normalize_rows(T.concat_rows(
            [text_tower.embed(p.tokens_l1) for p in probe]))
        loss = contrastive_total(
            AlignmentBatch(images=img_unit, texts=txt_rows,
                           concepts=[p.concept for p in probe]), 1.0)
        T.backward(loss)
        assert all(t.grad is None for t in image_tower.params.tensors())
        assert all(t.grad is None for t in image_tower.adapter.tensors())
        assert text_tower.params["embed"].grad is not None
        assert text_tower.projection["w"].grad is not None

    def test_stage2_probe_loss_does_not_increase(self, trained):
        world, teacher, pairs, img_sets, txt_sets = trained
        image_tower, text_tower = self._towers(trained)

        def probe_loss():
            probe = _distinct_concept_pairs(pairs, 4)
            rows = image_tower.embed_batch(np.stack([p.image for p in probe]))
            img = Tensor(_unit_rows(rows.data))
            txt = T.l2_normalize_rows(T.concat_rows(
                [text_tower.embed(p.tokens_l1) for p in probe]))
            txt = Tensor(txt.data)
            return contrastive_total(AlignmentBatch(
                images=img, texts=txt,
                concepts=[p.concept for p in probe]), 1.0).item()

        before = probe_loss()
        run_stage2(AlignConfig(lr=1e-3, batch_size=4, passes=1, seed=8),
                   image_tower, text_tower, pairs)
        assert probe_loss() <= before

    def test_missing_adapter_rejected(self, trained):
        world, teacher, pairs, img_sets, txt_sets = trained
        image_tower, text_tower = self._towers(trained)
        bare = ImageTower(image_tower.spec, image_tower.params, adapter=None)
        from vldistill.errors import TrainingError
        with pytest.raises(TrainingError):
            run_stage2(AlignConfig(), bare, text_tower, pairs)

    def test_deterministic_rerun(self, trained):
        world, teacher, pairs, img_sets, txt_sets = trained
        from vldistill.pipeline import copy_sets
        results = []
        for _ in range(2):
            img_copy = copy_sets(img_sets)
            txt_copy = copy_sets(txt_sets)
            image_tower = ImageTower(self._towers(trained)[0].spec,
                                     img_copy["encoder"],
                                     adapter=img_copy["adapter"])
            text_tower = TextTower(self._towers(trained)[1].spec,
                                   txt_copy["encoder"],
                                   projection=txt_copy["projection"])
            sets, _ = run_stage2(AlignConfig(lr=1e-3, batch_size=4, passes=1, seed=9),
                                 image_tower, text_tower, pairs)
            results.append({k: ps.digest() for k, ps in sets.items()})
        assert results[0] == results[1]
