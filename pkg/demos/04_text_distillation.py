"""Stage 1, text side: the bag-of-tokens student plus its projection head
match teacher embeddings for captions from BOTH languages, which is what
pushes one student space to cover the bilingual corpus."""

import numpy as np

from vldistill.data import generate_world, make_frozen_teacher, make_pairs
from vldistill.distill import (DistillConfig, default_text_student_spec,
                               run_stage1, text_distill_loss)
from vldistill.nn import TextTower

world = generate_world(n_concepts=6, d_img=16, seed=5)
teacher = make_frozen_teacher(world, seed=5, positions=3, width=12)
pairs = make_pairs(world, n=300, noise_sigma=0.1, seed=6)

config = DistillConfig(target="text", lr=2e-3, epochs=10, batch_size=16, seed=2)
print(f"training on {len(pairs)} caption pairs; every batch interleaves "
      "L1 and L2 sequences")
sets, report = run_stage1(config, world, teacher, pairs)

ratio = report.final_heldout_loss / report.initial_heldout_loss
print(f"held-out loss: {report.initial_heldout_loss:.5f} -> "
      f"{report.final_heldout_loss:.5f}  (x{ratio:.4f})")

print("\n== the student now places both languages near the teacher's space ==")
spec = default_text_student_spec(world)
student = TextTower(spec, sets["encoder"], projection=sets["projection"])
teacher_tower = teacher.text_tower()


def unit(v):
    return v / np.linalg.norm(v)


print("cosine(student embedding, teacher embedding) per concept and language:")
for concept in range(world.n_concepts):
    cosines = []
    for lang in ("L1", "L2"):
        from vldistill.data import caption
        tokens = caption(world, concept, lang, 0)
        s = unit(student.embed(tokens).data[0])
        t = unit(teacher_tower.embed(tokens).data[0])
        cosines.append(f"{lang} {s @ t:+.4f}")
    print(f"  concept {concept}: " + "   ".join(cosines))

print("\nper-language loss on a probe batch (both finite, both small):")
for lang in ("L1", "L2"):
    tokens = [p.tokens(lang) for p in pairs[:16]]
    loss = text_distill_loss(teacher, spec, sets["encoder"],
                             sets["projection"], tokens)
    print(f"  {lang}: {loss.item():.6f}")
