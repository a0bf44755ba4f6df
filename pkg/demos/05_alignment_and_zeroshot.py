"""Stage 2 plus evaluation: contrastive alignment with the image tower
locked, then zero-shot classification with prompt-template ensembling, and
the before/after ablation table."""

from vldistill import pipeline, zeroshot
from vldistill.config import RunConfig
from vldistill.data import LANGUAGES

cfg = RunConfig(seed=9, concepts=6, d_img=16, positions=3, train_pairs=300,
                eval_per_language=120, teacher_width=12, student_channels=8,
                image_hidden_width=16, text_embed_width=8, text_hidden_width=8,
                image_epochs=10, text_epochs=10, image_lr=1e-3, text_lr=2e-3,
                image_batch=16, text_batch=16, align_batch=6, align_passes=2)

print("running both stage-1 jobs, then stage 2 with the image tower frozen...")
result = pipeline.run_full_pipeline(cfg)
print(f"  stage-2 per-pass contrastive loss: "
      + " ".join(f"{x:.4f}" for x in result.align_report.pass_losses))

benchmark = pipeline.build_benchmark(cfg, result.world)
print(f"\nbenchmark: {cfg.eval_per_language} images per language at "
      f"sigma={cfg.eval_sigma}")

print("\n== zero-shot accuracy, teacher vs student variants ==")
teacher_towers = (result.teacher.image_tower(), result.teacher.text_tower())
for lang in LANGUAGES:
    teacher_acc = zeroshot.evaluate(*teacher_towers, benchmark, lang,
                                    variant="teacher").accuracy
    stage1_acc = zeroshot.evaluate(result.image_tower, result.stage1_text_tower,
                                   benchmark, lang, variant="stage1-only").accuracy
    full_acc = zeroshot.evaluate(result.image_tower, result.full_text_tower,
                                 benchmark, lang, variant="full").accuracy
    print(f"  {lang}: teacher {teacher_acc:.3f}  stage1-only {stage1_acc:.3f}  "
          f"full {full_acc:.3f}")

print("\n== ablation table (contrastive alignment on vs off) ==")
ablation = zeroshot.ablation_report(result.image_tower, result.stage1_text_tower,
                                    result.full_text_tower, benchmark)
print(ablation.format_table())

print("\n== one per-class report ==")
report = zeroshot.evaluate(result.image_tower, result.full_text_tower,
                           benchmark, "L1", variant="full")
print(report.format_table())
