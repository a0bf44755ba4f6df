"""The complete default-configuration pipeline, exactly what the acceptance
suite runs: world -> teacher -> both distillation jobs -> locked-image
alignment -> bilingual zero-shot evaluation. Takes ~30 s on one core."""

import time

from vldistill import pipeline, zeroshot
from vldistill.config import RunConfig
from vldistill.data import LANGUAGES

cfg = RunConfig()
print(f"default config: {cfg.concepts} concepts, {cfg.train_pairs} pairs, "
      f"seed {cfg.seed}")
print(f"image: lr {cfg.image_lr}, wd {cfg.image_weight_decay}, "
      f"{cfg.image_epochs} epochs | text: lr {cfg.text_lr}, "
      f"{cfg.text_epochs} epochs | align: lr {cfg.align_lr}, "
      f"{cfg.align_passes} passes, tau {cfg.tau}")

start = time.perf_counter()
result = pipeline.run_full_pipeline(cfg)
print(f"\npipeline finished in {time.perf_counter() - start:.1f} s")

img, txt = result.image_report, result.text_report
print(f"image distillation: heldout {img.initial_heldout_loss:.5f} -> "
      f"{img.final_heldout_loss:.5f} "
      f"(x{img.final_heldout_loss / img.initial_heldout_loss:.4f})")
print(f"text distillation:  heldout {txt.initial_heldout_loss:.5f} -> "
      f"{txt.final_heldout_loss:.5f} "
      f"(x{txt.final_heldout_loss / txt.initial_heldout_loss:.4f})")
print(f"alignment passes:   "
      + " ".join(f"{x:.4f}" for x in result.align_report.pass_losses))

benchmark = pipeline.build_benchmark(cfg, result.world)
clean = pipeline.build_benchmark(cfg, result.world, sigma=0.0)

print(f"\nzero-shot top-1 ({cfg.eval_per_language} images/language, "
      f"sigma={cfg.eval_sigma}):")
for lang in LANGUAGES:
    teacher = zeroshot.evaluate(result.teacher.image_tower(),
                                result.teacher.text_tower(), clean, lang).accuracy
    full = zeroshot.evaluate(result.image_tower, result.full_text_tower,
                             benchmark, lang).accuracy
    print(f"  {lang}: teacher(sigma=0) {teacher:.3f}   student full {full:.3f}")

ablation = zeroshot.ablation_report(result.image_tower, result.stage1_text_tower,
                                    result.full_text_tower, benchmark)
print("\n" + ablation.format_table())
