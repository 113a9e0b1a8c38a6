"""Solve the moderate-performance design and verify it."""

from lfcsynth.analysis import verify_design
from lfcsynth.config import bundled_path, load_config
from lfcsynth.synthesis import design_integrated

cfg = load_config(bundled_path("three_area_moderate"))
gains, sol = design_integrated(cfg.system, cfg.output, cfg.spec)
print(f"feasible={sol.feasible}, scaled margin {sol.scaled_margin:.2e}")
rep = verify_design(cfg.system, cfg.output, gains, cfg.spec)
print("verification passed:", rep.passed)
for k, v in rep.flags.items():
    print(f"  {k}: {v}")
