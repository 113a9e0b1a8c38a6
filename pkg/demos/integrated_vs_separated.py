"""Compare the integrated design with per-area separated designs."""

from lfcsynth import io
from lfcsynth.config import bundled_path, load_config
from lfcsynth.sim import metrics, simulate
from lfcsynth.synthesis import design_integrated, design_separated

cfg = load_config(bundled_path("three_area_moderate"))
gi, _ = design_integrated(cfg.system, cfg.output, cfg.spec)
gs, _ = design_separated(cfg.system, cfg.output, cfg.spec)
rows = {}
for label, g in (("integrated", gi), ("separated", gs)):
    rows[label] = metrics(simulate(cfg.system, g, cfg.schedule, cfg.sim))
print(io.metrics_table(rows))
