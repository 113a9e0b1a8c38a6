"""Add vertical-strip constraints and inspect where the poles land."""

import numpy as np

from lfcsynth.analysis import check_strips, realization_for
from lfcsynth.config import bundled_path, load_config
from lfcsynth.synthesis import DesignSpec, InfeasibleDesign, StripSpec, design_integrated

cfg = load_config(bundled_path("three_area_moderate"))
for ctrl in ((-30.0, -1.0), (-30.0, -0.1)):
    strips = StripSpec.uniform(3, ctrl, (-40.0, -2.0))
    spec = DesignSpec(7.5, 1e-2, 1e-2, strips=strips)
    try:
        gains, _ = design_integrated(cfg.system, cfg.output, spec)
    except InfeasibleDesign as exc:
        print(f"control strip {ctrl}: {exc}")
        continue
    rep = check_strips(realization_for(cfg.system, gains), gains, strips)
    re = rep["control"]["eigenvalues"].real
    print(f"control strip {ctrl}: passed={rep['passed']}, Re in [{re.min():.3f}, {re.max():.3f}]")
