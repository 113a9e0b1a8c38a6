"""Show the conserved tie-line mode and the shifted design realization."""

import numpy as np

from lfcsynth import numlin
from lfcsynth.config import bundled_path, load_config
from lfcsynth.model import conserved_modes, design_realization

cfg = load_config(bundled_path("three_area_moderate"))
sys = cfg.system
W = conserved_modes(sys)
print("conserved directions:", W.shape[1])
print("|w^T (A + dA)| =", np.linalg.norm(W.T @ (sys.A + sys.dA)))
print("|w^T B| =", np.linalg.norm(W.T @ sys.B))
shifted = design_realization(sys, 2.0)
ev = numlin.eig(shifted.A + shifted.dA)
print("open-loop max Re, physical:", numlin.eig(sys.A + sys.dA).real.max())
print("open-loop max Re, shifted: ", ev.real.max())
