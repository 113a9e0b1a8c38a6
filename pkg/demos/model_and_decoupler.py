"""Build the three-area model and the per-area disturbance decouplers."""

import numpy as np

from lfcsynth.model import AreaParams, TieLineMatrix, build_system
from lfcsynth.synthesis import compute_disturbance_decoupler

params = [AreaParams(10, 1, 0.1, 0.3, 0.05, 1), AreaParams(12, 1.5, 0.17, 0.4, 0.05, 1),
          AreaParams(12, 1.8, 0.2, 0.35, 0.05, 1)]
T = TieLineMatrix.from_upper(3, {(0, 1): 0.1986, (0, 2): 0.2148, (1, 2): 0.1830})
sys = build_system(params, T)
np.set_printoptions(precision=4, suppress=True)
print("A_1 =\n", sys.area_A(0))
for i in range(sys.N):
    H, Psi = compute_disturbance_decoupler(sys.area_C(i), sys.area_F(i))
    print(f"area {i + 1}: |Psi F| = {np.linalg.norm(Psi @ sys.area_F(i)):.1e}")
print("H_1 =\n", compute_disturbance_decoupler(sys.area_C(0), sys.area_F(0))[0])
