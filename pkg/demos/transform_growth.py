"""Energy growth with and without the Lambda transform.

For D_t v + D^3 v + i <x>^{-1} D^2 v = 0 the second-order term pumps energy
into a right-moving packet. We tune the transform constants, then compare
the L2 growth of v with that of w = (e^Lambda)^{-1} v.
"""
import numpy as np
import sympy as sp

from pevo.coefficients import BRACKET_X, Absorber, CoefficientSet
from pevo.grid import Field, Grid
from pevo.linear import LinearProblem, energy_audit, solve_linear, solve_transformed
from pevo.transform import build_pack, tune_constants

g = Grid(128, 10.0)
c = CoefficientSet(3, 1, [0, 0, sp.I / BRACKET_X])
ab = Absorber(12.0)
pack = tune_constants(c, None, g, absorber=ab)
print("tuned M =", pack.M, " h =", pack.h, " defect", round(pack.tuning["defect"], 2),
      ">= -budget", -pack.tuning["budget"])

u0 = Field(np.exp(-(g.x + 3) ** 2) * np.exp(4j * g.x), g)
pb = LinearProblem(c, g, u0, 0.1, absorber=ab, n_frames=41)
v = solve_linear(pb)
print("v growth on [0, 0.1]:", round(v.norms(0)[-1] / v.norms(0)[0], 4))

# at the base excision radius the symbol is active on the packet's frequencies
pb.pack = build_pack(3, pack.M, 4.0, g)
w = solve_transformed(pb, exact_inverse=True).w
print("w growth on [0, 0.1]:", round(w.norms(0)[-1] / w.norms(0)[0], 4))

pb.pack = pack
ts = solve_transformed(pb)
audit = energy_audit(ts.v, 0.0, pack.sigma, None, c, w=ts.w, pack=pack)
print("energy audit margin (constants fitted on the first 10%):", round(audit.margin, 2))
