"""Which coefficients does the checker accept?

Runs the condition checker on the two third-order presets: an imaginary
second-order coefficient decaying like 1/<x>, and a constant one. The first
is accepted; the second is rejected, and the witness sits at the edge of the
sampling lattice where <x> is largest.
"""
from pevo.coefficients import check_conditions
from pevo.scenarios import build_scenario

for name in ("decaying_im_p3", "constant_im"):
    sc = build_scenario(name)
    rep = check_conditions(sc.coeffs, sc.sample)
    print(f"{name}: {'accepted' if rep.passed else 'rejected'}")
    for r in rep.results:
        if r.beta == 0 and r.order_w == 0:
            print(f"  ({r.condition}) j={r.j} worst ratio {r.worst_ratio:.3g} at x={r.witness['x']:g}")
