# Gravity-driven consolidation of a unit square with drained, clamped
# boundary.  Prints the matrix-pressure peak, the overall pressure and the
# displacement norm per step; p1 builds up and then drains, partly into the
# inclusions through the memory terms.
import numpy as np

from biot_homog import (Cube, MacroAssembly, MacroConfig, MacroDomain, PhaseMaterials,
                        build_unit_cell, homogenize, run_macro)


def main():
    cell = build_unit_cell(2, 8, Cube(0.5))
    mat = PhaseMaterials.isotropic(2, 1.0, 1.0, 2.0, 2.0, K2=0.1, g=2.0, alpha2=0.8)
    dt, steps = 0.05, 40
    cs = homogenize(cell, mat, f1=[0.0, -1.0], f2=[0.0, -1.0], dt=dt, steps=steps)
    domain = MacroDomain(2, (1.0, 1.0), (16, 16))
    hist = run_macro(MacroConfig(domain, cs.coefficients, cs.kernels, dt, steps))
    asm = MacroAssembly(domain, cs.coefficients)
    print("    t    max p1    |P|_L2    |u|_L2")
    for n in range(0, steps + 1, 4):
        print(f"{hist.times[n]:5.2f}  {np.abs(hist.p1[n]).max():.5f}  {asm.l2_norm(hist.P[n]):.5f}"
              f"  {asm.l2_norm(hist.u[n]):.5f}")


if __name__ == "__main__":
    main()
