# Memory kernels of a 3D cube inclusion with a very permeable inclusion phase.
# Then the inclusion pressure is nearly uniform and its average follows the
# lumped exchange law 1 - exp(-g |Gamma| t / (c2 |Y2|)) = 1 - exp(-12 t).
import numpy as np

from biot_homog import Cube, PhaseMaterials, build_unit_cell, homogenize


def main(res=16):
    mesh = build_unit_cell(3, res, Cube(0.5))
    mat = PhaseMaterials.isotropic(3, 1.0, 1.0, 1.0, 1.0, c2=1.0, K2=1000.0, g=1.0)
    kt = homogenize(mesh, mat, dt=1.0 / 600.0, steps=250).kernels
    rate = mat.g * mesh.interface_area / (mat.c2 * mesh.vol_fracs[1])
    print(f"lumped rate g|Gamma|/(c2|Y2|) = {rate:.3f}")
    print("      t    <zeta>   lumped    sum eta   sum m")
    for n in range(0, kt.steps + 1, 25):
        t = kt.times[n]
        print(f"{t:7.4f}  {kt.zeta_volume[n] / kt.vol_y2:.5f}  {1 - np.exp(-rate * t):.5f}"
              f"  {kt.cum_eta[n]:.5f}  {kt.cum_m[n]:.5f}")
    print(f"g~ = {kt.g_tilde:.4f}; |sum theta| stays below {np.abs(kt.cum_theta).max():.1e}")


if __name__ == "__main__":
    main()
