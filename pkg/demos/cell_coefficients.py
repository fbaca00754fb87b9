# Effective coefficients of a 2D cell with a square inclusion, for a few
# stiffness contrasts.  Prints the Mandel matrix of A_eff together with the
# Voigt and Reuss envelopes, and K_eff, B, Lambda, c~ and g~.
import numpy as np

from biot_homog import Cube, PhaseMaterials, build_unit_cell, homogenize, mandel, voigt_reuss

np.set_printoptions(precision=4, suppress=True)


def main():
    mesh = build_unit_cell(2, 16, Cube(0.5))
    y1, y2 = mesh.vol_fracs
    print(f"cell: res {mesh.res}, |Y1| = {y1:.4f}, |Y2| = {y2:.4f}, |Gamma| = {mesh.interface_area}")
    for contrast in (0.1, 1.0, 10.0):
        mat = PhaseMaterials.isotropic(2, 1.0, 1.0, contrast, contrast, K2=0.1, g=2.0, alpha2=0.8)
        co = homogenize(mesh, mat).coefficients
        voigt, reuss = voigt_reuss(mat.A1, mat.A2, y1, y2)
        print(f"\nstiffness contrast {contrast}")
        print("A_eff (Mandel):\n", mandel(co.A_eff))
        print("Voigt diagonal:", np.diag(voigt), " Reuss diagonal:", np.diag(reuss))
        print("K_eff:\n", co.K_eff)
        print("B:\n", co.B, "\nLambda:\n", co.Lambda)
        print(f"c~ = {co.c_tilde:.5f}, g~ = {co.g_tilde:.5f}")


if __name__ == "__main__":
    main()
