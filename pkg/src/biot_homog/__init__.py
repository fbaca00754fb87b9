"""Periodic homogenization of double-porosity poroelasticity on voxel unit cells."""
from .effective import EffectiveCoefficients, KernelTable, homogenize, memory_kernels
from .geometry import Cube, MacroDomain, Sphere, build_unit_cell, mesh_from_phase, validate_geometry
from .macro_biot import (KERNEL, MICRO, MacroAssembly, MacroConfig, MacroHistory, overall_pressure,
                         reconstruct_p2, run_macro)
from .materials import PhaseMaterials, mandel, voigt_reuss
from .verify import run_suite

__version__ = "0.1.0"

__all__ = [
    "Cube", "EffectiveCoefficients", "KERNEL", "KernelTable", "MICRO", "MacroAssembly",
    "MacroConfig", "MacroDomain", "MacroHistory", "PhaseMaterials", "Sphere", "build_unit_cell",
    "homogenize", "mandel", "memory_kernels", "mesh_from_phase", "overall_pressure",
    "reconstruct_p2", "run_macro", "run_suite", "validate_geometry", "voigt_reuss",
]
