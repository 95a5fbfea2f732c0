"""Kneading path planning, simulation and accuracy evaluation."""
from .classifier import ClassifierTolerances, classify, signature
from .ideal import EndEffectorSpec, disc_footprint, footprint_template, ideal_cloud
from .mesh_io import PointCloud, TriangleMesh, read_cloud, read_stl, write_cloud, write_stl
from .metrics import MetricsReport, emit_report, error_distribution, hausdorff, mann_whitney_u, ring_mesh_area
from .planner import KneadCommand, KneadingProgram, PlannerConfig, plan, plan_cycles, plan_program, polar_area
from .registration import compensate, icp, sweep
from .shapes import gen_shape, load_geometries
from .sim import BilletState, fit_billet, init_billet, knead, run_program
from .slicer import LayeredContourCloud, slice_mesh, slice_to_cloud

__version__ = "0.1.0"

__all__ = [
    "BilletState", "ClassifierTolerances", "EndEffectorSpec", "KneadCommand", "KneadingProgram",
    "LayeredContourCloud", "MetricsReport", "PlannerConfig", "PointCloud", "TriangleMesh",
    "classify", "compensate", "disc_footprint", "emit_report", "error_distribution", "fit_billet",
    "footprint_template", "gen_shape", "hausdorff", "icp", "ideal_cloud", "init_billet", "knead",
    "load_geometries", "mann_whitney_u", "plan", "plan_cycles", "plan_program", "polar_area",
    "read_cloud", "read_stl", "ring_mesh_area", "run_program", "signature", "slice_mesh",
    "slice_to_cloud", "sweep", "write_cloud", "write_stl",
]
