"""Register each preset's ideal machining cloud to its target and print the table.

Usage: python3 demos/ideal_registration_table.py
"""
import time

from kneadforge import PlannerConfig, gen_shape, ideal_cloud, load_geometries, plan, sweep
from kneadforge.registration import default_thresholds

print(f"{'geom':<5}{'strategy':<10}{'threshold':>10}{'rmse':>8}{'sec':>7}")
for name, g in load_geometries().items():
    t0 = time.perf_counter()
    tgt = gen_shape(g["shape"], 1.0, 400)
    prog = plan(tgt, PlannerConfig(), g["strategy"])
    curve = sweep(ideal_cloud(prog), tgt.to_point_cloud(), default_thresholds(0.1, 5.0), stop_at_full=True)
    print(f"{name:<5}{g['strategy']:<10}{curve.full_fitness_threshold:>10.1f}"
          f"{curve.compensation_value:>8.3f}{time.perf_counter() - t0:>7.1f}")
