"""Knead one preset in the simulator, then compensate the result for rebound.

Usage: python3 demos/knead_and_compensate.py [GEOMETRY] [EPS]
"""
import sys

from kneadforge import PlannerConfig, compensate, fit_billet, gen_shape, knead, load_geometries, sweep
from kneadforge.metrics import ring_mesh_area

name = sys.argv[1] if len(sys.argv) > 1 else "B"
eps = float(sys.argv[2]) if len(sys.argv) > 2 else 0.3
g = load_geometries()[name]
tgt = gen_shape(g["shape"], 1.0, 400)
billet = fit_billet(tgt, g["billet"], PlannerConfig(), g["strategy"], eps)
res = knead(tgt, billet, PlannerConfig(), g["strategy"])
print(f"{name}: billet height {billet.height:.2f} mm, {len(res.program.commands)} commands, "
      f"volume drift {res.program_drift:.1e}")

ideal_area = ring_mesh_area(tgt)
for cycle, area in res.area_series():
    print(f"  cycle {cycle}: lateral area {area:9.1f} mm^2 ({100 * (area / ideal_area - 1):+.2f}% vs target)")

kneaded = res.final.slice(1.0).to_point_cloud()
before = sweep(kneaded, tgt.to_point_cloud(), stop_at_full=True)
after = sweep(compensate(kneaded, before.compensation_value), tgt.to_point_cloud(), stop_at_full=True)
print(f"  kneaded:     fitness 1.0 at {before.full_fitness_threshold} mm, rmse {before.compensation_value:.3f}")
print(f"  compensated: fitness 1.0 at {after.full_fitness_threshold} mm, rmse {after.compensation_value:.3f}")
