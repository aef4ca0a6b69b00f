"""Desk-scale version of the crossing-tracks study: two objects approach,
almost coincide, and separate again while a single radar watches. Average
OSPA and model-order estimates are compared against the baseline at each
time step.

Run with:  python demos/03_crossing_tracks.py   (about two minutes)
"""

import numpy as np

from sblfusion import (
    EngineConfig,
    GridCache,
    NompConfig,
    chi_from_db,
    crossing_tracks_scenario,
    nomp_run,
    ospa,
    run,
    synthesize,
    tau_from_db,
)

RUNS = 25
STEPS = (-30, -10, -5, -2, 0, 2, 5, 10, 30)

print("t | separation |  SBL: OSPA  K_hat | NOMP: OSPA  K_hat")
print("-" * 58)
for t in STEPS:
    scene = crossing_tracks_scenario(t, seed=(11, t + 1024))
    cache = GridCache(scene.grid, scene.sensors)
    sbl_cfg = EngineConfig(threshold_chi=chi_from_db(10.0), grid=scene.grid,
                           bounds=scene.surveillance)
    nomp_cfg = NompConfig(tau=tau_from_db(10.0), grid=scene.grid,
                          bounds=scene.surveillance)
    sep = np.linalg.norm(scene.objects[0].position - scene.objects[1].position)
    sbl_vals, nomp_vals = [], []
    for r in range(RUNS):
        obs = synthesize(scene, r)
        est = run(obs, sbl_cfg, grid_cache=cache)
        sbl_vals.append((ospa(scene.truth, est.locations), len(est.components)))
        nest = nomp_run(obs.snapshots[0], scene.sensors[0], nomp_cfg,
                        noise_precision=1.0, grid_cache=cache)
        nomp_vals.append((ospa(scene.truth, nest.locations),
                          nest.locations.shape[0]))
    s = np.mean(sbl_vals, axis=0)
    n = np.mean(nomp_vals, axis=0)
    print("%3d | %7.2f m  |  %6.2f  %5.2f   |  %6.2f  %5.2f"
          % (t, sep, s[0], s[1], n[0], n[1]))

print("\nReading the table: for well-separated tracks both methods agree;")
print("once the objects fall inside one resolution cell the Bayesian solver")
print("holds on to the two-object explanation longer than the greedy one.")
