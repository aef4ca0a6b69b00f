"""Walk through the radar dictionary: steering vectors, atoms, and the
resolution structure of the 3x3 MIMO array.

Run with:  python demos/01_array_responses.py
"""

import numpy as np

from sblfusion import atom, mimo_3x3_geometry, to_steering_params

geom = mimo_3x3_geometry()
print("3x3 MIMO virtual array, N =", geom.n_samples, "samples")
print("element offsets (m):", np.round(geom.element_offsets, 3))
print("frequency span (MHz):",
      (geom.freq_grid[-1] - geom.freq_grid[0]) / 1e6)

# An object 30 m away on broadside
target = (0.0, 30.0)
params = to_steering_params(target, geom)
print("\nobject at %s -> angle %.1f deg, distance %.1f m"
      % (target, np.degrees(params.angle), params.distance))

psi = atom(target, geom)
print("atom norm (path loss off):", np.linalg.norm(psi))

# Correlation against nearby positions shows the resolution cell:
# roughly 7.5 m in range and 16.5 degrees in angle.
print("\n|<atom(30 m), atom(30 m + dr)>| along range:")
for dr in (1.0, 2.0, 4.0, 7.5, 15.0):
    other = atom((0.0, 30.0 + dr), geom)
    print("  dr = %5.1f m  ->  %.3f" % (dr, abs(np.vdot(psi, other))))

print("\n|<atom, atom rotated by dphi>| along angle (range 30 m):")
for dphi_deg in (2.0, 5.0, 8.25, 16.5, 30.0):
    dphi = np.radians(dphi_deg)
    other = atom((30.0 * np.sin(dphi), 30.0 * np.cos(dphi)), geom)
    print("  dphi = %5.2f deg  ->  %.3f" % (dphi_deg, abs(np.vdot(psi, other))))

# With path loss enabled the atom norm carries the 1/d^2 amplitude decay.
geom_pl = mimo_3x3_geometry(path_loss_enabled=True)
print("\natom norms with path loss, by distance:")
for d in (10.0, 20.0, 40.0):
    print("  d = %4.0f m  ->  %.3e" % (d, np.linalg.norm(atom((0.0, d), geom_pl))))
