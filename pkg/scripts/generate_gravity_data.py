"""Regenerate the packaged synthetic gravity field."""

from pathlib import Path

from descent_gnc.gravity import EllipsoidField, synthetic_field, write_harmonic_field

MU = 4.4621e-4          # km^3/s^2
REF_RADIUS = 5.5        # km
AXES = (5.5, 4.6, 4.2)  # km

out = Path(__file__).resolve().parents[1] / "src" / "descent_gnc" / "data" / "synthetic_deg8.gfc"
field = synthetic_field(MU, REF_RADIUS, EllipsoidField(*AXES, MU), degree=8, scale=0.02, seed=0)
write_harmonic_field(out, field, "synthetic degree-8 field: ellipsoid degree-2 terms plus seeded "
                     "higher terms\nunits: km^3/s^2, km; fully normalized coefficients")
print(out)
