"""Physical constants in SI units."""

C0 = 299_792_458.0
"""Speed of light in vacuum (m/s)."""

MU0 = 1.25663706212e-6
"""Vacuum permeability (H/m)."""

EPS0 = 1.0 / (MU0 * C0**2)
"""Vacuum permittivity (F/m)."""
