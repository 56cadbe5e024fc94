"""Moment-angle curves of the wrinkling stiffness model for a few critical strains."""
import math

import numpy as np

from vinesim.stiffness import WrinklingParams, moment

radius = 0.05
pressure = 0.5 / (math.pi * radius**3)  # full wrinkling moment of 0.5 N m
angles = np.linspace(0.0, 1.5, 7)

print("theta  " + "  ".join(f"eps={e:<5}" for e in (0.05, 0.1, 0.2, 0.4)))
curves = [WrinklingParams(pressure, radius, eps_override=e) for e in (0.05, 0.1, 0.2, 0.4)]
for th in angles:
    row = [float(moment(c, th)) for c in curves]
    print(f"{th:5.2f}  " + "  ".join(f"{m:9.4f}" for m in row))
