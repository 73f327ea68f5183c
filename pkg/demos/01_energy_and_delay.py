"""Energy bookkeeping and actuation delay on a single vehicle.

A car cruising at 20 m/s for 15 s only pays for rolling and aerodynamic
resistance. Then a step in the commanded acceleration shows the 0.6 s
lag before the realized acceleration moves.
"""
import numpy as np

from ecosim.dynamics import (
    PowertrainParams, VehicleState, delay_steps, make_buffer,
    resistance, step_longitudinal, trajectory_energy,
)

pt = PowertrainParams()
dt = 0.1

v = np.full(150, 20.0)
print(f"cruise at 20 m/s for 15 s: {trajectory_energy(v, np.zeros(150), pt, dt):.2f} J/kg")

# coasting down costs nothing: the motor never pushes
v = np.linspace(25, 5, 150)
print(f"braking only:              {trajectory_energy(v, -resistance(v, pt) - 0.5, pt, dt):.2f} J/kg")

q = delay_steps(pt.iota, dt)
print(f"\ndelay {pt.iota} s = {q} steps; commanding +1 m/s^2 from t = 0")
x = VehicleState(0.0, 20.0, 0.0)
buf = make_buffer(q, float(resistance(x.v, pt)))
for k in range(10):
    x, buf, a = step_longitudinal(x, buf, 1.0, pt, dt)
    print(f"  t={k * dt:.1f}s realized a={a:+.3f} v={x.v:.3f}")
