"""What the cut-in vehicle plans, and what the ego can infer from it.

The front cut-in scene: ego at 20 m/s, a slow car 100 m ahead in its lane,
and the cut-in vehicle 30 m ahead in the left lane stuck behind another slow
car. We solve the leader/follower game for both roles and turn each plan into
a 5 s trajectory the MPC could consume.
"""
import numpy as np

from ecosim import sim
from ecosim.game import Action, Role, solve_cutin_game
from ecosim.prediction import crossing_step, predict_cutin

cfg = sim.preset("front_cutin")
traffic = sim.build_scenario(cfg)
for i in traffic.indices():
    print(f"vehicle {i}: {traffic[i]}")

sol = solve_cutin_game(traffic, cfg.game)
print()
for role in Role:
    names = " ".join(Action(a).name for a in sol.sequences[role])
    print(f"{role.value:>8}: {names}  (value {sol.values[role]:.1f})")

print("\npredicted lane crossing, in 0.1 s MPC steps:")
for role in Role:
    traj = predict_cutin(traffic, role, cfg.game, cfg.mpc.horizon, cfg.dt)
    k = crossing_step(traj, traffic[sim.EGO].l, cfg.lane_width)
    where = f"step {k}, cut-in at s={traj.s[k - 1]:.1f} m" if k else "never"
    print(f"{role.value:>8}: {where}")

# both roles open with the same moves here, so the motion alone cannot
# tell them apart until the plans diverge
same = np.array_equal(sol.sequences[Role.LEADER], sol.sequences[Role.FOLLOWER])
print(f"\nleader and follower plans identical: {same}")
