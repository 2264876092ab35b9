"""Watch one episode of the airspace simulator.

Two crossing delivery routes share a merge corridor; aircraft spawn as a
headway-limited Poisson stream and fly waypoint to waypoint under a
shared speed policy. Here the policy is "hold cruise speed", which is
deliberately bad: with nobody giving way, the merge produces losses of
separation and the occasional near mid-air collision (NMAC), and the
separation monitor counts them.

Run:  python3 demos/01_traffic_simulation.py
"""

import numpy as np

from skysep.config import default_scenario

HOLD_SPEED = 0.0  # commanded speed change of 0 m/s each second

scenario = default_scenario()
events = []
env = scenario.make_env(np.random.default_rng(2024), event_log=events)

print(f"episode length {scenario.episode_length:.0f} s, "
      f"spawn rate {scenario.spawn_rate * 3600:.0f} aircraft/h/route, "
      f"min headway {scenario.min_headway:.0f} s\n")

total_reward = 0.0
while not env.done:
    result = env.step({ident: HOLD_SPEED for ident in env.traffic.ids()})
    total_reward += sum(result.rewards.values())
    t = env.traffic.time
    for a, b in result.los_onsets:
        print(f"[t={t:5.0f}s] loss of separation: {a} and {b} "
              f"closer than 500 m")
    for a, b in result.nmac_onsets:
        print(f"[t={t:5.0f}s] *** NMAC: {a} and {b} closer than 100 m ***")

spawns = sum(1 for e in events if e[-1] == "spawn")
print(f"\n{spawns} aircraft flew; cumulative reward {total_reward:.2f}")
print(f"NMACs: {env.monitor.nmac_count}, "
      f"losses of separation: {env.monitor.los_count}, "
      f"closest approach: {env.monitor.min_separation:.1f} m")
print("\nA trained policy (see demos/03_robust_training.py or the "
      "`train` CLI) resolves most of these by sequencing speeds.")
