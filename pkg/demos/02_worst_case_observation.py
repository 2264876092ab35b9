"""The closed-form worst-case observation attack, checked against brute
force.

An attacker who can move every entry of the ownship's state matrix by at
most a per-feature radius kappa wants the observation that most lowers
the critic's value. For a locally linear critic the answer is closed
form: step each feature to the box edge against the value gradient,
S - kappa * sign(dV/dS). This script builds a critic, attacks a live
observation from the simulator, and compares the closed form against a
brute-force search over the box, including the curvature bound on the
gap between the two.

Run:  python3 demos/02_worst_case_observation.py   (~30 s)
"""

import numpy as np

from skysep import network as nw
from skysep.adversary import (brute_force_worst_case, estimate_lipschitz_grad,
                              fo_perturbation)
from skysep.config import default_scenario
from skysep.network import NetConfig, init_params
from skysep.observation import assemble_state, box_contains, normalize_features

scenario = default_scenario()
net_cfg = NetConfig(max_intruders=scenario.max_intruders)
params = init_params(net_cfg, np.random.default_rng(7))

# roll the simulator until the ownship actually sees traffic
env = scenario.make_env(np.random.default_rng(3))
sm = None
while not env.done:
    env.step({i: 0.0 for i in env.traffic.ids()})
    for ident in env.traffic.ids():
        cand = assemble_state(env.traffic, ident, scenario.detect_radius,
                              scenario.max_intruders)
        if cand.mask.sum() >= 2:
            sm = cand
            break
    if sm is not None:
        break
assert sm is not None
print(f"ownship sees {int(sm.mask.sum())} intruders\n")

norms = scenario.feature_norms
bounds = scenario.corruption_bounds
rows_n = normalize_features(sm, norms)


def value_fn(batch):
    """Critic value of a batch of raw state matrices."""
    normed = (batch - norms.offset) / norms.scale
    normed[:, 1:][:, ~sm.mask] = 0.0
    _, v = nw.forward(params, normed, np.tile(sm.mask, (len(batch), 1)),
                      net_cfg)
    return v


grad = nw.input_gradient(params, rows_n[None], sm.mask[None],
                         net_cfg)[0] / norms.scale
fo = fo_perturbation(sm.rows, grad, bounds, sm.mask)

clean_v = float(value_fn(sm.rows[None])[0])
fo_v = float(value_fn(fo.perturbed[None])[0])
print(f"critic value on the clean observation : {clean_v:+.6f}")
print(f"value after the closed-form attack    : {fo_v:+.6f}")
print(f"first-order predicted drop            : {fo.predicted_drop:+.6f}")
assert box_contains(fo.perturbed, sm.rows, bounds, sm.mask)
print("attack stays inside the corruption box : yes")

# brute force over the same box: grid + corners + local refinement
oracle_v, _ = brute_force_worst_case(value_fn, sm.rows, bounds, sm.mask,
                                     grad_fn=lambda pt: nw.input_gradient(
                                         params,
                                         ((pt - norms.offset)
                                          / norms.scale)[None],
                                         sm.mask[None], net_cfg)[0]
                                     / norms.scale)
print(f"\nbrute-force minimum over the box      : {oracle_v:+.6f}")
gap = fo_v - oracle_v
print(f"closed form vs brute force gap        : {gap:.2e}")

lip = estimate_lipschitz_grad(value_fn, sm.rows, bounds, 32,
                              np.random.default_rng(0)) * 1.5
radius = bounds.matrix.copy()
radius[1:][~sm.mask] = 0.0
curvature_bound = 0.5 * lip * float((radius ** 2).sum())
print(f"curvature (remainder) bound on gap    : {curvature_bound:.2e}")
print("gap within bound" if gap <= curvature_bound + 1e-9 else "BOUND BROKEN")
