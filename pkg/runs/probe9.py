"""Criterion-9 artifact: invariance budget B for the regularized vs
unregularized robust policies on a shared held-out probe set."""
import json
import numpy as np
from skysep import network as nw
from skysep.config import default_scenario
from skysep.evaluate import collect_probe_pairs, kl_budget_batch
from skysep.trainer import TeacherBundle

t_params, t_cfg, _ = nw.load_checkpoint("runs/full/teacher.ckpt")
teacher = TeacherBundle(t_params, t_cfg)
clean, adv, masks = collect_probe_pairs(teacher, default_scenario(),
                                        episodes=3, seed=99, max_pairs=8000)
out = {"pairs": int(len(clean))}
for tag, path in (("inv_0.01", "runs/inv001/robust.ckpt"),
                  ("inv_0", "runs/ablate/robust.ckpt")):
    params, cfg, _ = nw.load_checkpoint(path)
    out[tag] = kl_budget_batch(params, cfg, clean, adv, masks)
with open("runs/probe9.json", "w") as f:
    json.dump(out, f, indent=1)
print(out)
