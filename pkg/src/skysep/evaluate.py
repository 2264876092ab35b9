"""Seeded evaluation sweeps over corruption rates.

Each (rate, episode) cell uses identical environment, policy-sampling and
corruption seeds for every evaluated policy, so policies are compared on
paired draws. The evaluation-time adversary is built from the frozen
teacher critic, exactly as during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import network as nw
from .adversary import fo_perturbation
from .config import ScenarioConfig
from .network import NetConfig, policy_value
from .observation import (StateMatrix, assemble_state, box_contains,
                          normalize_features)
from .sim import ACTION_COMMANDS
from .trainer import TeacherBundle


@dataclass(frozen=True)
class EvalConfig:
    checkpoints: dict          # policy tag -> checkpoint path
    teacher_checkpoint: str
    grid: tuple = tuple(round(0.05 * i, 2) for i in range(20))  # 0..0.95
    episodes: int = 100
    seed: int = 0


@dataclass
class EpisodeMetrics:
    nmac_count: int
    min_separation: float      # +inf when no pair ever coexisted
    observations: int
    corrupted: int
    box_violations: int


@dataclass
class EvalRecord:
    rate: float
    policy: str
    mean_nmac: float
    std_nmac: float
    mean_min_sep: float        # over episodes with finite separation
    std_min_sep: float
    episodes: int
    finite_sep_episodes: int
    observations: int
    corrupted_fraction: float
    box_violations: int

    CSV_HEADER = ("rate,policy,mean_nmac,std_nmac,mean_min_sep,std_min_sep,"
                  "episodes,finite_sep_episodes,observations,"
                  "corrupted_fraction,box_violations")

    def csv_row(self) -> str:
        return (f"{self.rate!r},{self.policy},{self.mean_nmac!r},"
                f"{self.std_nmac!r},{self.mean_min_sep!r},"
                f"{self.std_min_sep!r},{self.episodes},"
                f"{self.finite_sep_episodes},{self.observations},"
                f"{self.corrupted_fraction!r},{self.box_violations}")


def run_episode(params, net_cfg: NetConfig, teacher: TeacherBundle,
                scenario: ScenarioConfig, rate: float, env_seed,
                policy_seed, corrupt_seed) -> EpisodeMetrics:
    """One fully seeded episode under corruption rate `rate`."""
    env = scenario.make_env(np.random.default_rng(env_seed))
    rng_policy = np.random.default_rng(policy_seed)
    rng_corrupt = np.random.default_rng(corrupt_seed)
    norms = scenario.feature_norms
    bounds = scenario.corruption_bounds
    observed: dict = {}
    n_obs = 0
    n_corrupt = 0
    box_bad = 0

    def corrupt_all(idents):
        nonlocal n_obs, n_corrupt, box_bad
        mats = [assemble_state(env.traffic, i, scenario.detect_radius,
                               scenario.max_intruders) for i in idents]
        n_obs += len(mats)
        if rate <= 0 or not mats:
            for ident, sm in zip(idents, mats):
                observed[ident] = sm
            return
        # one contamination draw per observation; the worst-case gradient
        # is only needed where the draw actually corrupts
        flags = rng_corrupt.random(len(mats)) < rate
        hit = [k for k, f in enumerate(flags) if f]
        if hit:
            rows = np.stack([normalize_features(mats[k], norms) for k in hit])
            mask = np.stack([mats[k].mask for k in hit])
            grads = nw.input_gradient(teacher.params, rows, mask,
                                      teacher.net_config) / norms.scale
        pos = 0
        for ident, sm, flag in zip(idents, mats, flags):
            if not flag:
                observed[ident] = sm
                continue
            fo = fo_perturbation(sm.rows, grads[pos], bounds, sm.mask)
            pos += 1
            adv = StateMatrix(fo.perturbed, sm.mask.copy())
            n_corrupt += 1
            if not box_contains(adv.rows, sm.rows, bounds, sm.mask):
                box_bad += 1
            observed[ident] = adv

    while not env.done:
        missing = [i for i in env.traffic.ids() if i not in observed]
        if missing:
            corrupt_all(missing)
        idents = env.traffic.ids()
        if not idents:
            env.step({})
            continue
        rows = np.stack([normalize_features(observed[i], norms)
                         for i in idents])
        mask = np.stack([observed[i].mask for i in idents])
        probs, _ = policy_value(params, rows, mask, net_cfg)
        actions = nw.sample_action(probs, rng_policy)
        result = env.step(
            {i: ACTION_COMMANDS[a] for i, a in zip(idents, actions)})
        for ident in result.exited:
            observed.pop(ident, None)
        corrupt_all([i for i in env.traffic.ids()])
    return EpisodeMetrics(
        nmac_count=env.monitor.nmac_count,
        min_separation=env.monitor.min_separation,
        observations=n_obs,
        corrupted=n_corrupt,
        box_violations=box_bad,
    )


def _cell_seeds(seed, rate_index, episode):
    ss = np.random.SeedSequence([seed, rate_index, episode])
    return ss.generate_state(3)


def evaluate_policy(params, net_cfg, teacher, scenario, rate, rate_index,
                    episodes, seed, tag) -> EvalRecord:
    metrics = []
    for e in range(episodes):
        env_seed, policy_seed, corrupt_seed = _cell_seeds(seed, rate_index, e)
        metrics.append(run_episode(params, net_cfg, teacher, scenario, rate,
                                   env_seed, policy_seed, corrupt_seed))
    nmacs = np.array([m.nmac_count for m in metrics], dtype=float)
    seps = np.array([m.min_separation for m in metrics])
    finite = seps[np.isfinite(seps)]
    n_obs = sum(m.observations for m in metrics)
    n_cor = sum(m.corrupted for m in metrics)
    return EvalRecord(
        rate=rate, policy=tag,
        mean_nmac=float(nmacs.mean()), std_nmac=float(nmacs.std()),
        mean_min_sep=float(finite.mean()) if finite.size else math.inf,
        std_min_sep=float(finite.std()) if finite.size else 0.0,
        episodes=episodes, finite_sep_episodes=int(finite.size),
        observations=n_obs,
        corrupted_fraction=(n_cor / n_obs if n_obs else 0.0),
        box_violations=sum(m.box_violations for m in metrics),
    )


def evaluate_sweep(policies: dict, teacher: TeacherBundle,
                   scenario: ScenarioConfig, cfg: EvalConfig,
                   progress=None) -> list:
    """policies: tag -> (params, NetConfig). Returns EvalRecord list ordered
    by (rate, tag)."""
    records = []
    for rate_index, rate in enumerate(cfg.grid):
        for tag, (params, net_cfg) in policies.items():
            rec = evaluate_policy(params, net_cfg, teacher, scenario, rate,
                                  rate_index, cfg.episodes, cfg.seed, tag)
            records.append(rec)
            if progress is not None:
                progress(rec)
    return records


def collect_probe_pairs(teacher: TeacherBundle, scenario: ScenarioConfig,
                        episodes: int, seed, max_pairs: int = 20000):
    """Held-out (clean, adversarial) normalized observation pairs.

    Episodes are rolled out with the teacher policy; every observation is
    paired with its worst-case box perturbation from the teacher critic.
    Returns (clean_rows, adv_rows, masks) stacked arrays.
    """
    norms = scenario.feature_norms
    bounds = scenario.corruption_bounds
    cfg = teacher.net_config
    clean, adv, masks = [], [], []
    for e in range(episodes):
        env_seed, policy_seed, _ = _cell_seeds(seed, 0, e)
        env = scenario.make_env(np.random.default_rng(env_seed))
        rng_policy = np.random.default_rng(policy_seed)
        while not env.done and len(clean) < max_pairs:
            idents = env.traffic.ids()
            if not idents:
                env.step({})
                continue
            mats = [assemble_state(env.traffic, i, scenario.detect_radius,
                                   scenario.max_intruders) for i in idents]
            rows = np.stack([normalize_features(sm, norms) for sm in mats])
            mask = np.stack([sm.mask for sm in mats])
            grads = nw.input_gradient(teacher.params, rows, mask,
                                      cfg) / norms.scale
            for sm, g, mk, row in zip(mats, grads, mask, rows):
                fo = fo_perturbation(sm.rows, g, bounds, sm.mask)
                clean.append(row)
                adv.append(normalize_features(
                    StateMatrix(fo.perturbed, sm.mask.copy()), norms))
                masks.append(mk)
            probs, _ = policy_value(teacher.params, rows, mask, cfg)
            actions = nw.sample_action(probs, rng_policy)
            env.step({i: ACTION_COMMANDS[a]
                      for i, a in zip(idents, actions)})
        if len(clean) >= max_pairs:
            break
    return np.stack(clean), np.stack(adv), np.stack(masks)


def kl_budget_batch(params, net_cfg: NetConfig, clean_rows, adv_rows,
                    masks) -> float:
    """Invariance budget B: mean KL(pi(.|clean) || pi(.|adversarial))."""
    p, _ = policy_value(params, clean_rows, masks, net_cfg)
    q, _ = policy_value(params, adv_rows, masks, net_cfg)
    return float(np.mean(nw.kl_divergence(p, q)))


def write_metrics_csv(path, records):
    with open(path, "w") as f:
        f.write("# min separation means exclude episodes with no coexisting "
                "pair (+inf sentinel)\n")
        f.write(EvalRecord.CSV_HEADER + "\n")
        for rec in records:
            f.write(rec.csv_row() + "\n")
