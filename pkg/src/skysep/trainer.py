"""Two-phase robust PPO.

Phase 1 trains a nominal teacher under clean observations with standard
PPO. Phase 2 freezes the teacher and trains a fresh actor-critic under
probabilistic observation corruption: the teacher critic's input gradient
builds the closed-form worst-case observation, which replaces the true
next state with the corruption rate drawn from a curriculum each
iteration. Two KL regularizers (clean-vs-adversarial invariance, and
anchoring to the teacher) extend the PPO loss.

Both phases share one core loop; with an empty corruption setup the phase
2 path is update-for-update identical to phase 1 under the same seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import network as nw
from .adversary import fo_perturbation
from .network import NetConfig, forward_tape, param_gradient, policy_value
from .observation import (CorruptionBounds, FeatureNorms, StateMatrix,
                          assemble_state, normalize_features,
                          sample_observation)
from .sim import ACTION_COMMANDS, AirspaceEnv


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 2.5e-4
    epochs: int = 8
    value_coef: float = 0.5
    entropy_coef: float = 0.1
    inv_weight: float = 0.01
    anchor_weight: float = 0.01
    curriculum: tuple = (0.0, 0.05, 0.15, 0.25, 0.35, 0.5)
    total_steps: int = 200_000
    batch_size: int = 4096
    minibatch_size: int = 256
    grad_clip: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_ratio < 1.0:
            raise ValueError("clip_ratio must lie in (0, 1)")
        for name in ("value_coef", "entropy_coef", "inv_weight",
                     "anchor_weight", "grad_clip"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class Transition:
    """One unit of trainer experience (normalized matrices)."""
    obs: np.ndarray          # realized observation of S_t
    clean: np.ndarray        # true S_t
    adv: np.ndarray          # first-order adversarial version of S_t (or clean)
    mask: np.ndarray
    action: int
    log_prob: float
    reward: float            # computed from the true next state
    value: float
    done: bool
    corrupted: bool
    true_next_dists: np.ndarray  # intruder distances in the true next state


@dataclass
class TeacherBundle:
    """Frozen nominal policy/critic from phase 1."""
    params: dict
    net_config: NetConfig

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()


def params_checksum(params: dict) -> str:
    return TeacherBundle(params, None).checksum()


def compute_gae(rewards, values, dones, bootstrap_value, discount,
                gae_lambda):
    """Standard GAE over one agent segment (pre-normalization)."""
    n = len(rewards)
    if n == 0:
        raise ValueError("empty trajectory")
    advantages = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        cont = 0.0 if dones[t] else 1.0
        next_v = bootstrap_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + discount * next_v * cont - values[t]
        running = delta + discount * gae_lambda * cont * running
        advantages[t] = running
    return advantages, advantages + np.asarray(values)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g**2
            params[k] -= self.lr * (self.m[k] / bc1) / (
                np.sqrt(self.v[k] / bc2) + self.eps)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = np.sqrt(sum(float((g**2).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for k in grads:
            grads[k] = grads[k] * scale
    return total


def _floored_log(probs):
    return ad.log(ad.maximum_const(probs, nw.PROB_FLOOR))


def ppo_losses(params, batch, teacher, cfg: TrainConfig,
               net_cfg: NetConfig):
    """Build the total loss graph for one minibatch.

    Returns (loss Tensor, live param Tensors, component dict).
    """
    tparams = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
    tape = forward_tape(tparams, batch["obs"], batch["mask"], net_cfg)
    logp_all = ad.log_softmax(tape.logits)
    logp = ad.gather_last(logp_all, batch["action"])
    ratio = ad.exp(logp - batch["log_prob"])
    advantages = batch["advantage"]
    surrogate = ad.minimum(
        ratio * advantages,
        ad.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * advantages)
    l_clip = -surrogate.mean()
    l_value = ad.square(tape.value - batch["return"]).mean()
    probs = ad.exp(logp_all)
    ent = -(probs * logp_all).sum(axis=-1).mean()

    zero = ad.Tensor(0.0)
    l_inv, l_anchor = zero, zero
    if cfg.inv_weight > 0 or cfg.anchor_weight > 0:
        clean_logits, _ = nw.forward(tparams, ad.Tensor(batch["clean"]),
                                     batch["mask"], net_cfg)
        clean_probs = ad.exp(ad.log_softmax(clean_logits))
        if cfg.inv_weight > 0:
            adv_logits, _ = nw.forward(tparams, ad.Tensor(batch["adv"]),
                                       batch["mask"], net_cfg)
            adv_probs = ad.exp(ad.log_softmax(adv_logits))
            l_inv = (clean_probs * (_floored_log(clean_probs)
                                    - _floored_log(adv_probs))).sum(axis=-1).mean()
        if cfg.anchor_weight > 0:
            t_probs, _ = policy_value(teacher.params, batch["clean"],
                                      batch["mask"], teacher.net_config)
            t_probs = np.maximum(t_probs, nw.PROB_FLOOR)
            l_anchor = (ad.Tensor(t_probs * np.log(t_probs)).sum(axis=-1)
                        - (t_probs * _floored_log(clean_probs)).sum(axis=-1)).mean()

    total = l_clip + cfg.value_coef * l_value - cfg.entropy_coef * ent
    if cfg.inv_weight > 0:
        total = total + cfg.inv_weight * l_inv
    if cfg.anchor_weight > 0:
        total = total + cfg.anchor_weight * l_anchor
    components = {"clip": float(l_clip.data), "value": float(l_value.data),
                  "entropy": float(ent.data), "inv": float(l_inv.data),
                  "anchor": float(l_anchor.data), "total": float(total.data)}
    if not all(np.isfinite(v) for v in components.values()):
        raise TrainingDiverged(f"non-finite loss components: {components}")
    return total, tparams, components


class Collector:
    """Persistent multi-agent rollout state across iterations."""

    def __init__(self, make_env, detect_radius, max_intruders,
                 corruption_bounds: CorruptionBounds, norms: FeatureNorms,
                 net_cfg: NetConfig, seeds):
        env_seed, policy_seed, corrupt_seed = seeds
        self.env = make_env(np.random.default_rng(env_seed))
        self.rng_policy = np.random.default_rng(policy_seed)
        self.rng_corrupt = np.random.default_rng(corrupt_seed)
        self.detect_radius = detect_radius
        self.max_intruders = max_intruders
        self.bounds = corruption_bounds
        self.norms = norms
        self.net_cfg = net_cfg
        # per-agent current (clean StateMatrix, observed StateMatrix, adv rows)
        self.agent_obs: dict = {}
        # last observation of agents dropped at an episode reset; kept so the
        # current iteration can still bootstrap their truncated streams
        self._stale_obs: dict = {}

    def _adversarial(self, teacher, matrices):
        """Batched first-order adversarial rows for a list of StateMatrix."""
        rows = np.stack([normalize_features(sm, self.norms) for sm in matrices])
        mask = np.stack([sm.mask for sm in matrices])
        grad_norm = nw.input_gradient(teacher.params, rows, mask,
                                      teacher.net_config)
        grad_phys = grad_norm / self.norms.scale
        out = []
        for sm, g in zip(matrices, grad_phys):
            fo = fo_perturbation(sm.rows, g, self.bounds, sm.mask)
            out.append(StateMatrix(fo.perturbed, sm.mask.copy()))
        return out

    def _intake(self, idents, teacher, rate, need_adv):
        """Set up observation state for newly visible agents."""
        mats = [assemble_state(self.env.traffic, i, self.detect_radius,
                               self.max_intruders) for i in idents]
        advs = (self._adversarial(teacher, mats)
                if (need_adv and mats) else [None] * len(mats))
        for ident, clean, adv in zip(idents, mats, advs):
            if rate > 0:
                obs = sample_observation(clean, rate, adv, self.bounds,
                                         self.rng_corrupt)
                self.agent_obs[ident] = (clean, obs.observed, adv, obs.corrupted)
            else:
                self.agent_obs[ident] = (clean, clean,
                                         adv if adv is not None else clean,
                                         False)

    def collect(self, params, teacher, rate, cfg: TrainConfig):
        """Run the env until at least cfg.batch_size transitions exist.

        Returns (streams, stats) where streams maps agent ident to its
        list of Transition for this iteration.
        """
        need_adv = teacher is not None and (rate > 0 or cfg.inv_weight > 0)
        streams: dict = {}
        n = 0
        stats = {"reward_sum": 0.0, "episodes_done": 0, "return_sum": 0.0,
                 "nmac": 0}
        agent_return: dict = {}
        self._stale_obs.clear()
        while n < cfg.batch_size:
            if self.env.done:
                self._stale_obs.update(self.agent_obs)
                self.agent_obs.clear()
                agent_return.clear()
                self.env.reset()
            missing = [i for i in self.env.traffic.ids()
                       if i not in self.agent_obs]
            if missing:
                self._intake(missing, teacher, rate, need_adv)
            idents = self.env.traffic.ids()
            if not idents:
                self.env.step({})
                continue
            rows = np.stack([normalize_features(self.agent_obs[i][1], self.norms)
                             for i in idents])
            mask = np.stack([self.agent_obs[i][1].mask for i in idents])
            probs, values = policy_value(params, rows, mask, self.net_cfg)
            actions = nw.sample_action(probs, self.rng_policy)
            logps = nw.log_prob(probs, actions)
            commands = {i: ACTION_COMMANDS[a] for i, a in zip(idents, actions)}
            result = self.env.step(commands)
            stats["nmac"] += len(result.nmac_onsets)

            next_clean = {}
            continuing = [i for i in idents if not result.dones[i]]
            for i in continuing:
                next_clean[i] = assemble_state(self.env.traffic, i,
                                               self.detect_radius,
                                               self.max_intruders)
            advs = {}
            if need_adv and continuing:
                for i, adv in zip(continuing, self._adversarial(
                        teacher, [next_clean[i] for i in continuing])):
                    advs[i] = adv

            for j, ident in enumerate(idents):
                clean, observed, adv_sm, was_corrupted = self.agent_obs[ident]
                done = result.dones[ident]
                tr = Transition(
                    obs=rows[j],
                    clean=normalize_features(clean, self.norms),
                    adv=normalize_features(adv_sm, self.norms),
                    mask=mask[j],
                    action=int(actions[j]),
                    log_prob=float(logps[j]),
                    reward=result.rewards[ident],
                    value=float(values[j]),
                    done=done,
                    corrupted=was_corrupted,
                    true_next_dists=(np.array([]) if done else np.array(
                        [d for d in _dists(self.env.traffic, ident)])),
                )
                streams.setdefault(ident, []).append(tr)
                n += 1
                stats["reward_sum"] += tr.reward
                agent_return[ident] = agent_return.get(ident, 0.0) + tr.reward
                if done:
                    stats["episodes_done"] += 1
                    stats["return_sum"] += agent_return.pop(ident)
                    del self.agent_obs[ident]
            for ident in continuing:
                clean = next_clean[ident]
                if rate > 0:
                    obs = sample_observation(clean, rate, advs[ident],
                                             self.bounds, self.rng_corrupt)
                    self.agent_obs[ident] = (clean, obs.observed, advs[ident],
                                             obs.corrupted)
                else:
                    self.agent_obs[ident] = (
                        clean, clean, advs.get(ident, clean), False)
        return streams, stats

    def bootstrap_value(self, params, ident):
        record = self.agent_obs.get(ident) or self._stale_obs[ident]
        clean, observed, _, _ = record
        rows = normalize_features(observed, self.norms)[None]
        _, v = policy_value(params, rows, observed.mask[None], self.net_cfg)
        return float(v[0])


def _dists(traffic, ident):
    from .sim import pairwise_separation
    try:
        return pairwise_separation(traffic, ident)
    except KeyError:
        return np.array([])


def run_phase(make_env, detect_radius, max_intruders, corruption_bounds,
              norms, net_cfg: NetConfig, cfg: TrainConfig,
              teacher: TeacherBundle | None, curriculum,
              init_params: dict | None = None, log=None):
    """Core PPO loop shared by both phases. Returns (params, curve rows)."""
    seq = np.random.SeedSequence(cfg.seed)
    init_seed, env_seed, policy_seed, corrupt_seed, shuffle_seed, cur_seed = \
        seq.generate_state(6)
    params = (init_params if init_params is not None
              else init_params_from_seed(net_cfg, init_seed))
    params = {k: v.copy() for k, v in params.items()}
    optimizer = Adam(params, cfg.learning_rate)
    rng_shuffle = np.random.default_rng(shuffle_seed)
    rng_curriculum = np.random.default_rng(cur_seed)
    collector = Collector(make_env, detect_radius, max_intruders,
                          corruption_bounds, norms, net_cfg,
                          (env_seed, policy_seed, corrupt_seed))
    curve = []
    steps_done = 0
    iteration = 0
    curriculum = tuple(curriculum)
    while steps_done < cfg.total_steps:
        iteration += 1
        rate = curriculum[rng_curriculum.integers(len(curriculum))]
        streams, stats = collector.collect(params, teacher, rate, cfg)
        batch = _flatten_streams(streams, collector, params, cfg)
        steps_done += batch["obs"].shape[0]
        comps = _update(params, optimizer, batch, teacher, cfg, net_cfg,
                        rng_shuffle)
        probe = _batch_kl_probe(params, batch, net_cfg) \
            if teacher is not None else 0.0
        n_done = max(stats["episodes_done"], 1)
        row = {"iteration": iteration, "rate": rate,
               "mean_return": stats["return_sum"] / n_done
               if stats["episodes_done"] else stats["reward_sum"],
               "nmac": stats["nmac"], "kl_probe": probe, **comps}
        curve.append(row)
        if log is not None:
            log(row)
    return params, curve


def init_params_from_seed(net_cfg: NetConfig, seed) -> dict:
    return nw.init_params(net_cfg, np.random.default_rng(seed))


def _flatten_streams(streams, collector, params, cfg: TrainConfig):
    obs, clean, adv, mask = [], [], [], []
    action, logp, reward, value, done, corrupted = [], [], [], [], [], []
    advantage, returns = [], []
    for ident, trs in streams.items():
        r = [t.reward for t in trs]
        v = [t.value for t in trs]
        d = [t.done for t in trs]
        boot = 0.0 if d[-1] else collector.bootstrap_value(params, ident)
        a, ret = compute_gae(r, v, d, boot, cfg.discount, cfg.gae_lambda)
        advantage.extend(a)
        returns.extend(ret)
        for t in trs:
            obs.append(t.obs); clean.append(t.clean); adv.append(t.adv)
            mask.append(t.mask); action.append(t.action); logp.append(t.log_prob)
            reward.append(t.reward); value.append(t.value); done.append(t.done)
            corrupted.append(t.corrupted)
    advantage = np.array(advantage)
    std = advantage.std()
    advantage = (advantage - advantage.mean()) / (std if std > 0 else 1.0)
    return {
        "obs": np.array(obs), "clean": np.array(clean), "adv": np.array(adv),
        "mask": np.array(mask), "action": np.array(action),
        "log_prob": np.array(logp), "reward": np.array(reward),
        "value": np.array(value), "done": np.array(done),
        "corrupted": np.array(corrupted),
        "advantage": advantage, "return": np.array(returns),
    }


def _update(params, optimizer, batch, teacher, cfg: TrainConfig,
            net_cfg: NetConfig, rng_shuffle):
    n = batch["obs"].shape[0]
    last_comps = None
    for _ in range(cfg.epochs):
        order = rng_shuffle.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            mb = {k: v[idx] for k, v in batch.items()}
            loss, tparams, comps = ppo_losses(params, mb, teacher, cfg,
                                              net_cfg)
            grads = param_gradient(loss, tparams)
            clip_grad_norm(grads, cfg.grad_clip)
            optimizer.step(params, grads)
            last_comps = comps
    return last_comps


def _batch_kl_probe(params, batch, net_cfg: NetConfig) -> float:
    p_clean, _ = policy_value(params, batch["clean"], batch["mask"], net_cfg)
    p_adv, _ = policy_value(params, batch["adv"], batch["mask"], net_cfg)
    return float(nw.kl_divergence(p_clean, p_adv).mean())


def kl_budget_probe(params, net_cfg: NetConfig, pairs) -> float:
    """Mean KL between policy outputs on (clean, adversarial) pairs.

    pairs: iterable of (clean_rows, adv_rows, mask), normalized inputs.
    """
    total, count = 0.0, 0
    for clean, adv, mask in pairs:
        p, _ = policy_value(params, clean[None], mask[None], net_cfg)
        q, _ = policy_value(params, adv[None], mask[None], net_cfg)
        total += float(nw.kl_divergence(p, q)[0])
        count += 1
    if count == 0:
        raise ValueError("empty probe dataset")
    return total / count


def pretrain_nominal(make_env, detect_radius, max_intruders,
                     corruption_bounds, norms, net_cfg: NetConfig,
                     cfg: TrainConfig, log=None):
    """Phase 1: clean-observation PPO; returns the frozen teacher."""
    phase_cfg = TrainConfig(**{**cfg.__dict__, "inv_weight": 0.0,
                               "anchor_weight": 0.0})
    params, curve = run_phase(make_env, detect_radius, max_intruders,
                              corruption_bounds, norms, net_cfg, phase_cfg,
                              teacher=None, curriculum=(0.0,), log=log)
    return TeacherBundle(params, net_cfg), curve


def robust_train(make_env, detect_radius, max_intruders, corruption_bounds,
                 norms, net_cfg: NetConfig, teacher: TeacherBundle,
                 cfg: TrainConfig, log=None):
    """Phase 2: robust PPO against the frozen teacher's adversary."""
    return run_phase(make_env, detect_radius, max_intruders,
                     corruption_bounds, norms, net_cfg, cfg, teacher=teacher,
                     curriculum=cfg.curriculum, log=log)
