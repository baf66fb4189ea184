"""Within-task constrained policy optimization.

Alternates natural-gradient reward ascent with constraint descent, gated on
estimated constraint values against the limits plus a tolerance eta. Critic
is either an exact dense solve or tabular TD(0) from on-policy samples.
Every transition visited during the run is logged for downstream off-policy
estimation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .cmdp import (SoftmaxPolicy, _fmt, expected_objective_from_values,
                   policy_evaluation_exact, policy_from_logits)
from .dice import TrajectoryDataset
from .errors import DegenerateRun, InvalidInput, SamplerError

EXACT = "Exact"
TD_SAMPLED = "TdSampled"


@dataclass(frozen=True)
class CrpoConfig:
    learning_rate: float = 0.1
    steps: int = 100
    tolerance: float = 0.0
    critic_mode: str = EXACT
    td_iterations: int = 10_000
    td_step_size: float = 0.1
    episodes_per_step: int = 5
    episode_horizon: int = 50
    rng_seed: int = 0
    store_all_iterates: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInput("learning_rate must be positive")
        if self.steps < 1:
            raise InvalidInput("steps must be >= 1")
        if self.tolerance < 0:
            raise InvalidInput("tolerance must be nonnegative")
        if self.critic_mode not in (EXACT, TD_SAMPLED):
            raise InvalidInput(f"unknown critic_mode {self.critic_mode!r}")


@dataclass(frozen=True)
class CrpoOutcome:
    returned_policy: SoftmaxPolicy
    reward_steps: tuple            # indices where reward ascent happened
    constraint_steps: tuple        # per-constraint index tuples
    dataset: TrajectoryDataset
    per_step_estimates: np.ndarray  # (M, p) estimated constraint values
    all_iterates: tuple = None

    def to_json(self):
        doc = {
            "returned_policy": _fmt(self.returned_policy.probs),
            "reward_steps": list(self.reward_steps),
            "constraint_steps": [list(v) for v in self.constraint_steps],
            "per_step_estimates": _fmt(self.per_step_estimates),
        }
        return json.dumps(doc, sort_keys=True)


def compute_eta(dims, alpha, m_steps, kl_bound, gamma, c_max, p):
    """Violation tolerance making reward steps provably nonempty.

    eta = 2 kl/(M alpha) + 4 alpha c_max^2 |S||A|/(1-gamma)^3
          + (p+1) * 2 (3 + (1-gamma)^2 + 3 alpha c_max) / (sqrt(M) (1-gamma)^2).
    """
    s_n, a_n = dims
    if m_steps <= 0 or alpha <= 0:
        raise InvalidInput("alpha and M must be positive")
    if kl_bound < 0:
        raise InvalidInput("kl_bound must be nonnegative")
    one_m_g = 1.0 - gamma
    term1 = 2.0 * kl_bound / (m_steps * alpha)
    term2 = alpha * 4.0 * c_max ** 2 * s_n * a_n / one_m_g ** 3
    term3 = (p + 1) * 2.0 * (3.0 + one_m_g ** 2 + 3.0 * alpha * c_max) \
        / (np.sqrt(m_steps) * one_m_g ** 2)
    return term1 + term2 + term3


def suboptimality_bound(alpha, m_steps, kl_bound, gamma, c_max, s_n, a_n):
    """Upper bound on both the reward gap and constraint violation of the
    averaged CRPO iterate: 2 kl/(alpha M) + 4 alpha c_max^2 |S||A|/(1-gamma)^3."""
    return 2.0 * kl_bound / (alpha * m_steps) \
        + 4.0 * alpha * c_max ** 2 * s_n * a_n / (1.0 - gamma) ** 3


def npg_softmax_step(logits, q_estimate, alpha, direction, gamma):
    """Natural-gradient softmax update: theta' = theta +/- alpha/(1-gamma) Q."""
    if alpha < 0:
        raise InvalidInput("alpha must be nonnegative")
    q = q_estimate.q if hasattr(q_estimate, "q") else np.asarray(q_estimate, dtype=float)
    if not np.all(np.isfinite(q)):
        raise InvalidInput("non-finite Q estimate")
    sign = {"Ascent": 1.0, "Descent": -1.0}.get(direction)
    if sign is None:
        raise InvalidInput(f"unknown direction {direction!r}")
    return np.asarray(logits, dtype=float) + sign * (alpha / (1.0 - gamma)) * q


def sample_episode(cmdp, probs, horizon, rng):
    """One on-policy rollout of fixed horizon; returns index arrays."""
    try:
        s = rng.choice(cmdp.n_states, p=cmdp.initial_dist)
    except ValueError as exc:
        raise SamplerError("initial distribution sampling failed") from exc
    states = np.empty(horizon, dtype=int)
    actions = np.empty(horizon, dtype=int)
    nexts = np.empty(horizon, dtype=int)
    for t in range(horizon):
        a = rng.choice(cmdp.n_actions, p=probs[s])
        s2 = rng.choice(cmdp.n_states, p=cmdp.transition[s, a])
        states[t], actions[t], nexts[t] = s, a, s2
        s = s2
    return states, actions, nexts


def _td_q(cmdp, probs, objective_index, config, rng):
    """Tabular TD(0) on Q from on-policy samples (SARSA-style targets)."""
    c = cmdp.objective_table(objective_index)
    q = np.zeros((cmdp.n_states, cmdp.n_actions))
    horizon = max(2, config.episode_horizon)
    s = rng.choice(cmdp.n_states, p=cmdp.initial_dist)
    a = rng.choice(cmdp.n_actions, p=probs[s])
    t = 0
    for _ in range(config.td_iterations):
        s2 = rng.choice(cmdp.n_states, p=cmdp.transition[s, a])
        a2 = rng.choice(cmdp.n_actions, p=probs[s2])
        target = c[s, a] + cmdp.discount * q[s2, a2]
        q[s, a] += config.td_step_size * (target - q[s, a])
        t += 1
        if t >= horizon:
            s = rng.choice(cmdp.n_states, p=cmdp.initial_dist)
            a = rng.choice(cmdp.n_actions, p=probs[s])
            t = 0
        else:
            s, a = s2, a2
    return q


def td_critic(cmdp, policy, objective_index, config, rng=None):
    """Critic: exact dense solve, or K_in tabular TD(0) updates from samples."""
    if config.critic_mode == EXACT:
        return policy_evaluation_exact(cmdp, policy, objective_index)
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    from .cmdp import ValueTable

    q = _td_q(cmdp, policy.probs, objective_index, config, rng)
    v = (policy.probs * q).sum(axis=1)
    return ValueTable(v=v, q=q, objective_index=objective_index)


def _discounted_weights(states, actions, t, gamma, s_n, a_n):
    """Normalized discounted visitation weights of observed (s,a) pairs."""
    w = np.zeros((s_n, a_n))
    np.add.at(w, (states, actions), gamma ** t)
    return w / w.sum()


def run_crpo(cmdp, init_policy, config, shrinkage=0.0):
    """CRPO loop: gate on estimated constraint values, ascend or descend.

    At each of M steps, estimate every constraint value; if all are within
    their limit plus tolerance, take a natural-gradient ascent step on the
    reward, otherwise descend on the most-violated constraint (ties to the
    lowest index). Returns the uniform draw from the reward-step snapshots
    plus the full transition log.
    """
    if config.steps < 1:
        raise InvalidInput("steps must be >= 1")
    if np.any(init_policy.probs < shrinkage - 1e-12):
        raise InvalidInput("initial policy leaves the shrinkage simplex")
    rng = np.random.default_rng(config.rng_seed)
    p = cmdp.n_costs
    gamma = cmdp.discount
    alpha = config.learning_rate
    eta = config.tolerance

    logits = np.array(init_policy.logits, dtype=float)
    snapshots = []
    reward_steps = []
    constraint_steps = [[] for _ in range(p)]
    estimates = np.zeros((config.steps, p))
    log_step, log_ep, log_t = [], [], []
    log_s, log_a, log_next = [], [], []
    initial_states = []

    for m in range(config.steps):
        policy = policy_from_logits(logits)
        snapshots.append(policy)
        probs = policy.probs

        for e in range(config.episodes_per_step):
            st, ac, nx = sample_episode(cmdp, probs, config.episode_horizon, rng)
            n = st.size
            log_step.append(np.full(n, m))
            log_ep.append(np.full(n, e))
            log_t.append(np.arange(n))
            log_s.append(st)
            log_a.append(ac)
            log_next.append(nx)
            initial_states.append(st[0])

        if config.critic_mode == EXACT:
            values = [policy_evaluation_exact(cmdp, policy, i) for i in range(p + 1)]
            j_bar = np.array([expected_objective_from_values(cmdp, values[i])
                              for i in range(1, p + 1)])
        else:
            values = [td_critic(cmdp, policy, i, config, rng) for i in range(p + 1)]
            st = np.concatenate(log_s[-config.episodes_per_step:])
            ac = np.concatenate(log_a[-config.episodes_per_step:])
            tt = np.concatenate(log_t[-config.episodes_per_step:])
            w = _discounted_weights(st, ac, tt, gamma, cmdp.n_states, cmdp.n_actions)
            j_bar = np.array([(w * values[i].q).sum() for i in range(1, p + 1)])
        estimates[m] = j_bar

        excess = j_bar - cmdp.limits - eta
        if np.all(excess <= 0):
            reward_steps.append(m)
            logits = npg_softmax_step(logits, values[0], alpha, "Ascent", gamma)
        else:
            worst = int(np.argmax(excess))  # argmax returns the lowest tied index
            constraint_steps[worst].append(m)
            logits = npg_softmax_step(logits, values[worst + 1], alpha, "Descent", gamma)

    s_arr = np.concatenate(log_s)
    a_arr = np.concatenate(log_a)
    dataset = TrajectoryDataset.from_samples(
        cmdp.n_states, cmdp.n_actions,
        step=np.concatenate(log_step), episode=np.concatenate(log_ep),
        t=np.concatenate(log_t), s=s_arr, a=a_arr,
        r=cmdp.reward[s_arr, a_arr],
        c=cmdp.costs[:, s_arr, a_arr].T,
        s_next=np.concatenate(log_next),
        initial_states=np.array(initial_states))

    outcome_args = dict(
        reward_steps=tuple(reward_steps),
        constraint_steps=tuple(tuple(v) for v in constraint_steps),
        dataset=dataset,
        per_step_estimates=estimates,
        all_iterates=tuple(snapshots) if config.store_all_iterates else None,
    )
    if not reward_steps:
        raise DegenerateRun(
            "no reward-ascent step occurred; returned policy undefined",
            last_policy=snapshots[-1],
            outcome=CrpoOutcome(returned_policy=snapshots[-1], **outcome_args))
    chosen = reward_steps[rng.integers(len(reward_steps))]
    return CrpoOutcome(returned_policy=snapshots[chosen], **outcome_args)
