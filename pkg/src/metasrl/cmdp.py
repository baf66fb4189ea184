"""Exact finite-CMDP machinery: policies, values, visitations, serialization.

All quantities use the discounted infinite-horizon convention: the reward is
objective index 0 and the p cost functions are indices 1..p.  Everything here
is a dense linear-algebra computation; no sampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NumericalFailure

PROB_TOL = 1e-12
SOLVE_TOL = 1e-10


def _as_readonly(a):
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TabularCmdp:
    """A finite CMDP with one reward table and p cost tables.

    transition has shape (S, A, S); reward (S, A); costs (p, S, A);
    limits (p,); initial_dist (S,).  Infinite limits are encoded by any
    value >= c_max/(1-gamma) + 1.
    """

    transition: np.ndarray
    reward: np.ndarray
    costs: np.ndarray
    limits: np.ndarray
    discount: float
    initial_dist: np.ndarray
    c_max: float

    def __post_init__(self):
        object.__setattr__(self, "transition", _as_readonly(self.transition))
        object.__setattr__(self, "reward", _as_readonly(self.reward))
        costs = np.asarray(self.costs, dtype=float)
        if costs.ndim == 2:
            costs = costs[None]
        object.__setattr__(self, "costs", _as_readonly(costs))
        object.__setattr__(self, "limits", _as_readonly(np.atleast_1d(self.limits)))
        object.__setattr__(self, "initial_dist", _as_readonly(self.initial_dist))
        self._validate()

    def _validate(self):
        s, a, s2 = self.transition.shape
        if s != s2:
            raise InvalidInput("transition must have shape (S, A, S)")
        if self.reward.shape != (s, a):
            raise InvalidInput("reward shape mismatch")
        if self.costs.shape[1:] != (s, a):
            raise InvalidInput("cost shape mismatch")
        if self.limits.shape != (self.costs.shape[0],):
            raise InvalidInput("one limit per cost table required")
        if not (0.0 < self.discount < 1.0):
            raise InvalidInput("discount must lie strictly inside (0, 1)")
        if self.c_max <= 0:
            raise InvalidInput("c_max must be positive")
        if np.any(self.transition < -PROB_TOL):
            raise InvalidInput("negative transition probability")
        rowsums = self.transition.sum(axis=2)
        if np.max(np.abs(rowsums - 1.0)) > PROB_TOL:
            raise InvalidInput("transition rows must sum to 1")
        if np.any(self.initial_dist < -PROB_TOL) or abs(self.initial_dist.sum() - 1.0) > PROB_TOL:
            raise InvalidInput("initial_dist must be a probability vector")
        tables = np.concatenate([self.reward[None], self.costs], axis=0)
        if np.any(tables < -PROB_TOL) or np.any(tables > self.c_max + PROB_TOL):
            raise InvalidInput("reward/cost entries must lie in [0, c_max]")

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def n_costs(self):
        return self.costs.shape[0]

    def objective_table(self, objective_index):
        """Reward table for index 0, cost table i for index i >= 1."""
        if objective_index == 0:
            return self.reward
        if 1 <= objective_index <= self.n_costs:
            return self.costs[objective_index - 1]
        raise InvalidInput(f"objective_index {objective_index} out of range")

    def infinite_limit(self):
        """Sentinel encoding an inactive cost limit."""
        return self.c_max / (1.0 - self.discount) + 1.0

    def to_json(self):
        doc = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": _fmt(self.transition),
            "reward": _fmt(self.reward),
            "costs": _fmt(self.costs),
            "limits": _fmt(self.limits),
            "discount": _fmt(self.discount),
            "initial_dist": _fmt(self.initial_dist),
            "c_max": _fmt(self.c_max),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        return cls(
            transition=np.array(doc["transition"], dtype=float),
            reward=np.array(doc["reward"], dtype=float),
            costs=np.array(doc["costs"], dtype=float),
            limits=np.array(doc["limits"], dtype=float),
            discount=float(doc["discount"]),
            initial_dist=np.array(doc["initial_dist"], dtype=float),
            c_max=float(doc["c_max"]),
        )


def _fmt(x):
    """Decimal serialization with 17 significant digits (exact round trip)."""
    if np.isscalar(x) or isinstance(x, float):
        return float(f"{float(x):.17g}")
    return [_fmt(v) for v in np.asarray(x)]


@dataclass(frozen=True)
class SoftmaxPolicy:
    """Per-state logits with the induced (cached) action probabilities."""

    logits: np.ndarray
    cached_probs: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "logits", _as_readonly(self.logits))
        if self.cached_probs is None:
            object.__setattr__(self, "cached_probs", _softmax_rows(self.logits))
        object.__setattr__(self, "cached_probs", _as_readonly(self.cached_probs))

    @property
    def probs(self):
        return self.cached_probs

    @classmethod
    def from_probs(cls, probs):
        """Build a policy from a probability table (rows strictly positive)."""
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise InvalidInput("from_probs requires strictly positive rows")
        return cls(logits=np.log(probs))

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(logits=np.zeros((n_states, n_actions)))


def _softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def policy_from_logits(logits):
    """Row-wise softmax policy from a logit table; stabilized by row-max shift."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 2:
        raise InvalidInput("logits must be a (S, A) table")
    if not np.all(np.isfinite(logits)):
        raise InvalidInput("logits must be finite")
    return SoftmaxPolicy(logits=logits)


@dataclass(frozen=True)
class ValueTable:
    v: np.ndarray
    q: np.ndarray
    objective_index: int


@dataclass(frozen=True)
class VisitationDistribution:
    nu: np.ndarray
    nu_sa: np.ndarray = None


@dataclass(frozen=True)
class TablePolicy:
    """A bare probability table; rows may touch the simplex boundary.

    Duck-types SoftmaxPolicy for evaluation purposes (only .probs is used).
    """

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _as_readonly(self.probs))


@dataclass(frozen=True)
class OptimalSolution:
    policy: TablePolicy
    visitation: VisitationDistribution
    objective_values: np.ndarray
    feasible: bool
    duality_gap: float = 0.0


def _check_dims(cmdp, policy):
    if policy.probs.shape != (cmdp.n_states, cmdp.n_actions):
        raise InvalidInput("policy dimensions do not match CMDP")


def transition_under_policy(cmdp, probs):
    """State-to-state kernel P_pi(s'|s) = sum_a pi(a|s) P(s'|s,a)."""
    return np.einsum("sa,sat->st", probs, cmdp.transition)


def policy_evaluation_exact(cmdp, policy, objective_index):
    """Solve (I - gamma P_pi) V = c_pi exactly by a dense LU solve."""
    _check_dims(cmdp, policy)
    probs = policy.probs
    c = cmdp.objective_table(objective_index)
    p_pi = transition_under_policy(cmdp, probs)
    c_pi = (probs * c).sum(axis=1)
    a = np.eye(cmdp.n_states) - cmdp.discount * p_pi
    try:
        v = np.linalg.solve(a, c_pi)
    except np.linalg.LinAlgError as exc:  # cannot occur for gamma < 1
        raise NumericalFailure("singular Bellman system") from exc
    residual = np.max(np.abs(a @ v - c_pi))
    if residual > SOLVE_TOL:
        raise NumericalFailure(f"Bellman residual {residual:.3e} exceeds tolerance")
    q = c + cmdp.discount * cmdp.transition @ v
    return ValueTable(v=v, q=q, objective_index=objective_index)


def visitation_exact(cmdp, policy):
    """Discounted state (and state-action) visitation, by a linear solve.

    nu solves nu = (1-gamma) rho + gamma P_pi^T nu.
    """
    _check_dims(cmdp, policy)
    probs = policy.probs
    p_pi = transition_under_policy(cmdp, probs)
    a = np.eye(cmdp.n_states) - cmdp.discount * p_pi.T
    nu = np.linalg.solve(a, (1.0 - cmdp.discount) * cmdp.initial_dist)
    nu = np.maximum(nu, 0.0)
    nu = nu / nu.sum()
    return VisitationDistribution(nu=nu, nu_sa=nu[:, None] * probs)


def expected_objective(cmdp, policy, objective_index):
    """J_i(pi) = E_rho[V_i(s)] for the chosen objective."""
    vt = policy_evaluation_exact(cmdp, policy, objective_index)
    return float(cmdp.initial_dist @ vt.v)


def expected_objective_from_values(cmdp, vt):
    return float(cmdp.initial_dist @ vt.v)


def all_objectives(cmdp, policy):
    """Vector (J_0, J_1, ..., J_p)."""
    return np.array([expected_objective(cmdp, policy, i) for i in range(cmdp.n_costs + 1)])
