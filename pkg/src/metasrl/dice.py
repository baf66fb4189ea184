"""Tabular off-policy visitation correction (DualDICE) and the plug-in KL loss.

The fit minimizes J(z) = 1/2 E_d[(z - T^pi z)^2] - (1-gamma) E_{rho,pi}[z]
over a fully tabular z, then recovers the correction ratios
omega(s,a) = (z - B^pi z)(s,a), the estimated visitation nu_hat, and the
visitation-weighted KL loss the meta-learner descends on.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageWarning, DegenerateEstimate, InvalidInput

COUNT_TOL = 1e-12


@dataclass(frozen=True)
class TrajectoryDataset:
    """Off-policy transition tuples plus the empirical quantities DICE needs.

    transitions is a structured record of parallel arrays; d_sa, p_hat and
    rho_hat are either empirical (from samples) or exact (from_distribution).
    """

    n_states: int
    n_actions: int
    step: np.ndarray        # outer CRPO step index per transition
    episode: np.ndarray
    t: np.ndarray           # within-episode time
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    c: np.ndarray           # (n_transitions, p)
    s_next: np.ndarray
    initial_states: np.ndarray
    d_sa: np.ndarray = field(default=None)      # (S, A) data distribution
    p_hat: np.ndarray = field(default=None)     # (S, A, S) empirical kernel
    rho_hat: np.ndarray = field(default=None)   # (S,) empirical initial dist

    def __post_init__(self):
        if self.s.size:
            bad = (self.s.min() < 0 or self.s.max() >= self.n_states
                   or self.a.min() < 0 or self.a.max() >= self.n_actions
                   or self.s_next.min() < 0 or self.s_next.max() >= self.n_states)
            if bad:
                raise InvalidInput("transition index out of range")
        if self.d_sa is None:
            if self.s.size == 0:
                raise InvalidInput("empty trajectory dataset")
            d, p, rho = self._empirical()
            object.__setattr__(self, "d_sa", d)
            object.__setattr__(self, "p_hat", p)
            object.__setattr__(self, "rho_hat", rho)
        if abs(self.d_sa.sum() - 1.0) > COUNT_TOL:
            raise InvalidInput("d_sa must sum to 1")

    def _empirical(self):
        counts = np.zeros((self.n_states, self.n_actions))
        np.add.at(counts, (self.s, self.a), 1.0)
        d = counts / counts.sum()
        trans = np.zeros((self.n_states, self.n_actions, self.n_states))
        np.add.at(trans, (self.s, self.a, self.s_next), 1.0)
        p = np.zeros_like(trans)
        seen = counts > 0
        p[seen] = trans[seen] / counts[seen][:, None]
        rho = np.zeros(self.n_states)
        np.add.at(rho, self.initial_states, 1.0)
        if rho.sum() == 0:
            raise InvalidInput("no initial-state samples")
        rho /= rho.sum()
        return d, p, rho

    @classmethod
    def from_samples(cls, n_states, n_actions, step, episode, t, s, a, r, c,
                     s_next, initial_states):
        arrays = [np.asarray(x) for x in (step, episode, t, s, a, r, c, s_next)]
        return cls(n_states=n_states, n_actions=n_actions,
                   step=arrays[0], episode=arrays[1], t=arrays[2],
                   s=arrays[3], a=arrays[4], r=arrays[5],
                   c=np.atleast_2d(np.asarray(c)).reshape(len(arrays[3]), -1),
                   s_next=arrays[7],
                   initial_states=np.asarray(initial_states))

    @classmethod
    def from_distribution(cls, d_sa, transition, initial_dist):
        """Exact-expectation dataset: known data distribution and kernel."""
        d_sa = np.asarray(d_sa, dtype=float)
        s_n, a_n = d_sa.shape
        empty = np.zeros(0, dtype=int)
        return cls(n_states=s_n, n_actions=a_n,
                   step=empty, episode=empty, t=empty,
                   s=empty, a=empty, r=np.zeros(0),
                   c=np.zeros((0, 1)), s_next=empty, initial_states=empty,
                   d_sa=d_sa / d_sa.sum(),
                   p_hat=np.asarray(transition, dtype=float),
                   rho_hat=np.asarray(initial_dist, dtype=float))

    @property
    def counts(self):
        return self.d_sa

    def to_csv(self):
        p = self.c.shape[1]
        cost_cols = ",".join(f"c_{i + 1}" for i in range(p))
        buf = io.StringIO()
        buf.write(f"step,episode,t,s,a,r,{cost_cols},s_next,s0_flag\n")
        for i in range(self.s.size):
            costs = ",".join(f"{v:.17g}" for v in self.c[i])
            buf.write(f"{self.step[i]},{self.episode[i]},{self.t[i]},"
                      f"{self.s[i]},{self.a[i]},{self.r[i]:.17g},{costs},"
                      f"{self.s_next[i]},{1 if self.t[i] == 0 else 0}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class CorrectionTable:
    omega: np.ndarray
    coverage_mask: np.ndarray

    def to_csv(self):
        buf = io.StringIO()
        buf.write("s,a,omega,covered\n")
        s_n, a_n = self.omega.shape
        for s in range(s_n):
            for a in range(a_n):
                buf.write(f"{s},{a},{self.omega[s, a]:.17g},"
                          f"{1 if self.coverage_mask[s, a] else 0}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class DiceConfig:
    solver: str = "DirectSolve"       # or "Sgd"
    sgd_steps: int = 10_000
    sgd_step_size: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.solver not in ("DirectSolve", "Sgd"):
            raise InvalidInput(f"unknown DICE solver {self.solver!r}")
        if self.solver == "Sgd" and self.sgd_steps < 1:
            raise InvalidInput("sgd_steps must be >= 1")


def _bellman_matrix(dataset, target_policy, gamma):
    """G with (Gz)(s,a) = z(s,a) - gamma sum_{s'} p_hat(s'|s,a) sum_a' pi(a'|s') z(s',a')."""
    s_n, a_n = dataset.n_states, dataset.n_actions
    n = s_n * a_n
    probs = target_policy.probs
    # (s,a) x (s',a') expected-next operator
    pp = np.einsum("sat,tb->satb", dataset.p_hat, probs).reshape(n, n)
    return np.eye(n) - gamma * pp


def dualdice_fit(dataset, target_policy, gamma, config=None):
    """Fit correction ratios omega = nu_pi(s,a)/d_data(s,a) from off-policy data.

    DirectSolve minimizes the quadratic objective exactly via its normal
    equations; Sgd runs stochastic steps on the minimax surrogate. Output
    is clipped at 0 and zeroed on uncovered pairs.
    """
    if config is None:
        config = DiceConfig()
    if not (0.0 < gamma < 1.0):
        raise InvalidInput("gamma must lie in (0, 1)")
    if dataset.d_sa.sum() <= 0:
        raise InvalidInput("empty dataset")
    s_n, a_n = dataset.n_states, dataset.n_actions
    n = s_n * a_n
    d = dataset.d_sa.reshape(n)
    covered = dataset.d_sa > 0
    b = (dataset.rho_hat[:, None] * target_policy.probs).reshape(n)

    if config.solver == "DirectSolve":
        g = _bellman_matrix(dataset, target_policy, gamma)
        normal = g.T @ (d[:, None] * g)
        rhs = (1.0 - gamma) * b
        rank = np.linalg.matrix_rank(normal, tol=1e-10)
        z = np.linalg.lstsq(normal, rhs, rcond=None)[0]
        omega = (g @ z).reshape(s_n, a_n)
        if rank < n:
            warnings.warn("data left correction ratios underdetermined on "
                          "uncovered state-action pairs", CoverageWarning)
    else:
        omega = _sgd_fit(dataset, target_policy, gamma, config)
        if not covered.all():
            warnings.warn("data left correction ratios underdetermined on "
                          "uncovered state-action pairs", CoverageWarning)

    omega = np.maximum(omega, 0.0)
    omega[~covered] = 0.0
    return CorrectionTable(omega=omega, coverage_mask=covered)


def _sgd_fit(dataset, target_policy, gamma, config):
    """K stochastic saddle-point steps on J(z, zeta); returns z - B^pi z on data."""
    rng = np.random.default_rng(config.rng_seed)
    s_n, a_n = dataset.n_states, dataset.n_actions
    z = np.zeros((s_n, a_n))
    zeta = np.zeros((s_n, a_n))
    probs = target_policy.probs
    n_tr = dataset.s.size
    if n_tr == 0 or dataset.initial_states.size == 0:
        raise InvalidInput("Sgd solver needs sampled transitions")
    lr = config.sgd_step_size
    for _ in range(config.sgd_steps):
        i = rng.integers(n_tr)
        s, a, s2 = dataset.s[i], dataset.a[i], dataset.s_next[i]
        a2 = rng.choice(a_n, p=probs[s2])
        s0 = dataset.initial_states[rng.integers(dataset.initial_states.size)]
        a0 = rng.choice(a_n, p=probs[s0])
        resid = z[s, a] - gamma * z[s2, a2] - zeta[s, a]
        # ascent in zeta, descent in z
        zeta[s, a] += lr * resid
        z[s, a] -= lr * zeta[s, a]
        z[s2, a2] += lr * gamma * zeta[s, a]
        z[s0, a0] += lr * (1.0 - gamma)
    # omega = z - gamma * expected next z under p_hat and the target policy
    next_z = np.einsum("sat,tb,tb->sa", dataset.p_hat, probs, z)
    return z - gamma * next_z


def visitation_from_corrections(dataset, corrections):
    """nu_hat(s) proportional to sum_a omega(s,a) d_data(s,a)."""
    mass = (corrections.omega * dataset.d_sa).sum(axis=1)
    total = mass.sum()
    if total <= 0:
        raise DegenerateEstimate("corrections carry no visitation mass")
    from .cmdp import VisitationDistribution

    nu = mass / total
    nu_sa = corrections.omega * dataset.d_sa
    return VisitationDistribution(nu=nu, nu_sa=nu_sa / nu_sa.sum())


def kl_loss_and_grad(nu_hat, pi_hat, phi):
    """Visitation-weighted KL loss E_nu[D_KL(pi_hat | phi)] and its gradient.

    The gradient is with respect to phi's probability table:
    d/d phi(a|s) = -nu(s) pi_hat(a|s) / phi(a|s).
    """
    nu = nu_hat.nu
    p = pi_hat.probs
    q = phi.probs if hasattr(phi, "probs") else np.asarray(phi, dtype=float)
    if np.any(q <= 0):
        raise InvalidInput("phi rows must be strictly positive")
    per_state = (p * (np.log(p) - np.log(q))).sum(axis=1)
    loss = float(nu @ per_state)
    grad = -nu[:, None] * p / q
    return loss, grad


def error_decomposition(nu_star, pi_star, nu_tilde, nu_hat, pi_hat, phi):
    """Split the plug-in KL error into visitation, estimation and policy parts.

    total = E_{nu*}[KL(pi*|phi)] - E_{nu_hat}[KL(pi_hat|phi)]
          = (A) visitation mismatch nu* vs nu_tilde on KL(pi*|phi)
          + (C) policy mismatch pi* vs pi_hat under nu_tilde
          + (B) estimation error nu_tilde vs nu_hat on KL(pi_hat|phi).
    """
    def avg(nu, pol):
        l, _ = kl_loss_and_grad(nu, pol, phi)
        return l

    term_a = avg(nu_star, pi_star) - avg(nu_tilde, pi_star)
    term_c = avg(nu_tilde, pi_star) - avg(nu_tilde, pi_hat)
    term_b = avg(nu_tilde, pi_hat) - avg(nu_hat, pi_hat)
    total = avg(nu_star, pi_star) - avg(nu_hat, pi_hat)
    return {"A": term_a, "B": term_b, "C": term_c, "total": total}
