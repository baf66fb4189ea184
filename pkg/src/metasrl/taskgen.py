"""Task-family generators: slippery gridworld CMDP sequences with
controllable similarity, plus synthetic strongly-convex loss streams for the
online-optimization tests.

Grid convention: start at the top-left cell, goal at the bottom-right cell,
both always frozen. Reaching the goal pays goal_reward once and the episode
absorbs; stepping into a hole incurs one unit of cost (scaled by hole_cost)
and absorbs. A dedicated absorbing state is appended so the discounted
infinite-horizon formulation applies exactly.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .cmdp import TabularCmdp, TablePolicy, VisitationDistribution
from .errors import GenerationFailure, InvalidInput

HIGH_SIMILARITY = "HighSimilarity"
LOW_SIMILARITY = "LowSimilarity"

# action order: up, down, left, right
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
PERP = {0: (2, 3), 1: (2, 3), 2: (0, 1), 3: (0, 1)}


@dataclass(frozen=True)
class GridSpec:
    rows: int = 4
    cols: int = 4
    frozen_prob: float = 0.7
    goal_reward: float = 2.0
    hole_cost: float = 1.0
    cost_limit: float = 0.3
    slip_prob: float = 1.0 / 3.0
    discount: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise InvalidInput("grid needs at least 2x2 cells")
        if not (0.0 <= self.frozen_prob <= 1.0 and 0.0 <= self.slip_prob <= 1.0):
            raise InvalidInput("probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class TaskSequenceConfig:
    mode: str
    num_tasks: int
    base: GridSpec
    low_sim_prob_range: tuple = (0.3, 0.7)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (HIGH_SIMILARITY, LOW_SIMILARITY):
            raise InvalidInput(f"unknown mode {self.mode!r}")
        if self.num_tasks < 1:
            raise InvalidInput("num_tasks must be >= 1")


def _goal_reachable(frozen, rows, cols):
    """BFS over frozen cells under deterministic moves, holes blocking."""
    start, goal = (0, 0), (rows - 1, cols - 1)
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        if (r, c) == goal:
            return True
        for dr, dc in MOVES:
            nr, nc = min(max(r + dr, 0), rows - 1), min(max(c + dc, 0), cols - 1)
            if frozen[nr, nc] and (nr, nc) not in seen:
                seen.add((nr, nc))
                queue.append((nr, nc))
    return False


def _sample_grid(spec, rng):
    frozen = rng.random((spec.rows, spec.cols)) < spec.frozen_prob
    frozen[0, 0] = True
    frozen[spec.rows - 1, spec.cols - 1] = True
    return frozen


def grid_to_cmdp(frozen, spec):
    """Build the tabular CMDP for an explicit frozen/hole bitmap."""
    rows, cols = spec.rows, spec.cols
    n_cells = rows * cols
    n_states = n_cells + 1          # + absorbing
    absorbing = n_cells
    goal = n_cells - 1
    n_actions = 4
    p = np.zeros((n_states, n_actions, n_states))
    holes = ~frozen

    for r in range(rows):
        for c in range(cols):
            s = r * cols + c
            terminal = holes[r, c] or s == goal
            for a in range(n_actions):
                if terminal:
                    p[s, a, absorbing] = 1.0
                    continue
                outcomes = [(a, 1.0 - spec.slip_prob)]
                for perp in PERP[a]:
                    outcomes.append((perp, spec.slip_prob / 2.0))
                for move, prob in outcomes:
                    dr, dc = MOVES[move]
                    nr = min(max(r + dr, 0), rows - 1)
                    nc = min(max(c + dc, 0), cols - 1)
                    p[s, a, nr * cols + nc] += prob
    p[absorbing, :, absorbing] = 1.0

    hole_states = np.zeros(n_states)
    hole_states[:n_cells] = holes.reshape(-1)
    reward = spec.goal_reward * p[:, :, goal]
    cost = spec.hole_cost * (p * hole_states[None, None, :]).sum(axis=2)
    return TabularCmdp(
        transition=p,
        reward=reward,
        costs=cost[None],
        limits=np.array([spec.cost_limit]),
        discount=spec.discount,
        initial_dist=np.eye(n_states)[0],
        c_max=max(spec.goal_reward, abs(spec.hole_cost), 1e-12),
    )


def gen_grid(spec, max_attempts=100):
    """Sample a bitmap with a reachable goal under the grid spec's seed."""
    rng = np.random.default_rng(spec.seed)
    for _ in range(max_attempts):
        frozen = _sample_grid(spec, rng)
        if _goal_reachable(frozen, spec.rows, spec.cols):
            return frozen
    raise GenerationFailure(f"no reachable grid in {max_attempts} attempts")


def gen_frozen_lake(spec, max_attempts=100):
    """Sample a reachable grid under the grid spec's seed and build its CMDP."""
    return grid_to_cmdp(gen_grid(spec, max_attempts), spec)


def gen_task_sequence(config):
    """Generate a task sequence; returns (cmdps, grids, manifest dict).

    HighSimilarity flips exactly one non-terminal cell of the base grid per
    subsequent task (distinct cells, reachability preserved); LowSimilarity
    redraws every grid with an independent frozen probability.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.num_tasks + 1)
    rng = np.random.default_rng(seeds[0])
    base_spec = GridSpec(**{**config.base.__dict__, "seed": config.base.seed})
    cmdps, grids, notes = [], [], []

    if config.mode == HIGH_SIMILARITY:
        base_grid = gen_grid(base_spec)
        cmdps.append(grid_to_cmdp(base_grid, base_spec))
        grids.append(base_grid)
        notes.append({"flip": None, "frozen_prob": base_spec.frozen_prob})
        rows, cols = base_spec.rows, base_spec.cols
        flippable = [(r, c) for r in range(rows) for c in range(cols)
                     if (r, c) not in ((0, 0), (rows - 1, cols - 1))]
        if config.num_tasks - 1 > len(flippable):
            raise InvalidInput("more tasks than flippable cells")
        order = list(rng.permutation(len(flippable)))
        used = 0
        while len(cmdps) < config.num_tasks:
            if not order:
                raise GenerationFailure("ran out of reachability-preserving flips")
            r, c = flippable[order.pop(0)]
            grid = base_grid.copy()
            grid[r, c] = ~grid[r, c]
            if not _goal_reachable(grid, rows, cols):
                continue
            used += 1
            cmdps.append(grid_to_cmdp(grid, base_spec))
            grids.append(grid)
            notes.append({"flip": [int(r), int(c)],
                          "frozen_prob": base_spec.frozen_prob})
    else:
        lo, hi = config.low_sim_prob_range
        for t in range(config.num_tasks):
            prob = float(lo + (hi - lo) * rng.random())
            spec = GridSpec(**{**base_spec.__dict__,
                               "frozen_prob": prob,
                               "seed": int(seeds[t + 1].generate_state(1)[0])})
            grid = gen_grid(spec)
            cmdps.append(grid_to_cmdp(grid, spec))
            grids.append(grid)
            notes.append({"flip": None, "frozen_prob": prob})

    manifest = {
        "mode": config.mode,
        "num_tasks": config.num_tasks,
        "seed": config.seed,
        "base": dict(base_spec.__dict__),
        "tasks": [{
            "index": t,
            "grid": grid_ascii(grids[t]),
            **notes[t],
        } for t in range(config.num_tasks)],
    }
    return cmdps, grids, manifest


def grid_ascii(frozen):
    """Render a bitmap for inspection: S start, G goal, . frozen, H hole."""
    rows, cols = frozen.shape
    lines = []
    for r in range(rows):
        chars = []
        for c in range(cols):
            if (r, c) == (0, 0):
                chars.append("S")
            elif (r, c) == (rows - 1, cols - 1):
                chars.append("G")
            else:
                chars.append("." if frozen[r, c] else "H")
        lines.append("".join(chars))
    return lines


def write_task_sequence(config, out_dir):
    """Write numbered CMDP JSON files plus a manifest to out_dir."""
    import os

    cmdps, _, manifest = gen_task_sequence(config)
    os.makedirs(out_dir, exist_ok=True)
    for t, cmdp in enumerate(cmdps):
        with open(os.path.join(out_dir, f"task_{t:03d}.json"), "w") as fh:
            fh.write(cmdp.to_json())
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return cmdps


def load_task_sequence(in_dir):
    import os

    names = sorted(n for n in os.listdir(in_dir)
                   if n.startswith("task_") and n.endswith(".json"))
    cmdps = []
    for name in names:
        with open(os.path.join(in_dir, name)) as fh:
            cmdps.append(TabularCmdp.from_json(fh.read()))
    return cmdps


def synthetic_kl_stream(n_states, n_actions, t_tasks, dispersion, seed,
                        shrink=1e-3, center=None):
    """A stream of (visitation, policy) pairs clustered around a center.

    dispersion scales the logit noise of per-task policies; visitations are
    random Dirichlet draws. Used as an exact-loss stream for regret tests.
    """
    from .meta import project_table_shrinkage_simplex

    rng = np.random.default_rng(seed)
    if center is None:
        center = rng.dirichlet(np.ones(n_actions), size=n_states)
    stream = []
    for _ in range(t_tasks):
        noisy = np.log(np.maximum(center, 1e-12)) \
            + dispersion * rng.standard_normal((n_states, n_actions))
        probs = np.exp(noisy - noisy.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        probs = project_table_shrinkage_simplex(probs, shrink)
        nu = rng.dirichlet(np.ones(n_states))
        stream.append((VisitationDistribution(nu=nu),
                       TablePolicy(probs=probs)))
    return stream


def quadratic_stream(dim, t_tasks, lam, drift, seed, box=5.0):
    """Drifting strongly-convex quadratics f_t(x) = lam/2 ||x - x*_t||^2.

    Comparator minimizers perform a bounded random walk of step `drift`.
    Returns a list of (minimizer, loss_fn, grad_fn) triples.
    """
    rng = np.random.default_rng(seed)
    x_star = rng.uniform(-box / 2, box / 2, size=dim)
    stream = []
    for _ in range(t_tasks):
        step = rng.standard_normal(dim)
        step = drift * step / max(np.linalg.norm(step), 1e-12)
        x_star = np.clip(x_star + step, -box, box)
        target = x_star.copy()
        stream.append((
            target,
            (lambda x, c=target: 0.5 * lam * float(np.sum((x - c) ** 2))),
            (lambda x, c=target: lam * (x - c)),
        ))
    return stream
