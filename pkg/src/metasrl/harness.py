"""Experiment orchestration: run initialization strategies over a task
sequence, collect per-step learning curves and regret reports, and export
reproducible artifacts.

All exports are deterministic functions of the config (seeds derived from
master_seed via SeedSequence spawning, one child per (strategy, run)); no
timestamps or wall-clock values are written to disk.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .cmdp import SoftmaxPolicy, TablePolicy, all_objectives, _fmt
from .crpo import CrpoConfig, run_crpo
from .dice import DiceConfig, dualdice_fit, kl_loss_and_grad, visitation_from_corrections
from .errors import DegenerateRun, InvalidInput
from .lp import solve_optimal_lp
from .meta import (MetaLearnerState, SimConstants, meta_update,
                   project_table_shrinkage_simplex, regret_report)
from .taskgen import GridSpec, TaskSequenceConfig, gen_task_sequence, load_task_sequence

STRATEGIES = ("Random", "Pretrained", "SimpleAverage", "FAL", "MetaSrl")


@dataclass(frozen=True)
class MetaConfig:
    ogd_step_init: float = 0.5
    ogd_step_sim: float = 0.0
    inner_updates: int = 1
    shrinkage: float = 1e-3
    rate_floor: float = 1e-4
    initial_rate: float = None   # defaults to the CRPO learning rate


@dataclass(frozen=True)
class ExperimentConfig:
    task_source: object                 # directory path or TaskSequenceConfig
    strategies: tuple = STRATEGIES
    runs_per_strategy: int = 10
    crpo: CrpoConfig = field(default_factory=CrpoConfig)
    dice: DiceConfig = field(default_factory=DiceConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    master_seed: int = 0
    holdout_test_task: bool = True

    def __post_init__(self):
        if self.runs_per_strategy < 1:
            raise InvalidInput("runs_per_strategy must be >= 1")
        if not self.strategies:
            raise InvalidInput("strategies must be nonempty")
        for s in self.strategies:
            if s.split(":")[0] not in STRATEGIES:
                raise InvalidInput(f"unknown strategy {s!r}")

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            doc = json.loads(doc)
        source = doc["task_source"]
        if isinstance(source, dict):
            base = GridSpec(**source.get("base", {}))
            source = TaskSequenceConfig(
                mode=source["mode"], num_tasks=source["num_tasks"], base=base,
                low_sim_prob_range=tuple(source.get("low_sim_prob_range", (0.3, 0.7))),
                seed=source.get("seed", 0))
        return cls(
            task_source=source,
            strategies=tuple(doc.get("strategies", STRATEGIES)),
            runs_per_strategy=doc.get("runs_per_strategy", 10),
            crpo=CrpoConfig(**doc.get("crpo", {})),
            dice=DiceConfig(**doc.get("dice", {})),
            meta=MetaConfig(**doc.get("meta", {})),
            master_seed=doc.get("master_seed", 0),
            holdout_test_task=doc.get("holdout_test_task", True),
        )

    def to_json(self):
        doc = {
            "task_source": (dict(self.task_source.__dict__,
                                 base=dict(self.task_source.base.__dict__))
                            if isinstance(self.task_source, TaskSequenceConfig)
                            else self.task_source),
            "strategies": list(self.strategies),
            "runs_per_strategy": self.runs_per_strategy,
            "crpo": asdict(self.crpo),
            "dice": asdict(self.dice),
            "meta": asdict(self.meta),
            "master_seed": self.master_seed,
            "holdout_test_task": self.holdout_test_task,
        }
        return json.dumps(doc, sort_keys=True, indent=2)


@dataclass
class RunRecord:
    strategy: str
    task_index: int
    seed: int
    per_step_reward: np.ndarray
    per_step_costs: np.ndarray          # (M, p)
    final_objectives: np.ndarray        # (p+1,)
    taog_contribution: float
    tacv_contribution: np.ndarray
    is_test: bool = False
    degenerate: bool = False
    error: str = None
    wall_clock: float = 0.0


def baseline_init(strategy, history, rng, shrink, dims):
    """Initialization policy table for a non-meta strategy.

    history is the list of previously learned policy tables (task order).
    """
    s_n, a_n = dims
    name, _, arg = strategy.partition(":")
    if name == "Random":
        table = rng.dirichlet(np.ones(a_n), size=s_n)
        return project_table_shrinkage_simplex(table, shrink)
    if not history:
        raise InvalidInput(f"{name} needs at least one prior policy")
    if name == "Pretrained":
        idx = int(arg) if arg else 0
        table = history[idx]
    elif name in ("SimpleAverage", "FAL"):
        table = np.mean(history, axis=0)
    else:
        raise InvalidInput(f"unknown strategy {strategy!r}")
    return project_table_shrinkage_simplex(table, shrink)


def _uniform_init(dims, shrink):
    s_n, a_n = dims
    return project_table_shrinkage_simplex(np.full((s_n, a_n), 1.0 / a_n), shrink)


def _curves(cmdp, outcome):
    """Exact per-step reward and constraint values of the CRPO iterates."""
    m = len(outcome.all_iterates)
    rewards = np.zeros(m)
    costs = np.zeros((m, cmdp.n_costs))
    for i, pol in enumerate(outcome.all_iterates):
        j = all_objectives(cmdp, pol)
        rewards[i] = j[0]
        costs[i] = j[1:]
    return rewards, costs


def _run_task(cmdp, init_table, crpo_cfg, seed):
    cfg = replace(crpo_cfg, rng_seed=seed)
    policy = SoftmaxPolicy(logits=np.log(np.maximum(init_table, 1e-300)))
    degenerate = False
    try:
        outcome = run_crpo(cmdp, policy, cfg)
    except DegenerateRun as exc:
        outcome = exc.outcome
        degenerate = True
    return outcome, degenerate


def solve_oracles(cmdps):
    """LP oracle per task, re-validated by exact policy evaluation."""
    oracles = []
    for cmdp in cmdps:
        sol = solve_optimal_lp(cmdp)
        if sol.feasible:
            j = all_objectives(cmdp, sol.policy)
            if abs(j[0] - sol.objective_values[0]) > 1e-6:
                raise InvalidInput("cached oracle failed re-validation")
        oracles.append(sol)
    return oracles


def run_experiment(config, tasks=None):
    """Run every (strategy, seed) pair over the task sequence.

    Returns (records, reports) where reports maps strategy name to its
    RegretReport over the training tasks. The last task is held out as the
    test task when holdout_test_task is set.
    """
    if tasks is None:
        if isinstance(config.task_source, TaskSequenceConfig):
            tasks, _, _ = gen_task_sequence(config.task_source)
        else:
            tasks = load_task_sequence(config.task_source)
    if config.holdout_test_task:
        if len(tasks) < 2:
            raise InvalidInput("need at least 2 tasks to hold one out")
        train_tasks, test_task = tasks[:-1], tasks[-1]
    else:
        train_tasks, test_task = tasks, None

    oracles = solve_oracles(train_tasks)
    dims = (tasks[0].n_states, tasks[0].n_actions)
    constants = SimConstants.from_problem(
        tasks[0].discount, tasks[0].c_max, dims[0], dims[1])
    meta_cfg = config.meta
    kappa1 = meta_cfg.initial_rate if meta_cfg.initial_rate is not None \
        else config.crpo.learning_rate

    seed_root = np.random.SeedSequence(config.master_seed)
    children = seed_root.spawn(len(config.strategies) * config.runs_per_strategy)
    records = []
    reports = {}

    for si, strategy in enumerate(config.strategies):
        per_task_j = np.zeros((config.runs_per_strategy, len(train_tasks),
                               tasks[0].n_costs + 1))
        kl_terms = np.zeros((config.runs_per_strategy, len(train_tasks)))
        kappas = np.zeros((config.runs_per_strategy, len(train_tasks)))
        last_outcomes = [None] * len(train_tasks)
        for run in range(config.runs_per_strategy):
            child = children[si * config.runs_per_strategy + run]
            rng = np.random.default_rng(child)
            task_seeds = child.generate_state(len(train_tasks) + 1, dtype=np.uint32)
            history = []
            state = MetaLearnerState(
                init_policy=_uniform_init(dims, meta_cfg.shrinkage),
                learning_rate=max(kappa1, meta_cfg.rate_floor),
                ogd_step_init=meta_cfg.ogd_step_init,
                ogd_step_sim=meta_cfg.ogd_step_sim,
                inner_updates=meta_cfg.inner_updates,
                shrinkage=meta_cfg.shrinkage,
                rate_floor=meta_cfg.rate_floor)

            for t, cmdp in enumerate(train_tasks):
                t0 = time.monotonic()
                if strategy == "MetaSrl":
                    init_table = state.init_policy
                    alpha = state.learning_rate
                elif t == 0:
                    init_table = _uniform_init(dims, meta_cfg.shrinkage)
                    alpha = config.crpo.learning_rate
                else:
                    init_table = baseline_init(strategy, history, rng,
                                               meta_cfg.shrinkage, dims)
                    alpha = config.crpo.learning_rate
                kappas[run, t] = alpha
                crpo_cfg = replace(config.crpo, learning_rate=alpha)
                try:
                    outcome, degenerate = _run_task(cmdp, init_table, crpo_cfg,
                                                    int(task_seeds[t]))
                except Exception as exc:  # per-run failures never abort the sweep
                    records.append(RunRecord(
                        strategy=strategy, task_index=t, seed=run,
                        per_step_reward=np.zeros(config.crpo.steps),
                        per_step_costs=np.zeros((config.crpo.steps, cmdp.n_costs)),
                        final_objectives=np.zeros(cmdp.n_costs + 1),
                        taog_contribution=np.nan,
                        tacv_contribution=np.full(cmdp.n_costs, np.nan),
                        error=f"{type(exc).__name__}: {exc}"))
                    continue
                pi_hat = outcome.returned_policy
                j = all_objectives(cmdp, pi_hat)
                per_task_j[run, t] = j
                rewards, costs = _curves(cmdp, outcome)
                records.append(RunRecord(
                    strategy=strategy, task_index=t, seed=run,
                    per_step_reward=rewards, per_step_costs=costs,
                    final_objectives=j,
                    taog_contribution=float(oracles[t].objective_values[0] - j[0]),
                    tacv_contribution=j[1:] - cmdp.limits,
                    degenerate=degenerate,
                    wall_clock=time.monotonic() - t0))
                history.append(np.array(pi_hat.probs))
                last_outcomes[t] = outcome

                if strategy == "MetaSrl":
                    corrections = dualdice_fit(outcome.dataset, pi_hat,
                                               cmdp.discount, config.dice)
                    nu_hat = visitation_from_corrections(outcome.dataset, corrections)
                    kl_terms[run, t], _ = kl_loss_and_grad(
                        nu_hat, pi_hat, TablePolicy(probs=state.init_policy))
                    state = meta_update(state, nu_hat, pi_hat,
                                        config.crpo.steps, constants)

            if test_task is not None:
                t0 = time.monotonic()
                if strategy == "MetaSrl":
                    init_table, alpha = state.init_policy, state.learning_rate
                else:
                    init_table = baseline_init(strategy, history, rng,
                                               meta_cfg.shrinkage, dims)
                    alpha = config.crpo.learning_rate
                crpo_cfg = replace(config.crpo, learning_rate=alpha)
                outcome, degenerate = _run_task(test_task, init_table, crpo_cfg,
                                                int(task_seeds[-1]))
                j = all_objectives(test_task, outcome.returned_policy)
                rewards, costs = _curves(test_task, outcome)
                records.append(RunRecord(
                    strategy=strategy, task_index=len(train_tasks), seed=run,
                    per_step_reward=rewards, per_step_costs=costs,
                    final_objectives=j,
                    taog_contribution=np.nan,
                    tacv_contribution=j[1:] - test_task.limits,
                    is_test=True, degenerate=degenerate,
                    wall_clock=time.monotonic() - t0))

        j_mean = per_task_j.mean(axis=0)
        reports[strategy] = regret_report(
            oracles, last_outcomes, train_tasks,
            kl_terms=kl_terms.mean(axis=0),
            kappas=kappas.mean(axis=0),
            shrink=meta_cfg.shrinkage,
            j_hat=[j_mean[t] for t in range(len(train_tasks))])
    return records, reports


def _curve_table(records, strategy, n_costs):
    """Aggregate per-step curves: mean, std and stderr over seeds."""
    rows = []
    keyed = {}
    for rec in records:
        if rec.strategy != strategy or rec.error is not None:
            continue
        keyed.setdefault((rec.task_index, rec.is_test), []).append(rec)
    for (task, is_test) in sorted(keyed, key=lambda k: (k[1], k[0])):
        group = keyed[(task, is_test)]
        rew = np.array([r.per_step_reward for r in group])
        cost = np.array([r.per_step_costs for r in group])
        n = len(group)
        for m in range(rew.shape[1]):
            row = [task, 1 if is_test else 0, m,
                   rew[:, m].mean(), rew[:, m].std(ddof=0),
                   rew[:, m].std(ddof=0) / np.sqrt(n)]
            for i in range(n_costs):
                row += [cost[:, m, i].mean(), cost[:, m, i].std(ddof=0),
                        cost[:, m, i].std(ddof=0) / np.sqrt(n)]
            rows.append(row)
    return rows


def export_report(records, reports, out_dir, fmt="csv", config=None, n_costs=1):
    """Write learning-curve tables, regret summaries and the config snapshot.

    Byte-identical for identical inputs: fixed column order, sorted keys,
    17-significant-digit floats, no timestamps.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    strategies = sorted({rec.strategy for rec in records} | set(reports))
    for strategy in strategies:
        rows = _curve_table(records, strategy, n_costs)
        cost_cols = []
        for i in range(n_costs):
            cost_cols += [f"cost_{i + 1}_mean", f"cost_{i + 1}_std",
                          f"cost_{i + 1}_stderr"]
        header = ["task", "is_test", "step", "reward_mean", "reward_std",
                  "reward_stderr"] + cost_cols
        if fmt == "csv":
            path = os.path.join(out_dir, f"curves_{strategy}.csv")
            with open(path, "w") as fh:
                fh.write(",".join(header) + "\n")
                for row in rows:
                    fh.write(",".join(
                        str(v) if isinstance(v, (int, np.integer))
                        else f"{v:.17g}" for v in row) + "\n")
        else:
            path = os.path.join(out_dir, f"curves_{strategy}.json")
            with open(path, "w") as fh:
                json.dump([dict(zip(header, [_fmt(v) if isinstance(v, float)
                                             else int(v) for v in row]))
                           for row in rows], fh, sort_keys=True, indent=2)
        written.append(path)
        if strategy in reports:
            rp = os.path.join(out_dir, f"regret_{strategy}.json")
            with open(rp, "w") as fh:
                fh.write(reports[strategy].to_json())
            written.append(rp)
            rc = os.path.join(out_dir, f"regret_{strategy}.csv")
            with open(rc, "w") as fh:
                fh.write(reports[strategy].to_csv())
            written.append(rc)
    if config is not None:
        cp = os.path.join(out_dir, "config.json")
        with open(cp, "w") as fh:
            fh.write(config.to_json())
        written.append(cp)
    mp = os.path.join(out_dir, "environment.json")
    with open(mp, "w") as fh:
        json.dump({"package_version": __version__,
                   "numpy_version": np.__version__}, fh, sort_keys=True)
    written.append(mp)
    return written
