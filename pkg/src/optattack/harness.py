"""Experiment orchestration: config files, evaluation sweeps, CSV output,
summary statistics and plot-ready tables."""
from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .agents import EvalRecord, TabularAgent, evaluate_policy, load_agent
from .attack_mdp import (build_attack_mdp, distance_matrix, neighbor_sets, perturbed_policy, solve_optimal_attack)
from .attacks import FgmAttack, TabularChiAttack, huang_chi, load_attack, pattanaik_chi
from .envs import GridWorldEnv, grid_coords, make_env, make_gridworld
from .mdp import policy_evaluation, q_from_policy, value_iteration

TABULAR_ATTACKS = ("optimal", "huang", "pattanaik")
BUILTIN_ATTACKS = ("none", "fgm") + TABULAR_ATTACKS
MA_WINDOW = 25

# ---------------------------------------------------------------------------
# key = value configuration


def parse_kv_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {n}: empty key")
        out[key] = value
    return out


def read_kv_file(path: str) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_kv_text(fh.read())


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    if value.lower() == "none":
        return None
    if isinstance(default, int) and not isinstance(default, bool):
        return int(float(value)) if float(value).is_integer() else float(value)
    if isinstance(default, float) or default is None:
        return float(value)
    return value


def apply_kv(obj, values: dict[str, str]):
    """Copy of dataclass ``obj`` with string ``values`` coerced to the field types."""
    names = {f.name for f in dataclasses.fields(obj)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    updates = {k: _coerce(v, getattr(obj, k)) for k, v in values.items()}
    return dataclasses.replace(obj, **updates)


# ---------------------------------------------------------------------------
# evaluation runs


@dataclass
class RunConfig:
    env: str = "mountaincar"
    agent: str = ""  # trained agent directory, or "optimal" on the gridworld
    attack: str = "none"  # none | fgm | optimal | huang | pattanaik | trained attack directory
    epsilons: tuple[float, ...] = (0.05,)
    norm: str = "l2"
    seeds: int = 10
    episodes: int = 30
    csv_path: str = ""
    master_seed: int = 0
    run_id: str = "run"

    def __post_init__(self):
        self.epsilons = tuple(float(e) for e in self.epsilons)
        if any(e < 0 for e in self.epsilons):
            raise ValueError("epsilons must be non-negative")
        if self.seeds < 1 or self.episodes < 1:
            raise ValueError("seeds and episodes must be >= 1")


def gridworld_policy(width: int = 6, height: int = 6):
    mdp = make_gridworld(width, height)
    v, pi = value_iteration(mdp)
    return mdp, pi, v


def tabular_attack(name: str, epsilon: float, width: int = 6, height: int = 6, norm: str = "l1"):
    """Optimal or baseline ``chi`` for the optimal gridworld policy at grid radius ``epsilon``."""
    mdp, pi, v = gridworld_policy(width, height)
    nb = neighbor_sets(distance_matrix(grid_coords(width, height), norm), epsilon)
    if name == "optimal":
        return solve_optimal_attack(build_attack_mdp(mdp, pi, nb), epsilon=epsilon, norm=norm)
    if name == "huang":
        return huang_chi(pi, nb, epsilon, norm)
    if name == "pattanaik":
        return pattanaik_chi(pi, q_from_policy(mdp, pi, v), nb, epsilon, norm)
    raise ValueError(f"unknown tabular attack {name!r}")


def load_run_agent(config: RunConfig):
    if config.agent == "optimal":
        if config.env != "gridworld":
            raise ValueError("the 'optimal' agent exists only for the gridworld")
        return TabularAgent(gridworld_policy()[1])
    return load_agent(config.agent)


def make_attack(config: RunConfig, agent, env, epsilon: float, trained=None):
    name = config.attack
    if name == "none":
        return None
    if name == "fgm":
        return FgmAttack(agent, epsilon, config.norm)
    if name in TABULAR_ATTACKS:
        if not isinstance(env, GridWorldEnv):
            raise ValueError(f"{name} attack needs the gridworld")
        return TabularChiAttack(env, tabular_attack(name, epsilon, env.width, env.height))
    if trained is None:
        raise FileNotFoundError(f"no trained attack at {name!r}")
    if trained.env_name != env.name:
        raise ValueError(f"attack was trained on {trained.env_name!r}, not {env.name!r}")
    return trained.with_epsilon(epsilon)


def run_eval(config: RunConfig, agent=None, trained_attack=None) -> list[EvalRecord]:
    """Every (epsilon, seed, episode) rollout; rows are ordered by those indices."""
    agent = agent if agent is not None else load_run_agent(config)
    if agent.env_name != config.env:
        raise ValueError(f"agent was trained on {agent.env_name!r}, not {config.env!r}")
    if trained_attack is None and config.attack not in BUILTIN_ATTACKS:
        trained_attack = load_attack(config.attack)
    env = make_env(config.env)
    records: list[EvalRecord] = []
    for eps in config.epsilons:
        attack = make_attack(config, agent, env, eps, trained_attack)
        for k in range(config.seeds):
            recs = evaluate_policy(env, agent, attack, config.episodes, config.master_seed, run_id=config.run_id, seed_index=k)
            if attack is None:  # keep the requested radius on clean rows
                recs = [dataclasses.replace(r, epsilon=eps) for r in recs]
            records += recs
    if config.csv_path:
        write_records(records, config.csv_path)
    return records


def write_records(records: Iterable[EvalRecord], path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(EvalRecord.FIELDS)
        for r in records:
            w.writerow(r.row())


def read_records(path: str) -> list[EvalRecord]:
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != EvalRecord.FIELDS:
            raise ValueError(f"{path}: not an evaluation CSV")
        return [EvalRecord(row["run_id"], row["env"], row["agent_algo"], row["attack_algo"], float(row["epsilon"]),
                           row["norm"], int(row["seed"]), int(row["episode"]), float(row["return"]), int(row["length"]))
                for row in reader]


# ---------------------------------------------------------------------------
# summaries


def performance_loss(mean_clean: float, mean_attacked: float, floor: float) -> float:
    """Drop in mean return as a percentage of the clean-to-worst range."""
    span = mean_clean - floor
    if span <= 0:
        raise ValueError("clean mean must lie above the reward floor")
    return 100.0 * (mean_clean - mean_attacked) / span


@dataclass
class SummaryRow:
    attack_algo: str
    epsilon: float
    n: int
    mean: float
    std: float
    min: float
    max: float
    loss_pct: float

    FIELDS = ("attack_algo", "epsilon", "n", "mean", "std", "min", "max", "loss_pct")

    def row(self) -> list:
        return [self.attack_algo, repr(self.epsilon), self.n, repr(self.mean), repr(self.std),
                repr(self.min), repr(self.max), repr(self.loss_pct)]


def summarize(records: Sequence[EvalRecord], floor: float, clean_baseline: Sequence[EvalRecord] | None = None) -> list[SummaryRow]:
    """Per (attack, epsilon) statistics; std is the population standard deviation.

    The clean mean comes from ``clean_baseline`` or from the ``none`` rows of
    ``records``.
    """
    base = clean_baseline if clean_baseline is not None else [r for r in records if r.attack_algo == "none"]
    if not base:
        raise ValueError("no clean baseline: run with attack 'none' or pass clean_baseline")
    clean = float(np.mean([r.ret for r in base]))
    groups: dict[tuple[str, float], list[float]] = {}
    for r in records:
        groups.setdefault((r.attack_algo, r.epsilon), []).append(r.ret)
    out = []
    for (name, eps), rets in sorted(groups.items()):
        x = np.array(rets)
        m = float(x.mean())
        out.append(SummaryRow(name, eps, len(x), m, float(x.std()), float(x.min()), float(x.max()),
                              performance_loss(clean, m, floor)))
    return out


def moving_average(x: Sequence[float], window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean; the first points average over what is available."""
    x = np.asarray(x, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def _write_tsv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(str(v) for v in r) + "\n")


def report(csv_paths: Sequence[str], out_dir: str, floors: dict[str, float] | None = None) -> list[str]:
    """Loss-vs-epsilon tables from evaluation CSVs and smoothed curves from
    training logs (``episode,step,return,length``). Returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    evals: list[EvalRecord] = []
    for path in csv_paths:
        with open(path, encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
        if header == ["episode", "step", "return", "length"]:
            with open(path, encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
            rets = [float(r["return"]) for r in rows]
            smooth = moving_average(rets)
            stem = os.path.splitext(os.path.basename(path))[0]
            parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
            out = os.path.join(out_dir, f"curve_{parent}_{stem}.tsv")
            _write_tsv(out, ["episode", "step", "return", f"ma{MA_WINDOW}"],
                       ([r["episode"], r["step"], r["return"], repr(float(m))] for r, m in zip(rows, smooth)))
            written.append(out)
        else:
            evals += read_records(path)
    by_env: dict[str, list[EvalRecord]] = {}
    for r in evals:
        by_env.setdefault(r.env, []).append(r)
    for env_name, recs in sorted(by_env.items()):
        floor = (floors or {}).get(env_name, make_env(env_name).reward_floor)
        rows = summarize(recs, floor)
        out = os.path.join(out_dir, f"loss_{env_name}.tsv")
        _write_tsv(out, SummaryRow.FIELDS, (r.row() for r in rows))
        with open(out, "a", encoding="utf-8") as fh:
            fh.write(f"# reward_floor\t{floor!r}\n")
        written.append(out)
    return written


# ---------------------------------------------------------------------------
# gridworld demo


def gridworld_demo(epsilon: float = 1.0, width: int = 6, height: int = 6) -> dict[str, np.ndarray]:
    """Undiscounted values of the optimal policy under each tabular attack."""
    mdp, pi, _ = gridworld_policy(width, height)
    out = {}
    for name in TABULAR_ATTACKS:
        chi = tabular_attack(name, epsilon, width, height)
        out[name] = policy_evaluation(mdp, perturbed_policy(pi, chi)).reshape(height, width)
    return out


def format_grid(values: np.ndarray) -> str:
    cells = [["-inf" if v == -np.inf else "inf" if v == np.inf else f"{v:g}" for v in row] for row in values]
    w = max(len(c) for row in cells for c in row)
    return "\n".join(" ".join(c.rjust(w) for c in row) for row in cells)
