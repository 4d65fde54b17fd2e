"""Command line entry point: ``optattack <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from . import harness
from .agents import load_agent, preset, save_agent, train_agent
from .attack_mdp import build_attack_mdp, distance_matrix, neighbor_sets, solve_optimal_attack
from .attacks import ATTACK_TRAINERS, AttackConfig, save_attack
from .bounds import (alpha_sampled, alpha_tabular, empirical_gap, estimate_lipschitz, impact_bound, impact_bound_value,
                     lipschitz_bound)
from .envs import ENV_NAMES, grid_coords, make_env, make_gridworld
from .mdp import policy_evaluation, value_iteration


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_train_agent(args) -> int:
    cfg = preset(args.env, args.algo)
    values = harness.read_kv_file(args.config) if args.config else {}
    values.update(_overrides(args.set))
    cfg = harness.apply_kv(cfg, values)
    agent = train_agent(args.env, cfg, args.seed)
    save_agent(agent, args.out)
    tail = [r["return"] for r in agent.log[-100:]]
    print(f"trained {args.algo} on {args.env}: {len(agent.log)} episodes, final-100 mean return "
          f"{np.mean(tail) if tail else float('nan'):.2f}; saved to {args.out}")
    return 0


def cmd_train_attack(args) -> int:
    agent = load_agent(args.agent)
    cfg = AttackConfig(epsilon=args.epsilon, norm=args.norm,
                       exploration="gradient" if args.algo == "whitebox" else "uniform")
    values = harness.read_kv_file(args.config) if args.config else {}
    values.update(_overrides(args.set))
    cfg = harness.apply_kv(cfg, values)
    env = make_env(agent.env_name, frame_skip=cfg.frame_skip)
    attack = ATTACK_TRAINERS[args.algo](env, agent, cfg, args.seed)
    save_attack(attack, args.out)
    tail = [r["return"] for r in attack.log[-100:]]
    print(f"trained {args.algo} attack: {len(attack.log)} episodes, final-100 agent return "
          f"{np.mean(tail) if tail else float('nan'):.2f}; saved to {args.out}")
    return 0


def cmd_eval(args) -> int:
    if args.agent == "optimal":
        env_name = "gridworld"
    else:
        env_name = load_agent(args.agent).env_name
    attack = args.attack if args.attack else args.attack_algo
    norm = args.norm or ("l1" if env_name == "gridworld" else "l2")
    cfg = harness.RunConfig(env=env_name, agent=args.agent, attack=attack, epsilons=_floats(args.epsilons),
                            norm=norm, seeds=args.seeds, episodes=args.episodes, csv_path=args.csv,
                            master_seed=args.master_seed, run_id=args.run_id)
    records = harness.run_eval(cfg)
    floor = make_env(env_name).reward_floor
    print("attack\tepsilon\tn\tmean\tstd\tmin\tmax")
    groups: dict = {}
    for r in records:
        groups.setdefault((r.attack_algo, r.epsilon), []).append(r.ret)
    for (name, eps), rets in groups.items():
        x = np.array(rets)
        print(f"{name}\t{eps:g}\t{len(x)}\t{x.mean():.2f}\t{x.std():.2f}\t{x.min():.2f}\t{x.max():.2f}")
    print(f"# reward floor {floor:g}; {len(records)} rows written to {args.csv}")
    return 0


def _bound_rows_tabular(epsilon: float, gamma: float, norm: str):
    mdp = make_gridworld(6, 6, gamma=gamma)
    _, pi = value_iteration(mdp)
    nb = neighbor_sets(distance_matrix(grid_coords(6, 6), norm), epsilon)
    prof = alpha_tabular(pi, nb)
    chi = solve_optimal_attack(build_attack_mdp(mdp, pi, nb))
    rows = [("state", "alpha")] + [(s, repr(float(a))) for s, a in enumerate(prof.alpha)]
    summary = {"alpha_sup": prof.sup, "impact_bound": impact_bound(pi, mdp, nb), "empirical_gap": empirical_gap(mdp, pi, chi),
               "v_inf": float(np.abs(policy_evaluation(mdp, pi)).max())}
    return rows, summary


def _bound_rows_network(agent, epsilon: float, norm: str, samples: int, episodes: int, seed: int):
    env = make_env(agent.env_name)
    states, disc = [], []
    gamma = agent.config.gamma
    for ep in range(episodes):
        obs = env.reset(seed=seed + ep)
        agent.reset()
        ret, k = 0.0, 0
        while not env.done:
            states.append(obs)
            st = env.step(agent.act(obs))
            ret += gamma**k * st.reward
            k += 1
            obs = st.observation
        disc.append(ret)
    states = np.array(states)

    def probs(x):
        return np.array([agent.action_probs(row) for row in np.atleast_2d(x)])

    prof = alpha_sampled(probs, states, epsilon, norm, samples, seed)
    L = estimate_lipschitz(probs, states, norm, seed=seed)
    R = float(env.frame_skip)  # per-decision reward magnitude
    v_inf = float(np.abs(disc).max())
    rows = [("visited_state", "alpha_lower_bound")] + [(i, repr(float(a))) for i, a in enumerate(prof.alpha)]
    summary = {"alpha_sup_sampled": prof.sup, "lipschitz_estimate": L, "v_inf_estimate": v_inf,
               "impact_bound": impact_bound_value(prof.sup, R, v_inf, gamma),
               "lipschitz_bound": lipschitz_bound(L, epsilon, R, v_inf, gamma)}
    return rows, summary


def cmd_bound(args) -> int:
    if args.agent == "optimal":
        rows, summary = _bound_rows_tabular(args.epsilon, args.gamma, args.norm or "l1")
    else:
        agent = load_agent(args.agent)
        if not hasattr(agent, "action_probs"):
            raise SystemExit("bound needs an agent with an action distribution (dqn or drqn)")
        rows, summary = _bound_rows_network(agent, args.epsilon, args.norm or "l2", args.samples, args.episodes, args.seed)
    for k, v in summary.items():
        print(f"{k}\t{v:.6g}")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            for r in rows:
                w.writerow(r)
            for k, v in summary.items():
                w.writerow([k, repr(float(v))])
        print(f"# per-state rows written to {args.csv}")
    return 0


def cmd_gridworld_demo(args) -> int:
    tables = harness.gridworld_demo(args.epsilon, args.width, args.height)
    for name, values in tables.items():
        print(f"[{name}] epsilon={args.epsilon:g}")
        print(harness.format_grid(values))
        print()
    return 0


def cmd_report(args) -> int:
    for path in harness.report(args.csv, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optattack", description="Observation attacks on RL agents.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-agent", help="train a DQN, DRQN-lite or DDPG agent")
    t.add_argument("--env", required=True, choices=ENV_NAMES)
    t.add_argument("--algo", required=True, choices=["dqn", "drqn", "ddpg"])
    t.add_argument("--config", help="key = value file overriding the preset")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_agent)

    a = sub.add_parser("train-attack", help="train a learned adversary against a saved agent")
    a.add_argument("--agent", required=True)
    a.add_argument("--algo", required=True, choices=sorted(ATTACK_TRAINERS))
    a.add_argument("--epsilon", type=float, required=True)
    a.add_argument("--norm", default="l2", choices=["l1", "l2", "linf"])
    a.add_argument("--config")
    a.add_argument("--set", action="append", metavar="KEY=VALUE")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_train_attack)

    e = sub.add_parser("eval", help="evaluate an agent under an attack over an epsilon list")
    e.add_argument("--agent", required=True, help="agent directory, or 'optimal' for the gridworld policy")
    g = e.add_mutually_exclusive_group()
    g.add_argument("--attack", help="trained attack directory")
    g.add_argument("--attack-algo", default="none", choices=list(harness.BUILTIN_ATTACKS))
    e.add_argument("--epsilons", default="0.05")
    e.add_argument("--norm", choices=["l1", "l2", "linf"])
    e.add_argument("--seeds", type=int, default=10)
    e.add_argument("--episodes", type=int, default=30)
    e.add_argument("--master-seed", type=int, default=0)
    e.add_argument("--run-id", default="run")
    e.add_argument("--csv", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bound", help="smoothness profile and attack-impact bound")
    b.add_argument("--agent", required=True, help="agent directory, or 'optimal' for the gridworld policy")
    b.add_argument("--epsilon", type=float, required=True)
    b.add_argument("--norm", choices=["l1", "l2", "linf"])
    b.add_argument("--gamma", type=float, default=0.99, help="gridworld discount (the bound needs gamma < 1)")
    b.add_argument("--samples", type=int, default=64)
    b.add_argument("--episodes", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--csv")
    b.set_defaults(func=cmd_bound)

    d = sub.add_parser("gridworld-demo", help="values of the optimal gridworld policy under tabular attacks")
    d.add_argument("--epsilon", type=float, default=1.0)
    d.add_argument("--width", type=int, default=6)
    d.add_argument("--height", type=int, default=6)
    d.set_defaults(func=cmd_gridworld_demo)

    r = sub.add_parser("report", help="loss tables and smoothed curves from CSVs")
    r.add_argument("--csv", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
