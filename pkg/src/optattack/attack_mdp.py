"""The adversary's MDP over perturbed observations.

Given an agent MDP ``M`` and a policy ``pi``, the adversary at true state
``s`` picks a perturbed state ``s_bar`` within distance ``epsilon``; the agent
then acts with ``pi(.|s_bar)`` while the system moves from ``s``. That is an
MDP whose action set at ``s`` is the epsilon-ball around ``s``:

    P_bar(.|s, s_bar) = sum_a pi(a|s_bar) P(.|s, a)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .mdp import DEFAULT_TOL, TabularMdp, TabularPolicy, policy_evaluation, q_from_policy, value_iteration

REWARD_MODES = ("negate_agent", "target_states", "energy")
NORMS = {"l1": 1, "l2": 2, "linf": np.inf}


def norm_order(norm: str | float):
    if isinstance(norm, str):
        try:
            return NORMS[norm]
        except KeyError:
            raise ValueError(f"unknown norm {norm!r}; choose from {', '.join(NORMS)}") from None
    return norm


def distance_matrix(coords: np.ndarray, norm: str = "l2") -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.linalg.norm(diff, ord=norm_order(norm), axis=-1)


def neighbor_sets(dist: np.ndarray, epsilon: float) -> list[list[int]]:
    """``A_s = {s_bar : d(s, s_bar) <= epsilon}`` in ascending state id."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    dist = np.asarray(dist, dtype=float)
    out = []
    for s in range(dist.shape[0]):
        ball = set(np.flatnonzero(dist[s] <= epsilon + 1e-12).tolist()) | {s}
        out.append(sorted(ball))
    return out


@dataclass(frozen=True)
class AttackMdp:
    mdp: TabularMdp  # actions at s are the admissible perturbed states
    base: TabularMdp
    policy: TabularPolicy
    neighbors: tuple[tuple[int, ...], ...]
    reward_mode: str


def build_attack_mdp(
    mdp: TabularMdp,
    policy: TabularPolicy,
    neighbors: Sequence[Sequence[int]],
    reward_mode: str = "negate_agent",
    targets: set[int] | None = None,
    action_values: Mapping[int, float] | None = None,
) -> AttackMdp:
    """Adversary MDP for ``policy`` on ``mdp`` with perturbation sets ``neighbors``.

    ``reward_mode``:
      * ``negate_agent``: ``r_bar(s, s_bar) = -sum_a pi(a|s_bar) r(s, a)``
      * ``target_states``: expected indicator that the next state is in ``targets``
      * ``energy``: ``sum_a pi(a|s_bar) a^2`` with ``action_values`` giving each action's magnitude
    """
    if reward_mode not in REWARD_MODES:
        raise ValueError(f"unknown reward mode {reward_mode!r}")
    if reward_mode == "target_states" and targets is None:
        raise ValueError("target_states mode needs a target set")
    if reward_mode == "energy" and action_values is None:
        raise ValueError("energy mode needs the real-valued action of every action id")
    if policy.actions != mdp.actions:
        raise ValueError("policy action sets do not match the MDP")
    if len(neighbors) != mdp.n_states:
        raise ValueError("need one neighbour set per state")
    trans, reward = {}, {}
    acts = []
    for s in range(mdp.n_states):
        ball = sorted({int(x) for x in neighbors[s]})
        if not ball:
            raise ValueError(f"empty perturbation set at state {s}")
        acts.append(tuple(ball))
        for sb in ball:
            if mdp.actions[sb] != mdp.actions[s]:
                raise ValueError(f"states {s} and {sb} have different action sets")
            pi = policy.dist(sb)
            row: dict[int, float] = {}
            for a, p in zip(mdp.actions[s], pi):
                if p == 0.0:
                    continue
                for t, q in mdp.transition[s, a]:
                    row[t] = row.get(t, 0.0) + p * q
            trans[s, sb] = tuple(sorted(row.items()))
            if s in mdp.terminal:
                reward[s, sb] = 0.0
            elif reward_mode == "negate_agent":
                reward[s, sb] = -float(sum(p * mdp.reward[s, a] for a, p in zip(mdp.actions[s], pi)))
            elif reward_mode == "target_states":
                reward[s, sb] = float(sum(q for t, q in row.items() if t in targets))
            else:
                reward[s, sb] = float(sum(p * action_values[a] ** 2 for a, p in zip(mdp.actions[s], pi)))
    bar = TabularMdp(mdp.n_states, tuple(acts), trans, reward, mdp.initial_dist, mdp.gamma, mdp.terminal)
    return AttackMdp(bar, mdp, policy, tuple(acts), reward_mode)


@dataclass
class TabularAttack:
    """Deterministic perturbation map ``chi[s] = s_bar``."""

    chi: np.ndarray
    epsilon: float = 0.0
    norm: str = "l1"
    name: str = "optimal"

    def __post_init__(self):
        self.chi = np.asarray(self.chi, dtype=int)

    def __call__(self, s: int) -> int:
        return int(self.chi[s])

    def observation_kernel(self) -> np.ndarray:
        """``O[s, s_bar] = 1[chi(s) = s_bar]``."""
        n = len(self.chi)
        O = np.zeros((n, n))
        O[np.arange(n), self.chi] = 1.0
        return O

    def is_feasible(self, neighbors: Sequence[Sequence[int]]) -> bool:
        return all(int(c) in neighbors[s] for s, c in enumerate(self.chi))

    def dumps(self) -> str:
        return "".join(f"chi {s} {int(c)}\n" for s, c in enumerate(self.chi))

    @classmethod
    def loads(cls, text: str, **kw) -> TabularAttack:
        pairs = {}
        for line in text.splitlines():
            parts = line.split()
            if parts and parts[0] == "chi":
                pairs[int(parts[1])] = int(parts[2])
        n = max(pairs) + 1 if pairs else 0
        if sorted(pairs) != list(range(n)):
            raise ValueError("chi records must cover states 0..n-1")
        return cls(np.array([pairs[s] for s in range(n)]), **kw)


def identity_attack(n_states: int) -> TabularAttack:
    return TabularAttack(np.arange(n_states), 0.0, name="none")


def attack_as_policy(attack_mdp: AttackMdp, chi: Sequence[int]) -> TabularPolicy:
    return TabularPolicy.deterministic(attack_mdp.mdp.actions, [int(c) for c in chi])


def solve_optimal_attack(attack_mdp: AttackMdp, tol: float = DEFAULT_TOL, epsilon: float = 0.0, norm: str = "l1") -> TabularAttack:
    """Exact optimal deterministic attack; ties go to the lowest state id."""
    _, chi_policy = value_iteration(attack_mdp.mdp, tol)
    chi = [chi_policy.greedy_action(s) for s in range(attack_mdp.mdp.n_states)]
    return TabularAttack(np.array(chi), epsilon, norm, "optimal")


def perturbed_policy(policy: TabularPolicy, chi) -> TabularPolicy:
    """``(pi o chi)(.|s) = pi(.|chi(s))``."""
    chi = np.asarray(getattr(chi, "chi", chi), dtype=int)
    n = policy.n_states
    if chi.shape != (n,) or np.any(chi < 0) or np.any(chi >= n):
        raise ValueError("chi must map every state to a valid state")
    rows = []
    for s in range(n):
        if policy.actions[chi[s]] != policy.actions[s]:
            raise ValueError(f"states {s} and {chi[s]} have different action sets")
        rows.append(policy.probs[chi[s]].copy())
    return TabularPolicy(policy.actions, tuple(rows))


@dataclass
class IdentityReport:
    holds: bool
    max_gap: float
    worst: tuple
    tol: float

    def __bool__(self) -> bool:
        return self.holds


def _gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``|a - b|`` with matching infinities counted as equal."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    same_inf = np.isinf(a) & (a == b)
    with np.errstate(invalid="ignore"):
        g = np.abs(a - b)
    g[same_inf] = 0.0
    return np.where(np.isnan(g), np.inf, g)


def _ensure_neighbors(chi: np.ndarray, neighbors):
    if neighbors is None:
        return [sorted({s, int(c)}) for s, c in enumerate(chi)]
    return neighbors


def verify_value_identity(mdp: TabularMdp, policy: TabularPolicy, chi, tol: float = 1e-9, neighbors=None) -> IdentityReport:
    """Check ``V^chi(s) = -V^{pi o chi}(s)`` for every state."""
    chi = np.asarray(getattr(chi, "chi", chi), dtype=int)
    bar = build_attack_mdp(mdp, policy, _ensure_neighbors(chi, neighbors), "negate_agent")
    v_attack = policy_evaluation(bar.mdp, attack_as_policy(bar, chi))
    v_agent = policy_evaluation(mdp, perturbed_policy(policy, chi))
    gap = _gap(v_attack, -v_agent)
    worst = int(np.argmax(gap))
    scale = max(1.0, float(np.abs(v_agent[np.isfinite(v_agent)]).max(initial=1.0)))
    return IdentityReport(bool(gap.max() <= tol * scale), float(gap.max()), (worst,), tol)


def verify_q_identity(mdp: TabularMdp, policy: TabularPolicy, chi, tol: float = 1e-9, neighbors=None) -> IdentityReport:
    """Check ``Q^chi(s, s_bar) = -sum_a pi(a|s_bar) Q^{pi o chi}(s, a)`` on every admissible pair.

    For a deterministic ``pi`` this is ``-Q^{pi o chi}(s, pi(s_bar))``, which is
    what gets compared in that case.
    """
    chi = np.asarray(getattr(chi, "chi", chi), dtype=int)
    bar = build_attack_mdp(mdp, policy, _ensure_neighbors(chi, neighbors), "negate_agent")
    v_attack = policy_evaluation(bar.mdp, attack_as_policy(bar, chi))
    q_attack = q_from_policy(bar.mdp, None, v_attack)
    pc = perturbed_policy(policy, chi)
    q_agent = q_from_policy(mdp, pc, policy_evaluation(mdp, pc))
    det = policy.is_deterministic
    worst_gap, worst = 0.0, ()
    scale = 1.0
    for s in range(mdp.n_states):
        for k, sb in enumerate(bar.mdp.actions[s]):
            if det:
                a = policy.greedy_action(sb)
                rhs = -q_agent[s][mdp.action_index(s, a)]
            else:
                w = policy.dist(sb)
                qa = q_agent[s]
                if np.all(np.isfinite(qa[w > 0])):
                    rhs = -float(w @ qa)
                else:
                    rhs = -float(np.sum(qa[w > 0]))  # sign of the infinite part
            g = float(_gap(np.array([q_attack[s][k]]), np.array([rhs]))[0])
            if np.isfinite(rhs):
                scale = max(scale, abs(rhs))
            if g > worst_gap:
                worst_gap, worst = g, (s, int(sb))
    return IdentityReport(bool(worst_gap <= tol * scale), worst_gap, worst, tol)


def attacked_values(mdp: TabularMdp, policy: TabularPolicy, chi) -> np.ndarray:
    """``V^{pi o chi}`` on the agent MDP."""
    return policy_evaluation(mdp, perturbed_policy(policy, chi))
