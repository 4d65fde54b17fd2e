"""Finite MDPs and exact solvers.

A :class:`TabularMdp` stores sparse transition rows as ``(next_state, prob)``
pairs keyed by ``(state, action)``. Solvers work on a dense row table built
lazily from those rows; every MDP in this package is small enough for that.

Undiscounted problems (``gamma == 1``) are treated as stochastic shortest
path problems. States from which the process can run forever without
reaching a terminal state get an infinite value whose sign is the sign of
the (sign-definite) non-terminal rewards; anything else raises
:class:`NonConvergenceError`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

DEFAULT_TOL = 1e-9
_TIE_TOL = 1e-12


class NonConvergenceError(RuntimeError):
    """A solver could not produce a well-defined value function."""


@dataclass(frozen=True)
class _RowTable:
    row_state: np.ndarray  # (n_rows,)
    row_action: np.ndarray  # (n_rows,) action ids
    offsets: np.ndarray  # (n_states + 1,) rows of state s are offsets[s]:offsets[s+1]
    P: np.ndarray  # (n_rows, n_states)
    r: np.ndarray  # (n_rows,)


@dataclass(frozen=True)
class TabularMdp:
    n_states: int
    actions: tuple[tuple[int, ...], ...]
    transition: Mapping[tuple[int, int], tuple[tuple[int, float], ...]]
    reward: Mapping[tuple[int, int], float]
    initial_dist: np.ndarray
    gamma: float
    terminal: frozenset[int] = field(default_factory=frozenset)
    reward_bound: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(tuple(int(a) for a in acts) for acts in self.actions))
        object.__setattr__(self, "terminal", frozenset(int(s) for s in self.terminal))
        p0 = np.asarray(self.initial_dist, dtype=float)
        object.__setattr__(self, "initial_dist", p0)
        if len(self.actions) != self.n_states:
            raise ValueError("need one action list per state")
        if p0.shape != (self.n_states,) or np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-9:
            raise ValueError("initial_dist must be a distribution over states")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.gamma == 1.0 and not self.terminal:
            raise ValueError("gamma = 1 requires at least one terminal state")
        for s, acts in enumerate(self.actions):
            if not acts:
                raise ValueError(f"state {s} has no actions")
            for a in acts:
                row = self.transition.get((s, a))
                if row is None or (s, a) not in self.reward:
                    raise ValueError(f"missing transition or reward for ({s}, {a})")
                probs = np.array([p for _, p in row], dtype=float)
                if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                    raise ValueError(f"transition row ({s}, {a}) is not a distribution")
                if any(not 0 <= t < self.n_states for t, _ in row):
                    raise ValueError(f"transition row ({s}, {a}) leaves the state space")
                if s in self.terminal and (self.reward[s, a] != 0.0 or any(t != s for t, p in row if p > 0)):
                    raise ValueError(f"terminal state {s} must self-loop with reward 0")
        bound = max(abs(v) for v in self.reward.values())
        if self.reward_bound is None:
            object.__setattr__(self, "reward_bound", float(bound))
        elif bound > self.reward_bound + 1e-12:
            raise ValueError("reward_bound is smaller than max |r(s, a)|")

    @cached_property
    def table(self) -> _RowTable:
        n_rows = sum(len(a) for a in self.actions)
        P = np.zeros((n_rows, self.n_states))
        r = np.zeros(n_rows)
        row_state = np.zeros(n_rows, dtype=int)
        row_action = np.zeros(n_rows, dtype=int)
        offsets = np.zeros(self.n_states + 1, dtype=int)
        i = 0
        for s, acts in enumerate(self.actions):
            offsets[s] = i
            for a in acts:
                for t, p in self.transition[s, a]:
                    P[i, t] += p
                r[i] = self.reward[s, a]
                row_state[i], row_action[i] = s, a
                i += 1
        offsets[-1] = i
        return _RowTable(row_state, row_action, offsets, P, r)

    @property
    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.terminal)] = True
        return mask

    def action_index(self, s: int, a: int) -> int:
        return self.actions[s].index(a)


@dataclass(frozen=True)
class TabularPolicy:
    """``probs[s][k]`` is the probability of action ``actions[s][k]``."""

    actions: tuple[tuple[int, ...], ...]
    probs: tuple[np.ndarray, ...]

    def __post_init__(self):
        probs = tuple(np.asarray(p, dtype=float) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) != len(self.actions):
            raise ValueError("need one distribution per state")
        for s, (acts, p) in enumerate(zip(self.actions, probs)):
            if p.shape != (len(acts),) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError(f"policy row {s} is not a distribution over its actions")

    @classmethod
    def deterministic(cls, actions: Sequence[Sequence[int]], choice: Sequence[int]) -> TabularPolicy:
        rows = []
        for acts, a in zip(actions, choice):
            p = np.zeros(len(acts))
            p[list(acts).index(a)] = 1.0
            rows.append(p)
        return cls(tuple(tuple(a) for a in actions), tuple(rows))

    @classmethod
    def uniform(cls, actions: Sequence[Sequence[int]]) -> TabularPolicy:
        return cls(tuple(tuple(a) for a in actions), tuple(np.full(len(a), 1.0 / len(a)) for a in actions))

    @property
    def n_states(self) -> int:
        return len(self.probs)

    @property
    def is_deterministic(self) -> bool:
        return all(np.count_nonzero(p == 1.0) == 1 for p in self.probs)

    def dist(self, s: int) -> np.ndarray:
        return self.probs[s]

    def prob(self, s: int, a: int) -> float:
        return float(self.probs[s][self.actions[s].index(a)])

    def greedy_action(self, s: int) -> int:
        """Most likely action; ties go to the lowest action id."""
        p = self.probs[s]
        best = np.flatnonzero(p >= p.max() - _TIE_TOL)
        return min(self.actions[s][k] for k in best)

    def row_weights(self, mdp: TabularMdp) -> np.ndarray:
        if self.actions != mdp.actions:
            raise ValueError("policy action sets do not match the MDP")
        return np.concatenate(self.probs)


def _safe_dot(P: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``P @ V`` where V may hold infinities of a single sign."""
    finite = np.isfinite(V)
    if finite.all():
        return P @ V
    out = P @ np.where(finite, V, 0.0)
    reach_pos = (P[:, V == np.inf] > 0).any(axis=1)
    reach_neg = (P[:, V == -np.inf] > 0).any(axis=1)
    if np.any(reach_pos & reach_neg):
        raise NonConvergenceError("value function mixes +inf and -inf")
    out[reach_pos] = np.inf
    out[reach_neg] = -np.inf
    return out


def _backward_reach(adj: np.ndarray, targets: np.ndarray, allowed: np.ndarray | None = None) -> np.ndarray:
    """States that can reach ``targets`` along edges ``adj[s, t]``."""
    seen = targets.copy()
    frontier = targets.copy()
    while frontier.any():
        new = adj[:, frontier].any(axis=1) & ~seen
        if allowed is not None:
            new &= allowed
        seen |= new
        frontier = new
    return seen


def _chain(mdp: TabularMdp, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    tab = mdp.table
    w = policy.row_weights(mdp)
    n = mdp.n_states
    P = np.zeros((n, n))
    r = np.zeros(n)
    np.add.at(P, tab.row_state, w[:, None] * tab.P)
    np.add.at(r, tab.row_state, w * tab.r)
    return P, r


def _infinite_sign(rewards: np.ndarray, what: str) -> float:
    if rewards.size and np.all(rewards < 0):
        return -np.inf
    if rewards.size and np.all(rewards > 0):
        return np.inf
    raise NonConvergenceError(f"undiscounted value undefined: {what} never terminates and rewards are not sign-definite")


def policy_evaluation(mdp: TabularMdp, policy: TabularPolicy, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Value of ``policy`` on ``mdp``.

    Solved directly as a linear system; the Bellman residual is checked
    against ``tol`` before returning. For ``gamma == 1`` states that fail to
    reach a terminal state with probability one get ``+-inf``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P, r = _chain(mdp, policy)
    n = mdp.n_states
    V = np.zeros(n)
    if mdp.gamma < 1.0:
        V = np.linalg.solve(np.eye(n) - mdp.gamma * P, r)
        proper = np.ones(n, dtype=bool)
    else:
        adj = P > 0
        term = mdp.terminal_mask
        stuck = ~_backward_reach(adj, term)
        improper = _backward_reach(adj, stuck)
        proper = ~improper
        if improper.any():
            V[improper] = _infinite_sign(r[improper], "policy")
        idx = np.flatnonzero(proper & ~term)
        if idx.size:
            A = np.eye(idx.size) - P[np.ix_(idx, idx)]
            V[idx] = np.linalg.solve(A, r[idx])
    resid = np.abs(V[proper] - (r + mdp.gamma * _safe_dot(P, V))[proper])
    if resid.size and not np.all(resid <= tol * max(1.0, np.abs(V[proper]).max())):
        raise NonConvergenceError(f"policy evaluation residual {resid.max():.3e} exceeds tol {tol:.1e}")
    return V


def q_from_policy(mdp: TabularMdp, policy: TabularPolicy | None, V: np.ndarray) -> list[np.ndarray]:
    """``Q(s, a) = r(s, a) + gamma * sum_s' P(s'|s, a) V(s')`` as per-state arrays."""
    V = np.asarray(V, dtype=float)
    if V.shape != (mdp.n_states,):
        raise ValueError(f"V has shape {V.shape}, expected ({mdp.n_states},)")
    if policy is not None and policy.actions != mdp.actions:
        raise ValueError("policy action sets do not match the MDP")
    tab = mdp.table
    if mdp.gamma == 0.0:
        q = tab.r.copy()
    else:
        q = tab.r + mdp.gamma * _safe_dot(tab.P, V)
    return [q[tab.offsets[s]:tab.offsets[s + 1]] for s in range(mdp.n_states)]


def _greedy(mdp: TabularMdp, q_rows: np.ndarray, allowed: np.ndarray | None = None) -> list[int]:
    tab = mdp.table
    choice = []
    for s in range(mdp.n_states):
        lo, hi = tab.offsets[s], tab.offsets[s + 1]
        q = q_rows[lo:hi].copy()
        if allowed is not None and allowed[lo:hi].any():
            q[~allowed[lo:hi]] = -np.inf
        top = q.max()
        slack = _TIE_TOL * max(1.0, abs(top)) if np.isfinite(top) else 0.0
        cands = np.flatnonzero(q >= top - slack)
        choice.append(min(int(tab.row_action[lo + k]) for k in cands))
    return choice


def _prob0e(mdp: TabularMdp) -> np.ndarray:
    """States from which some policy avoids terminal states forever."""
    tab = mdp.table
    Z = ~mdp.terminal_mask
    while True:
        row_ok = ~(tab.P[:, ~Z] > 0).any(axis=1) & Z[tab.row_state]
        nZ = np.zeros_like(Z)
        np.logical_or.at(nZ, tab.row_state, row_ok)
        if np.array_equal(nZ, Z):
            return Z
        Z = nZ


def _prob1e(mdp: TabularMdp) -> np.ndarray:
    """States from which some policy reaches a terminal state almost surely."""
    tab = mdp.table
    term = mdp.terminal_mask
    U = np.ones(mdp.n_states, dtype=bool)
    while True:
        inside = ~(tab.P[:, ~U] > 0).any(axis=1)
        R = term.copy()
        while True:
            hits = (tab.P[:, R] > 0).any(axis=1)
            row_ok = inside & hits & U[tab.row_state]
            nR = R.copy()
            np.logical_or.at(nR, tab.row_state, row_ok)
            if np.array_equal(nR, R):
                break
            R = nR
        if np.array_equal(R, U):
            return U
        U = R


def _avoiding_policy(mdp: TabularMdp, Z: np.ndarray, escape: np.ndarray) -> dict[int, int]:
    """Actions that steer every state of ``escape`` into the trap set ``Z``."""
    tab = mdp.table
    choice: dict[int, int] = {}
    for s in np.flatnonzero(Z):
        lo, hi = tab.offsets[s], tab.offsets[s + 1]
        for k in range(lo, hi):
            if not (tab.P[k, ~Z] > 0).any():
                choice[int(s)] = int(tab.row_action[k])
                break
    layer = Z.copy()
    while len(choice) < escape.sum():
        grown = layer.copy()
        for s in np.flatnonzero(escape & ~layer):
            lo, hi = tab.offsets[s], tab.offsets[s + 1]
            for k in range(lo, hi):
                if mdp.terminal_mask[s]:
                    break
                if (tab.P[k, layer] > 0).any():
                    choice[int(s)] = int(tab.row_action[k])
                    grown[s] = True
                    break
        if np.array_equal(grown, layer):
            break
        layer = grown
    return choice


def value_iteration(mdp: TabularMdp, tol: float = DEFAULT_TOL, max_sweeps: int | None = None) -> tuple[np.ndarray, TabularPolicy]:
    """Optimal values and a deterministic greedy policy.

    Bellman sweeps bring the values close to optimal, then exact policy
    iteration finishes the job so the returned values are exactly those of
    the returned policy. Ties go to the lowest action id.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    tab = mdp.table
    n = mdp.n_states
    gamma = mdp.gamma
    term = mdp.terminal_mask
    if max_sweeps is None:
        max_sweeps = max(10 * n * n, 100_000)

    allowed = np.ones(len(tab.r), dtype=bool)
    fixed: dict[int, int] = {}
    V = np.zeros(n)
    active = np.ones(n, dtype=bool)
    if gamma == 1.0:
        nonterm_r = tab.r[~term[tab.row_state]]
        Z = _prob0e(mdp)
        if Z.any():
            if np.all(nonterm_r > 0):
                # the maximiser can keep collecting positive reward forever
                escape = _backward_reach(_any_edge(mdp), Z, allowed=~term)
                V[escape] = np.inf
                fixed = _avoiding_policy(mdp, Z, escape)
                active = ~escape
            elif np.all(nonterm_r < 0):
                good = _prob1e(mdp)
                V[~good] = -np.inf
                active = good
                allowed = ~(tab.P[:, ~good] > 0).any(axis=1)
            else:
                raise NonConvergenceError("gamma = 1 with non-terminating policies and mixed-sign rewards")

    rows = active[tab.row_state] & allowed
    sweep_tol = max(tol, 1e-7)
    for _ in range(max_sweeps):
        q = np.full(len(tab.r), -np.inf)
        q[rows] = tab.r[rows] + gamma * _safe_dot(tab.P[rows], V)
        best = np.full(n, -np.inf)
        np.maximum.at(best, tab.row_state, q)
        newV = V.copy()
        newV[active] = best[active]
        newV[term] = 0.0
        finite = np.isfinite(V) & np.isfinite(newV)
        delta = np.abs(newV[finite] - V[finite]).max(initial=0.0)
        V = newV
        if delta <= sweep_tol:
            break
    else:
        raise NonConvergenceError(f"value iteration did not converge in {max_sweeps} sweeps")

    def improve(V, choice):
        q_rows = _q_rows(mdp, V)
        q_rows[~allowed] = -np.inf
        out = list(choice)
        for s in np.flatnonzero(active):
            lo, hi = tab.offsets[s], tab.offsets[s + 1]
            q = q_rows[lo:hi]
            cur = q[mdp.action_index(s, choice[s])]
            top = q.max()
            slack = _TIE_TOL * max(1.0, abs(top)) if np.isfinite(top) else 0.0
            if top > cur + slack:
                k = np.flatnonzero(q >= top - slack)
                out[s] = min(mdp.actions[s][i] for i in k)
        return out

    choice = _greedy(mdp, _q_rows(mdp, V), allowed=allowed)
    choice = [fixed.get(s, a) for s, a in enumerate(choice)]
    for _ in range(10 * n + 10):
        V = policy_evaluation(mdp, TabularPolicy.deterministic(mdp.actions, choice), tol)
        new_choice = improve(V, choice)
        if new_choice == choice:
            break
        choice = new_choice
    else:
        raise NonConvergenceError("policy improvement did not stabilise")

    # canonical tie-break among actions optimal for the converged values
    final = _greedy(mdp, _q_rows(mdp, V), allowed=allowed)
    final = [fixed.get(s, a) for s, a in enumerate(final)]
    if final != choice:
        policy = TabularPolicy.deterministic(mdp.actions, final)
        V_final = policy_evaluation(mdp, policy, tol)
        scale = max(1.0, np.abs(V[np.isfinite(V)]).max(initial=1.0))
        same_inf = np.array_equal(np.isfinite(V_final), np.isfinite(V)) and np.array_equal(V_final[~np.isfinite(V_final)], V[~np.isfinite(V)])
        fin = np.isfinite(V)
        if same_inf and np.all(np.abs(V_final[fin] - V[fin]) <= tol * scale):
            return V_final, policy
    return V, TabularPolicy.deterministic(mdp.actions, choice)


def _any_edge(mdp: TabularMdp) -> np.ndarray:
    tab = mdp.table
    adj = np.zeros((mdp.n_states, mdp.n_states), dtype=bool)
    np.logical_or.at(adj, tab.row_state, tab.P > 0)
    return adj


def _q_rows(mdp: TabularMdp, V: np.ndarray) -> np.ndarray:
    tab = mdp.table
    return tab.r + mdp.gamma * _safe_dot(tab.P, V) if mdp.gamma > 0 else tab.r.copy()


def bellman_residual(mdp: TabularMdp, V: np.ndarray, policy: TabularPolicy | None = None) -> float:
    """``||V - T V||_inf`` (``T`` optimal when ``policy`` is None), over finite entries."""
    if policy is None:
        q = _q_rows(mdp, V)
        TV = np.full(mdp.n_states, -np.inf)
        np.maximum.at(TV, mdp.table.row_state, q)
    else:
        P, r = _chain(mdp, policy)
        TV = r + mdp.gamma * _safe_dot(P, V)
    finite = np.isfinite(V) & np.isfinite(TV)
    if np.any(np.isfinite(V) != np.isfinite(TV)):
        return np.inf
    return float(np.abs(V[finite] - TV[finite]).max(initial=0.0))


def tv_distance(p: Sequence[float], q: Sequence[float]) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


# ---------------------------------------------------------------------------
# text format


def dump_mdp(mdp: TabularMdp) -> str:
    lines = [f"mdp {mdp.n_states} {mdp.gamma!r}"]
    for s, acts in enumerate(mdp.actions):
        for a in acts:
            for t, p in mdp.transition[s, a]:
                lines.append(f"t {s} {a} {t} {p!r}")
            lines.append(f"r {s} {a} {float(mdp.reward[s, a])!r}")
    for s, p in enumerate(mdp.initial_dist):
        if p > 0:
            lines.append(f"p0 {s} {float(p)!r}")
    for s in sorted(mdp.terminal):
        lines.append(f"terminal {s}")
    return "\n".join(lines) + "\n"


def load_mdp(text: str) -> TabularMdp:
    trans: dict[tuple[int, int], list[tuple[int, float]]] = {}
    reward: dict[tuple[int, int], float] = {}
    terminal: set[int] = set()
    n = gamma = None
    p0 = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        kind = parts[0]
        try:
            if kind == "mdp":
                n, gamma = int(parts[1]), float(parts[2])
                p0 = np.zeros(n)
            elif kind == "t":
                s, a, t = int(parts[1]), int(parts[2]), int(parts[3])
                trans.setdefault((s, a), []).append((t, float(parts[4])))
            elif kind == "r":
                reward[int(parts[1]), int(parts[2])] = float(parts[3])
            elif kind == "p0":
                p0[int(parts[1])] = float(parts[2])
            elif kind == "terminal":
                terminal.add(int(parts[1]))
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (IndexError, TypeError) as exc:
            raise ValueError(f"line {lineno}: malformed record {raw!r}") from exc
    if n is None:
        raise ValueError("missing 'mdp' header")
    actions = [sorted({a for (s2, a) in trans if s2 == s}) for s in range(n)]
    return TabularMdp(
        n_states=n,
        actions=tuple(tuple(a) for a in actions),
        transition={k: tuple(v) for k, v in trans.items()},
        reward=reward,
        initial_dist=p0,
        gamma=gamma,
        terminal=frozenset(terminal),
    )


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float, branching: int = 3) -> TabularMdp:
    """Random dense-ish MDP with a shared action set, used by the property tests."""
    trans, reward = {}, {}
    for s in range(n_states):
        for a in range(n_actions):
            k = int(min(branching, n_states))
            nxt = rng.choice(n_states, size=k, replace=False)
            p = rng.dirichlet(np.ones(k))
            trans[s, a] = tuple((int(t), float(q)) for t, q in zip(nxt, p))
            reward[s, a] = float(rng.uniform(-1, 1))
    p0 = rng.dirichlet(np.ones(n_states))
    return TabularMdp(n_states, tuple(tuple(range(n_actions)) for _ in range(n_states)), trans, reward, p0, gamma)


def random_policy(rng: np.random.Generator, mdp: TabularMdp, deterministic: bool = False) -> TabularPolicy:
    if deterministic:
        return TabularPolicy.deterministic(mdp.actions, [int(rng.choice(a)) for a in mdp.actions])
    return TabularPolicy(mdp.actions, tuple(rng.dirichlet(np.ones(len(a))) for a in mdp.actions))
