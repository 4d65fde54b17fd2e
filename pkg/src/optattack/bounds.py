"""Smoothness of a policy and how much an observation attack can cost it.

For a policy ``pi`` and radius ``epsilon`` the per-state smoothness is

    alpha(s) = max_{s_bar in ball(s)} TV(pi(.|s), pi(.|s_bar))

and any feasible attack satisfies

    ||V^pi - V^{pi o chi}||_inf <= 2 ||alpha||_inf / (1 - gamma) * (R + gamma ||V^pi||_inf).

If ``pi`` is ``L``-Lipschitz in TV, ``alpha <= L * epsilon`` gives the
Lipschitz form of the same bound.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .attack_mdp import norm_order, perturbed_policy
from .mdp import TabularMdp, TabularPolicy, policy_evaluation, tv_distance


@dataclass
class SmoothnessProfile:
    alpha: np.ndarray
    samples: int | None = None  # None: exact maximum over a finite ball
    seed: int | None = None
    lipschitz: float | None = None
    dbar: np.ndarray | None = None

    @property
    def sup(self) -> float:
        return float(np.max(self.alpha)) if len(self.alpha) else 0.0

    @property
    def is_lower_bound(self) -> bool:
        return self.samples is not None


def alpha_tabular(policy: TabularPolicy, neighbors: Sequence[Sequence[int]]) -> SmoothnessProfile:
    """Exact ``alpha`` over enumerable perturbation sets."""
    out = np.zeros(policy.n_states)
    for s in range(policy.n_states):
        p = policy.dist(s)
        out[s] = max((tv_distance(p, policy.dist(sb)) for sb in neighbors[s]), default=0.0)
    return SmoothnessProfile(out)


def sample_ball(rng: np.random.Generator, center: np.ndarray, epsilon: float, norm: str, n: int) -> np.ndarray:
    """``n`` points uniform in the ``epsilon``-ball around ``center``, clamped to ``[0, 1]``."""
    center = np.asarray(center, dtype=float)
    d = center.shape[-1]
    order = norm_order(norm)
    if order == 2:
        u = rng.standard_normal((n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        pts = u * (rng.random((n, 1)) ** (1.0 / d)) * epsilon
    elif order == np.inf:
        pts = rng.uniform(-epsilon, epsilon, size=(n, d))
    else:
        e = rng.exponential(size=(n, d + 1))
        pts = e[:, :d] / e.sum(axis=1, keepdims=True) * epsilon
        pts *= rng.choice([-1.0, 1.0], size=(n, d))
    return np.clip(center + pts, 0.0, 1.0)


def alpha_sampled(prob_fn: Callable[[np.ndarray], np.ndarray], states: np.ndarray, epsilon: float, norm: str = "l2",
                  samples: int = 64, seed: int = 0) -> SmoothnessProfile:
    """Sampled lower bound on ``alpha`` at each row of ``states``.

    ``prob_fn`` maps a batch of observations to action distributions.
    """
    rng = np.random.default_rng(seed)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    out = np.zeros(len(states))
    if epsilon == 0:
        return SmoothnessProfile(out, samples, seed)
    for i, s in enumerate(states):
        p = prob_fn(s[None, :])[0]
        q = prob_fn(sample_ball(rng, s, epsilon, norm, samples))
        out[i] = float(0.5 * np.abs(q - p).sum(axis=1).max())
    return SmoothnessProfile(out, samples, seed)


def impact_bound_value(alpha_sup: float, reward_bound: float, v_inf: float, gamma: float) -> float:
    if not 0 <= gamma < 1:
        raise ValueError("the attack-impact bound needs gamma < 1")
    return 2.0 * alpha_sup / (1.0 - gamma) * (reward_bound + gamma * v_inf)


def impact_bound(policy: TabularPolicy, mdp: TabularMdp, neighbors: Sequence[Sequence[int]]) -> float:
    """Right-hand side of the attack-impact bound for a tabular policy."""
    if mdp.gamma >= 1:
        raise ValueError("the attack-impact bound is undefined for gamma = 1")
    v = policy_evaluation(mdp, policy)
    return impact_bound_value(alpha_tabular(policy, neighbors).sup, mdp.reward_bound, float(np.abs(v).max()), mdp.gamma)


def lipschitz_bound(L: float, epsilon: float, reward_bound: float, v_inf: float, gamma: float) -> float:
    if L < 0:
        raise ValueError("L must be non-negative")
    return impact_bound_value(L * epsilon, reward_bound, v_inf, gamma)


def lipschitz_bound_dbar(L: float, dbar: Sequence[float], reward_bound: float, v_inf: float, gamma: float) -> float:
    """Same bound with ``epsilon`` replaced by the largest realised distance ``d(s, chi(s))``."""
    return lipschitz_bound(L, float(np.max(dbar)) if len(dbar) else 0.0, reward_bound, v_inf, gamma)


def attack_distances(chi, dist: np.ndarray) -> np.ndarray:
    """``d(s, chi(s))`` for every state."""
    chi = np.asarray(getattr(chi, "chi", chi), dtype=int)
    return np.asarray(dist, dtype=float)[np.arange(len(chi)), chi]


def estimate_lipschitz(prob_fn: Callable[[np.ndarray], np.ndarray], points: np.ndarray, norm: str = "l2",
                       pairs: int = 2000, seed: int = 0) -> float:
    """Largest ``TV(pi(s), pi(s')) / d(s, s')`` over random pairs of ``points``.

    An empirical estimate that can only under-state the true constant.
    """
    rng = np.random.default_rng(seed)
    points = np.asarray(points, dtype=float)
    i = rng.integers(len(points), size=pairs)
    j = rng.integers(len(points), size=pairs)
    d = np.linalg.norm(points[i] - points[j], ord=norm_order(norm), axis=1)
    keep = d > 0
    if not np.any(keep):
        return 0.0
    p, q = prob_fn(points[i[keep]]), prob_fn(points[j[keep]])
    return float((0.5 * np.abs(p - q).sum(axis=1) / d[keep]).max())


def empirical_gap(mdp: TabularMdp, policy: TabularPolicy, chi) -> float:
    """``||V^pi - V^{pi o chi}||_inf``."""
    v = policy_evaluation(mdp, policy)
    va = policy_evaluation(mdp, perturbed_policy(policy, chi))
    same = np.isinf(v) & (v == va)
    with np.errstate(invalid="ignore"):
        g = np.abs(v - va)
    g[same] = 0.0
    return float(np.nan_to_num(g, nan=np.inf).max())


def tv_expectation_check(x_values, f1, f2, tol: float = 1e-12) -> tuple[float, float, bool]:
    """``|E_f1 X - E_f2 X| <= 2 ||X||_inf TV(f1, f2)``; returns ``(lhs, rhs, holds)``."""
    x = np.asarray(x_values, dtype=float)
    f1, f2 = np.asarray(f1, dtype=float), np.asarray(f2, dtype=float)
    if not (len(x) == len(f1) == len(f2)):
        raise ValueError("values and distributions must have equal length")
    lhs = float(abs(x @ f1 - x @ f2))
    rhs = float(2.0 * np.abs(x).max(initial=0.0) * tv_distance(f1, f2))
    return lhs, rhs, lhs <= rhs + tol
