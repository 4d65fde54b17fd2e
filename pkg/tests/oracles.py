"""Independent reference computations used as test oracles.

Nothing here calls the package's solvers: values come from dense linear
algebra, plain Bellman iteration, breadth-first search or trajectory
following.
"""
import itertools
from collections import deque

import numpy as np


def dense(mdp):
    """``P[s, a, s']`` and ``R[s, a]`` with actions indexed by position."""
    k = max(len(a) for a in mdp.actions)
    P = np.zeros((mdp.n_states, k, mdp.n_states))
    R = np.zeros((mdp.n_states, k))
    for s in range(mdp.n_states):
        for i, a in enumerate(mdp.actions[s]):
            for t, p in mdp.transition[s, a]:
                P[s, i, t] += p
            R[s, i] = mdp.reward[s, a]
    return P, R


def evaluate(mdp, probs):
    """Discounted ``V`` for per-state action probabilities (``gamma < 1``)."""
    P, R = dense(mdp)
    n = mdp.n_states
    Ppi = np.zeros((n, n))
    rpi = np.zeros(n)
    for s in range(n):
        for i in range(len(mdp.actions[s])):
            Ppi[s] += probs[s][i] * P[s, i]
            rpi[s] += probs[s][i] * R[s, i]
    return np.linalg.solve(np.eye(n) - mdp.gamma * Ppi, rpi)


def bellman_optimal(mdp, sweeps=5000):
    P, R = dense(mdp)
    V = np.zeros(mdp.n_states)
    for _ in range(sweeps):
        Q = R + mdp.gamma * P @ V
        Q = np.where(_mask(mdp), Q, -np.inf)
        V = Q.max(axis=1)
    return V


def _mask(mdp):
    k = max(len(a) for a in mdp.actions)
    m = np.zeros((mdp.n_states, k), dtype=bool)
    for s in range(mdp.n_states):
        m[s, : len(mdp.actions[s])] = True
    return m


def grid_bfs_distance(width, height, goals):
    """Steps to the nearest goal cell."""
    dist = {g: 0 for g in goals}
    q = deque(goals)
    while q:
        s = q.popleft()
        r, c = divmod(s, width)
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < height and 0 <= cc < width and rr * width + cc not in dist:
                dist[rr * width + cc] = dist[s] + 1
                q.append(rr * width + cc)
    return np.array([dist[s] for s in range(width * height)], dtype=float)


def follow_deterministic(mdp, action_at, start):
    """Undiscounted return of a deterministic chain; ``-inf`` if it never terminates."""
    s, total, seen = start, 0.0, set()
    while s not in mdp.terminal:
        if s in seen:
            return -np.inf
        seen.add(s)
        a = action_at(s)
        (t, _), = mdp.transition[s, a]
        total += mdp.reward[s, a]
        s = t
    return total


def l1_ball(width, height, eps):
    out = []
    for s in range(width * height):
        r, c = divmod(s, width)
        out.append([t for t in range(width * height)
                    if abs(divmod(t, width)[0] - r) + abs(divmod(t, width)[1] - c) <= eps])
    return out


def all_attacks(neighbors, fixed=()):
    """Every deterministic ``chi`` with ``chi[s]`` in ``neighbors[s]``; states in
    ``fixed`` map to themselves."""
    choices = [[s] if s in fixed else list(nb) for s, nb in enumerate(neighbors)]
    for combo in itertools.product(*choices):
        yield np.array(combo)


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))
