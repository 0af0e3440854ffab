"""Independent reference computations used to pin expected values.

They walk the rules engine directly with plain recursion and share no code
with the flat-array solver.
"""
from __future__ import annotations

from collections import defaultdict

import numpy as np

from tabresolve.games import GameSpec, make_game


def histories(spec: GameSpec):
    """All non-terminal states as ``(state, joint-action history)``, depth order."""
    game = make_game(spec)
    out = []
    frontier = [(game.new_game(), ())]
    while frontier:
        nxt = []
        for state, hist in frontier:
            if state.terminal:
                continue
            out.append((state, hist))
            for a1 in game.legal_actions(state, 0):
                for a2 in game.legal_actions(state, 1):
                    nxt.append((game.apply(state, (a1, a2)).state, hist + ((a1, a2),)))
        frontier = nxt
    return out


def _dist(policy, key, legal, A):
    vec = policy.get(key) if policy is not None else None
    out = np.zeros(A)
    if vec is None:
        out[list(legal)] = 1.0 / len(legal)
    else:
        out[list(legal)] = np.asarray(vec)[list(legal)]
        out /= out.sum()
    return out


def brute_best_response(spec: GameSpec, fixed, responder: int) -> float:
    """Best-response value for ``responder`` (in its own payoff units).

    Works infoset by infoset from the deepest round up: each responder
    infoset picks the action maximising the opponent-reach-weighted sum of
    continuation values over its member histories.
    """
    game = make_game(spec)
    A = spec.num_actions
    opp = 1 - responder
    sign = 1.0 if responder == 0 else -1.0

    def walk(state, reach):
        # returns list of (state, opponent reach) for all decision histories
        yield state, reach
        dist = _dist(fixed, game.infoset_key(state, opp), game.legal_actions(state, opp), A)
        for a_r in game.legal_actions(state, responder):
            for a_o in game.legal_actions(state, opp):
                if dist[a_o] == 0:
                    continue
                joint = (a_r, a_o) if responder == 0 else (a_o, a_r)
                nxt = game.apply(state, joint).state
                if not nxt.terminal:
                    yield from walk(nxt, reach * dist[a_o])

    nodes = list(walk(game.new_game(), 1.0))
    by_iset = defaultdict(list)
    for state, reach in nodes:
        by_iset[game.infoset_key(state, responder)].append((state, reach))
    choice: dict = {}
    memo: dict = {}

    def value(state):
        # responder's value of ``state`` when it follows ``choice`` below
        if state.terminal:
            return 0.0
        key = (state.payload, state.moves, state.public_obs, state.private_obs)
        if key in memo:
            return memo[key]
        a_r = choice[game.infoset_key(state, responder)]
        dist = _dist(fixed, game.infoset_key(state, opp), game.legal_actions(state, opp), A)
        v = 0.0
        for a_o in np.flatnonzero(dist):
            joint = (a_r, int(a_o)) if responder == 0 else (int(a_o), a_r)
            step = game.apply(state, joint)
            v += dist[a_o] * (sign * step.reward + value(step.state))
        memo[key] = v
        return v

    order = sorted(by_iset, key=lambda k: -len(k.data))
    for key in order:
        members = by_iset[key]
        legal = game.legal_actions(members[0][0], responder)
        best, best_a = -np.inf, legal[0]
        for a_r in legal:
            total = 0.0
            for state, reach in members:
                dist = _dist(fixed, game.infoset_key(state, opp), game.legal_actions(state, opp), A)
                for a_o in np.flatnonzero(dist):
                    joint = (a_r, int(a_o)) if responder == 0 else (int(a_o), a_r)
                    step = game.apply(state, joint)
                    total += reach * dist[a_o] * (sign * step.reward + value(step.state))
            if total > best + 1e-12:
                best, best_a = total, a_r
        choice[key] = best_a
    return value(game.new_game())


def brute_exploitability(spec: GameSpec, profile) -> float:
    return 0.5 * (brute_best_response(spec, profile[1], 0) + brute_best_response(spec, profile[0], 1))


def monte_carlo_value(spec: GameSpec, profile, rollouts: int, seed: int) -> tuple[float, float]:
    """Mean and standard error of player 1's return by sampling play.

    Rollouts advance in lockstep; those sharing a state sample together.
    """
    game = make_game(spec)
    A = spec.num_actions
    rng = np.random.default_rng(seed)
    states = [game.new_game()]
    at = np.zeros(rollouts, dtype=np.int64)
    total = np.zeros(rollouts)
    while True:
        live = [i for i, st in enumerate(states) if not st.terminal]
        if not live:
            break
        new_states: list = []
        index: dict = {}
        new_at = np.empty_like(at)
        for i, st in enumerate(states):
            sel = np.flatnonzero(at == i)
            if len(sel) == 0:
                continue
            if st.terminal:
                key = ("T", i)
                j = index.setdefault(key, len(new_states))
                if j == len(new_states):
                    new_states.append(st)
                new_at[sel] = j
                continue
            acts = []
            for p in (0, 1):
                d = _dist(profile[p], game.infoset_key(st, p), game.legal_actions(st, p), A)
                acts.append(rng.choice(A, size=len(sel), p=d))
            joint = acts[0] * A + acts[1]
            for code in np.unique(joint):
                step = game.apply(st, (int(code // A), int(code % A)))
                rows = sel[joint == code]
                total[rows] += step.reward
                j = len(new_states)
                new_states.append(step.state)
                new_at[rows] = j
        states, at = new_states, new_at
    return float(total.mean()), float(total.std(ddof=1) / np.sqrt(rollouts))


def matrix_game_value(M) -> float:
    """Value of a zero-sum matrix game (row player maximises) by support enumeration."""
    import itertools

    M = np.asarray(M, dtype=float)
    m, n = M.shape
    best = None
    for k in range(1, min(m, n) + 1):
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.combinations(range(n), k):
                sub = M[np.ix_(rows, cols)]
                # row mix x makes every support column pay v; column mix y likewise
                a = np.block([[sub.T, -np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
                rhs = np.r_[np.zeros(k), 1.0]
                try:
                    xs = np.linalg.solve(a, rhs)
                    b = np.block([[sub, -np.ones((k, 1))], [np.ones((1, k)), np.zeros((1, 1))]])
                    ys = np.linalg.solve(b, rhs)
                except np.linalg.LinAlgError:
                    continue
                x, v = xs[:k], xs[k]
                y = ys[:k]
                if x.min() < -1e-12 or y.min() < -1e-12:
                    continue
                fx = np.zeros(m)
                fx[list(rows)] = x
                fy = np.zeros(n)
                fy[list(cols)] = y
                if (fx @ M).min() >= v - 1e-9 and (M @ fy).max() <= v + 1e-9:
                    return float(v)
    raise ValueError("no equilibrium found")
