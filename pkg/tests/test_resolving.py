import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabresolve.abstraction import abstract_key, lift_policy
from tabresolve.experiments import PipelineConfig, build_bundle
from tabresolve.games import GameSpec, make_game
from tabresolve.resolving import (GADGET, TERMINATE, Agent, PolicyAgent, Resolver, ResolverAgent,
                                  UniformAgent, compose_strategy, play_episode, play_match)
from tabresolve.solver import exploitability, solve_game
from tabresolve.valuation import build_blueprint
from tabresolve.view import DECISION


@pytest.fixture(scope="module")
def lossy_bundle():
    bundle, _ = build_bundle(PipelineConfig(game="goofspiel:4", kind="legal", L=1,
                                            trajectories=300, seed=0, iterations=100,
                                            blueprint_iterations=200))
    return bundle


def test_root_solve_covers_root_infoset(gs4_identity_bundle):
    for p in (0, 1):
        state = Resolver(gs4_identity_bundle, p).root_state()
        assert list(state.solution.root_policy[p]) == [0]
        assert state.own_reach == {0: 1.0}


def test_root_solve_is_deterministic(gs4_identity_bundle):
    a = Resolver(gs4_identity_bundle, 0, iterations=200).root_state()
    b = Resolver(gs4_identity_bundle, 0, iterations=200).root_state()
    assert a.solution.root_policy[0][0].tobytes() == b.solution.root_policy[0][0].tobytes()


def test_full_depth_root_solve_is_equilibrium(gs4, gs4_identity_bundle):
    res = Resolver(gs4_identity_bundle, 0, depth=3)
    sol = res.root_state().solution
    lifted = []
    for p in (0, 1):
        abstract = {abstract_key(k[1], k[3]): v[:4] for k, v in sol.policy[p].items()
                    if k[0] != GADGET}
        lifted.append(lift_policy(abstract, gs4_identity_bundle.amap, gs4, p))
    direct = exploitability(gs4, solve_game(gs4, 1000).profile)
    assert exploitability(gs4, lifted) <= direct + 2e-2


def _state_after(res, bundle, actions):
    game = make_game(bundle.spec)
    state = res.root_state()
    gstate = game.new_game()
    for joint in actions:
        step = game.apply(gstate, joint)
        state = res.state_at(game.public_state_key(step.state), state)
        gstate = step.state
    return state, gstate


def test_terminate_payoffs_equal_stored_cfvs(gs4_identity_bundle):
    for me in (0, 1):
        res = Resolver(gs4_identity_bundle, me)
        state, _ = _state_after(res, gs4_identity_bundle, [(3, 0)])
        assert state.cfvs
        opp = 1 - me
        view, _ = res._build_gadget(state)
        seen = 0
        for node in np.flatnonzero(view.kind == DECISION):
            i = view.iset[opp, node]
            if i < 0 or view.infoset_keys[opp][i][0] != GADGET:
                continue
            j = view.infoset_keys[opp][i][3]
            for e in np.flatnonzero(view.e_parent == node):
                if view.e_act[opp, e] == TERMINATE:
                    expected = state.cfvs[j] if opp == 0 else -state.cfvs[j]
                    assert view.e_reward[e] == expected
                    seen += 1
        assert seen == len(state.cfvs)
        # the weighting root is a distribution
        root = view.roots[0]
        w = view.e_weight[view.e_parent == root]
        assert w.sum() == pytest.approx(1.0)


def test_own_reach_is_product_of_own_policy(gs4_identity_bundle):
    bundle = gs4_identity_bundle
    res = Resolver(bundle, 0)
    path = [(3, 0), (0, 2)]
    state = res.root_state()
    game = make_game(bundle.spec)
    gstate = game.new_game()
    expected = 1.0
    for joint in path:
        b = bundle.amap.get(state.pub, game.infoset_key(gstate, 0))
        expected *= state.solution.root_policy[0][b][joint[0]]
        step = game.apply(gstate, joint)
        state = res.state_at(game.public_state_key(step.state), state)
        gstate = step.state
        b_new = bundle.amap.get(state.pub, game.infoset_key(gstate, 0))
        assert state.own_reach[b_new] == pytest.approx(expected, rel=1e-12)


def test_opponent_only_information_keeps_own_reach(gs4_identity_bundle):
    # P2 learns nothing about P1's hidden card from a P1 win beyond the public
    # outcome; P1's reach for its own infoset is its own policy probability
    bundle = gs4_identity_bundle
    res = Resolver(bundle, 0)
    a, _ = _state_after(res, bundle, [(3, 0)])
    b, _ = _state_after(res, bundle, [(3, 1)])
    assert a is b                       # same public state, same cached solve
    assert a.own_reach == b.own_reach


class FixedPolicyState:
    def __init__(self, pub, vec):
        self.pub = pub
        self.fallback = False
        self.solution = type("S", (), {"root_policy": ({0: np.asarray(vec)}, {0: np.asarray(vec)})})()


def test_act_follows_abstract_policy(gs4_identity_bundle):
    res = Resolver(gs4_identity_bundle, 0)
    game = make_game(gs4_identity_bundle.spec)
    key = game.infoset_key(game.new_game(), 0)
    dist, fell = res.distribution(FixedPolicyState(b"", [0, 0, 1, 0]), key)
    assert not fell
    np.testing.assert_array_equal(dist, [0, 0, 1, 0])
    # abstract mass on an illegal card is renormalised away
    state = game.replay([(1, 0)])
    key2 = game.infoset_key(state, 0)
    pub = game.public_state_key(state)
    b = gs4_identity_bundle.amap.get(pub, key2)
    st_ = FixedPolicyState(pub, [0.5, 0.5, 0, 0])
    st_.solution.root_policy[0][b] = np.array([0.5, 0.5, 0, 0])
    dist, _ = res.distribution(st_, key2)
    np.testing.assert_array_equal(dist, [1, 0, 0, 0])
    with pytest.raises(ValueError):
        res.distribution(FixedPolicyState(b"", [1, 0, 0, 0]), key2)


def test_sampling_frequencies(gs4_identity_bundle):
    agent = ResolverAgent(gs4_identity_bundle)
    agent.start_episode(gs4_identity_bundle.spec, 0, np.random.default_rng(5))
    agent.state = FixedPolicyState(b"", [1 / 3, 2 / 3, 0, 0])
    game = make_game(gs4_identity_bundle.spec)
    key = game.infoset_key(game.new_game(), 0)
    n = 10_000
    picks = np.array([agent.act(key, (0, 1, 2, 3)) for _ in range(n)])
    k = np.count_nonzero(picks == 1)
    assert abs(k / n - 2 / 3) <= 3 * np.sqrt(2 / 9 / n)
    assert set(np.unique(picks)) <= {0, 1}


def test_identity_resolving_composes_low_exploitability(gs4, gs4_identity_bundle):
    ex = exploitability(gs4, compose_strategy(gs4_identity_bundle))
    assert ex <= 0.1
    assert ex <= exploitability(gs4, ({}, {}))


def test_lossy_bundle_falls_back_but_stays_legal(lossy_bundle):
    prof = compose_strategy(lossy_bundle)
    spec = lossy_bundle.spec
    game = make_game(spec)
    for p in (0, 1):
        for key, vec in prof[p].items():
            legal = np.zeros(spec.num_actions, dtype=bool)
            legal[list(game.legal_from_infoset(key))] = True
            assert vec.sum() == pytest.approx(1.0) and np.all(vec[~legal] == 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_resolver_always_plays_legal(lossy_bundle, seed):
    agents = [ResolverAgent(lossy_bundle), UniformAgent()]
    rngs = [np.random.default_rng([seed, s]) for s in (0, 1)]
    play_episode(lossy_bundle.spec, agents, rngs)
    play_episode(lossy_bundle.spec, agents[::-1], rngs)


def test_self_play_is_balanced():
    spec = GameSpec.parse("goofspiel:4")
    rep = play_match(UniformAgent(), UniformAgent(), spec, 4000, seed=3)
    assert abs(rep.mean_reward) <= rep.reward_2sigma
    assert rep.wins + rep.draws + rep.losses == 4000
    assert rep.win_rate_2sigma == pytest.approx(2 * np.sqrt(rep.win_rate * (1 - rep.win_rate) / 4000))


def test_blueprint_beats_uniform(gs4):
    bp = build_blueprint(gs4, 4000)
    rep = play_match(PolicyAgent(bp), UniformAgent(), gs4, 10_000, seed=0)
    assert rep.mean_reward - rep.reward_2sigma > 0


def test_match_is_deterministic_and_logged(gs4):
    a = play_match(UniformAgent(), UniformAgent(), gs4, 50, seed=9)
    b = play_match(UniformAgent(), UniformAgent(), gs4, 50, seed=9)
    assert a.rows == b.rows
    buf = io.StringIO()
    a.write_log(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].startswith("# schema=match-log/1")
    assert lines[1] == "episode,seed,seat_a,outcome_a,reward_a,fallbacks_a,fallbacks_b"
    assert len(lines) == 52
    assert [r["seat_a"] for r in a.rows[:4]] == [0, 1, 0, 1]


def test_match_rejects_shared_agent_and_bad_counts(gs4):
    agent = UniformAgent()
    with pytest.raises(ValueError):
        play_match(agent, agent, gs4, 1, 0)
    with pytest.raises(ValueError):
        play_match(UniformAgent(), UniformAgent(), gs4, 0, 0)


class Cheater(Agent):
    name = "cheater"

    def act(self, key, legal):
        return 99


def test_agent_fault_aborts_match(gs4):
    with pytest.raises(RuntimeError, match="cheater played illegal action"):
        play_match(Cheater(), UniformAgent(), gs4, 3, 0)


def test_resolver_agent_rejects_other_game(gs4_identity_bundle):
    agent = ResolverAgent(gs4_identity_bundle)
    with pytest.raises(ValueError):
        agent.start_episode(GameSpec.parse("goofspiel:3"), 0, np.random.default_rng(0))
