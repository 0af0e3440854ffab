"""Rules engines for two-player zero-sum simultaneous-move games without chance.

Two games are provided:

* Imperfect-information Goofspiel N: cards 1..N, prizes revealed from N down
  to 1.  Only the round outcome is public; on a draw both bids are public.
  The final round (one card left in each hand) is forced, so it is resolved
  inside the transition of the last decision round.
* Imperfect-information Oshi-Zumo K,N: board of 2K+1 cells, N coins each,
  at most N rounds.  Bids are secret and only the fighter's position is
  public.  The higher bidder pushes the fighter one cell towards the
  opponent and pays its bid; on a tie nobody moves or pays.  A player
  holding coins must bid at least ``min_bid``.

Actions are 0-based indices into a per-game alphabet: Goofspiel index ``k``
is card ``k + 1``; Oshi-Zumo index ``b`` is a bid of ``b`` coins.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import NamedTuple

GOOFSPIEL = "goofspiel"
OSHIZUMO = "oshizumo"

PublicStateKey = bytes


class InfosetKey(NamedTuple):
    player: int
    data: bytes

    def hex(self) -> str:
        return self.data.hex()


class GameError(ValueError):
    pass


class IllegalActionError(GameError):
    def __init__(self, player: int, action: int):
        super().__init__(f"illegal action {action} for player {player}")
        self.player = player
        self.action = action


@dataclass(frozen=True)
class GameSpec:
    kind: str
    n: int
    k: int = 0
    min_bid: int = 1

    def __post_init__(self):
        if self.kind not in (GOOFSPIEL, OSHIZUMO):
            raise GameError(f"unknown game kind {self.kind!r}")
        if self.n < 2:
            raise GameError("N must be at least 2")
        if self.kind == OSHIZUMO and self.k < 1:
            raise GameError("K must be at least 1")
        if self.n > 200 or self.k > 100:
            raise GameError("parameters too large for the byte encoding")

    @classmethod
    def parse(cls, text: str) -> "GameSpec":
        """Parse ``goofspiel:<N>`` or ``oshizumo:<K>,<N>``."""
        try:
            name, _, args = text.strip().partition(":")
            values = [int(v) for v in args.split(",")]
        except ValueError as exc:
            raise GameError(f"bad game spec {text!r}") from exc
        name = name.lower()
        if name == GOOFSPIEL and len(values) == 1:
            return cls(GOOFSPIEL, values[0])
        if name == OSHIZUMO and len(values) in (2, 3):
            return cls(OSHIZUMO, values[1], values[0], *values[2:])
        raise GameError(f"bad game spec {text!r}")

    def __str__(self) -> str:
        if self.kind == GOOFSPIEL:
            return f"goofspiel:{self.n}"
        suffix = "" if self.min_bid == 1 else f",{self.min_bid}"
        return f"oshizumo:{self.k},{self.n}{suffix}"

    @property
    def num_actions(self) -> int:
        """Size of each player's action alphabet."""
        return self.n if self.kind == GOOFSPIEL else self.n + 1

    @property
    def max_rounds(self) -> int:
        """Maximum number of decision rounds (joint-action steps)."""
        return self.n - 1 if self.kind == GOOFSPIEL else self.n

    def payoff_bounds(self) -> tuple[float, float]:
        if self.kind == GOOFSPIEL:
            total = self.n * (self.n + 1) / 2
            return -total, total
        return -1.0, 1.0


@dataclass(frozen=True)
class GameState:
    """A world state plus the observation history that produced it.

    ``payload`` is game specific: Goofspiel keeps the two hands as bitmasks,
    Oshi-Zumo keeps ``(coins1, coins2, position)``.
    """

    payload: tuple
    moves: int = 0
    terminal: bool = False
    reward: float = 0.0
    public_obs: tuple = ()
    private_obs: tuple = ((), ())


class Step(NamedTuple):
    state: GameState
    reward: float
    public_obs: tuple
    private_obs: tuple


def encode_step(values) -> bytes:
    values = tuple(values)
    if any(v < 0 or v > 255 for v in values):
        raise GameError(f"observation {values} out of byte range")
    return bytes((len(values), *values))


def encode_sequence(steps) -> bytes:
    return b"".join(encode_step(s) for s in steps)


def decode_sequence(data: bytes) -> list[tuple[int, ...]]:
    out = []
    i = 0
    while i < len(data):
        n = data[i]
        out.append(tuple(data[i + 1:i + 1 + n]))
        i += n + 1
    return out


def extend_public_key(pub: PublicStateKey, public_obs) -> PublicStateKey:
    return pub + encode_step(public_obs)


class Game:
    """Immutable rules engine bound to one :class:`GameSpec`."""

    def __init__(self, spec: GameSpec):
        self.spec = spec
        self.num_actions = spec.num_actions

    def new_game(self) -> GameState:
        raise NotImplementedError

    def legal_actions(self, state: GameState, player: int) -> tuple[int, ...]:
        raise NotImplementedError

    def _transition(self, state: GameState, a1: int, a2: int):
        """Return ``(payload, reward, terminal, public_obs)``."""
        raise NotImplementedError

    def legal_from_infoset(self, key: InfosetKey) -> tuple[int, ...]:
        raise NotImplementedError

    def apply(self, state: GameState, action) -> Step:
        if state.terminal:
            raise GameError("cannot act in a terminal state")
        a1, a2 = action
        for player, a in ((0, a1), (1, a2)):
            if a not in self.legal_actions(state, player):
                raise IllegalActionError(player, a)
        payload, reward, terminal, pub_obs = self._transition(state, a1, a2)
        private = ((a1,), (a2,))
        nxt = GameState(
            payload=payload,
            moves=state.moves + 1,
            terminal=terminal,
            reward=state.reward + reward,
            public_obs=state.public_obs + (pub_obs,),
            private_obs=(state.private_obs[0] + private[0], state.private_obs[1] + private[1]),
        )
        return Step(nxt, reward, pub_obs, private)

    def public_state_key(self, state: GameState) -> PublicStateKey:
        return encode_sequence(state.public_obs)

    def infoset_key(self, state: GameState, player: int) -> InfosetKey:
        own = state.private_obs[player]
        steps = (pub + (a,) for pub, a in zip(state.public_obs, own))
        return InfosetKey(player, encode_sequence(steps))

    def decode_infoset(self, key: InfosetKey) -> tuple[list[tuple], list[int]]:
        """Split an infoset key into (public observations, own actions)."""
        steps = decode_sequence(key.data)
        return [s[:-1] for s in steps], [s[-1] for s in steps]

    def public_key_of(self, key: InfosetKey) -> PublicStateKey:
        pubs, _ = self.decode_infoset(key)
        return encode_sequence(pubs)

    def replay(self, actions) -> GameState:
        state = self.new_game()
        for a in actions:
            state = self.apply(state, a).state
        return state


class Goofspiel(Game):
    DRAW, P1_WINS, P2_WINS = 0, 1, 2

    def new_game(self) -> GameState:
        full = (1 << self.spec.n) - 1
        return GameState(payload=(full, full))

    def next_prize(self, state: GameState) -> int:
        """Card value revealed for the coming round (deck is descending)."""
        return self.spec.n - state.moves

    def legal_actions(self, state, player):
        if state.terminal:
            raise GameError("terminal state has no legal actions")
        hand = state.payload[player]
        return tuple(i for i in range(self.spec.n) if hand >> i & 1)

    def _round(self, prize, a1, a2):
        if a1 > a2:
            return prize, (self.P1_WINS, 0)
        if a2 > a1:
            return -prize, (self.P2_WINS, 0)
        return 0, (self.DRAW, a1 + 1)

    def _transition(self, state, a1, a2):
        h1 = state.payload[0] & ~(1 << a1)
        h2 = state.payload[1] & ~(1 << a2)
        reward, obs = self._round(self.next_prize(state), a1, a2)
        terminal = False
        if state.moves + 1 == self.spec.n - 1:
            # forced last round: one card left in each hand.  It is scored
            # but not observed, so the public successor stays a function of
            # the public state and the joint action.
            b1, b2 = h1.bit_length() - 1, h2.bit_length() - 1
            reward += self._round(1, b1, b2)[0]
            h1 = h2 = 0
            terminal = True
        return (h1, h2), float(reward), terminal, obs

    def legal_from_infoset(self, key):
        _, own = self.decode_infoset(key)
        played = set(own)
        return tuple(i for i in range(self.spec.n) if i not in played)


class OshiZumo(Game):
    def new_game(self) -> GameState:
        return GameState(payload=(self.spec.n, self.spec.n, self.spec.k))

    def _bids(self, coins: int) -> tuple[int, ...]:
        return tuple(range(min(self.spec.min_bid, coins), coins + 1))

    def legal_actions(self, state, player):
        if state.terminal:
            raise GameError("terminal state has no legal actions")
        return self._bids(state.payload[player])

    def _transition(self, state, a1, a2):
        c1, c2, pos = state.payload
        if a1 > a2:
            pos, c1 = pos + 1, c1 - a1
        elif a2 > a1:
            pos, c2 = pos - 1, c2 - a2
        # no early stop when both are broke: the remaining 0-0 rounds change
        # nothing, and coins are hidden, so a public flag would leak them
        k = self.spec.k
        terminal = pos in (0, 2 * k) or state.moves + 1 == self.spec.n
        reward = (pos - k) / k if terminal else 0.0
        return (c1, c2, pos), float(reward), terminal, (pos,)

    def legal_from_infoset(self, key):
        pubs, own = self.decode_infoset(key)
        coins = self.spec.n
        pos = self.spec.k
        sign = 1 if key.player == 0 else -1
        for obs, bid in zip(pubs, own):
            if (obs[0] - pos) * sign > 0:
                coins -= bid
            pos = obs[0]
        return self._bids(coins)


@functools.lru_cache(maxsize=None)
def make_game(spec: GameSpec) -> Game:
    return Goofspiel(spec) if spec.kind == GOOFSPIEL else OshiZumo(spec)


def new_game(spec: GameSpec) -> GameState:
    return make_game(spec).new_game()


def legal_actions(spec: GameSpec, state: GameState, player: int) -> tuple[int, ...]:
    return make_game(spec).legal_actions(state, player)


def apply(spec: GameSpec, state: GameState, action) -> Step:
    return make_game(spec).apply(state, action)


def infoset_key(spec: GameSpec, state: GameState, player: int) -> InfosetKey:
    return make_game(spec).infoset_key(state, player)


def public_state_key(spec: GameSpec, state: GameState) -> PublicStateKey:
    return make_game(spec).public_state_key(state)


class BudgetExceeded(GameError):
    pass


@dataclass
class PublicState:
    """Histories of one public state grouped into each player's infosets."""

    key: PublicStateKey
    depth: int
    infosets: tuple[list[InfosetKey], list[InfosetKey]] = field(default_factory=lambda: ([], []))
    members: dict[InfosetKey, list[tuple]] = field(default_factory=dict)

    def num_infosets(self, player: int) -> int:
        return len(self.infosets[player])


def enumerate_public_tree(spec: GameSpec, budget: int = 2_000_000) -> dict[PublicStateKey, PublicState]:
    """Enumerate every non-terminal public state with its infosets and histories.

    Histories are tuples of joint actions.  Raises :class:`BudgetExceeded`
    when more than ``budget`` nodes would be visited.
    """
    game = make_game(spec)
    tree: dict[PublicStateKey, PublicState] = {}
    frontier = [((), game.new_game())]
    visited = 0
    while frontier:
        nxt = []
        for hist, state in frontier:
            visited += 1
            if visited > budget:
                raise BudgetExceeded(f"{spec} exceeds node budget {budget}")
            if state.terminal:
                continue
            pub = game.public_state_key(state)
            ps = tree.get(pub)
            if ps is None:
                ps = tree[pub] = PublicState(pub, state.moves)
            for player in (0, 1):
                key = game.infoset_key(state, player)
                if key not in ps.members:
                    ps.members[key] = []
                    ps.infosets[player].append(key)
                ps.members[key].append(hist)
            for a1 in game.legal_actions(state, 0):
                for a2 in game.legal_actions(state, 1):
                    nxt.append((hist + ((a1, a2),), game.apply(state, (a1, a2)).state))
        frontier = nxt
    return tree


def max_infosets(tree: dict[PublicStateKey, PublicState]) -> int:
    return max(max(ps.num_infosets(0), ps.num_infosets(1)) for ps in tree.values())

