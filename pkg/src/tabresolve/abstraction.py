"""Per-public-state information abstraction.

Real infosets are embedded as property vectors, clustered per
``(public state, player)`` into at most ``L`` groups, and the resulting
assignment relabels the real game tree.
"""
from __future__ import annotations

import enum
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .games import GameSpec, InfosetKey, make_game
from .view import GameView

log = logging.getLogger(__name__)


class PropertyKind(str, enum.Enum):
    LEGAL = "legal"
    LEGAL_STRATEGY = "legal-strategy"
    LEGAL_STRATEGY_HISTORY = "legal-strategy-history"

    @property
    def uses_strategy(self) -> bool:
        return self is not PropertyKind.LEGAL

    @property
    def uses_history(self) -> bool:
        return self is PropertyKind.LEGAL_STRATEGY_HISTORY


def property_dim(spec: GameSpec, kind: PropertyKind) -> int:
    A = spec.num_actions
    dim = A
    if kind.uses_strategy:
        dim += A
    if kind.uses_history:
        dim += spec.max_rounds * A
    return dim


def property_vector(key: InfosetKey, kind: PropertyKind, policy, spec: GameSpec) -> np.ndarray:
    """``[legal mask | strategy | own-action one-hots per round]`` as selected by ``kind``."""
    kind = PropertyKind(kind)
    game = make_game(spec)
    A = spec.num_actions
    legal = np.zeros(A)
    legal[list(game.legal_from_infoset(key))] = 1.0
    parts = [legal]
    if kind.uses_strategy:
        if policy is None:
            raise ValueError(f"property kind {kind.value} needs a policy")
        vec = policy.get(key)
        if vec is None:
            vec = legal / legal.sum()
        parts.append(np.asarray(vec, dtype=float))
    if kind.uses_history:
        _, own = game.decode_infoset(key)
        hist = np.zeros((spec.max_rounds, A))
        hist[np.arange(len(own)), own] = 1.0
        parts.append(hist.ravel())
    return np.concatenate(parts)


# -- clustering ---------------------------------------------------------------

def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    history: list = field(default_factory=list)   # inertia after each Lloyd round


def kmeans(points, weights, L: int, seed) -> KMeansResult:
    """Weighted k-means with k-means++ seeding.

    Lloyd rounds run to an assignment fixpoint or 100 rounds.  An empty
    cluster is re-seeded at the point farthest from its centroid.  Distance
    ties go to the lowest centroid index (``argmin`` semantics).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("kmeans needs at least one point")
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
    n = len(x)
    if n <= L:
        centroids = np.vstack([x, np.repeat(x[-1:], L - n, axis=0)])
        return KMeansResult(centroids, np.arange(n), 0.0, [0.0])
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    # k-means++ with point weights folded into the sampling distribution
    chosen = [int(rng.choice(n, p=w / w.sum()) if w.sum() > 0 else rng.integers(n))]
    d2 = _sq_dists(x, x[chosen]).min(axis=1)
    while len(chosen) < L:
        mass = w * d2
        if mass.sum() <= 0:
            # all remaining points coincide with a centroid
            chosen.append(int(np.argmax(d2)))
        else:
            chosen.append(int(rng.choice(n, p=mass / mass.sum())))
        d2 = np.minimum(d2, _sq_dists(x, x[chosen[-1:]])[:, 0])
    centroids = x[chosen].copy()

    assignment = None
    history = []
    for _ in range(100):
        dist = _sq_dists(x, centroids)
        new = np.argmin(dist, axis=1)
        inertia = float(np.sum(w * dist[np.arange(n), new]))
        history.append(inertia)
        if assignment is not None and np.array_equal(new, assignment):
            break
        assignment = new
        for c in range(L):
            members = assignment == c
            mass = w[members].sum()
            if mass > 0:
                centroids[c] = (w[members, None] * x[members]).sum(axis=0) / mass
            elif members.any():
                centroids[c] = x[members].mean(axis=0)
            else:
                own = dist[np.arange(n), assignment]
                far = int(np.argmax(own))
                if own[far] > 0:
                    centroids[c] = x[far]
    dist = _sq_dists(x, centroids)
    assignment = np.argmin(dist, axis=1)
    inertia = float(np.sum(w * dist[np.arange(n), assignment]))
    return KMeansResult(centroids, assignment, inertia, history)


@dataclass(frozen=True)
class SoftParams:
    gamma: float = 1.0
    hard_threshold: float = 0.3
    repulsion: float = 0.5
    noise: float = 0.02
    rate: float = 0.05


def repel(centroids: np.ndarray, min_sq: float, max_sweeps: int = 1000) -> np.ndarray:
    """Push centroid pairs closer than ``min_sq`` (squared) apart symmetrically."""
    c = np.array(centroids, dtype=float)
    L = len(c)
    target = np.sqrt(min_sq)
    for _ in range(max_sweeps):
        d2all = _sq_dists(c, c)
        np.fill_diagonal(d2all, np.inf)
        if d2all.min() >= min_sq:
            return c
        moved = False
        for i in range(L):
            for j in range(i + 1, L):
                diff = c[j] - c[i]
                d2 = float(diff @ diff)
                if d2 >= min_sq:
                    continue
                d = np.sqrt(d2)
                if d > 0:
                    u = diff / d
                else:
                    u = np.zeros_like(diff)
                    u[(i + j) % len(diff)] = 1.0
                mid = 0.5 * (c[i] + c[j])
                # a hair past the target so rounding keeps the pair outside it
                half = 0.5 * target * (1 + 1e-12)
                c[i] = mid - half * u
                c[j] = mid + half * u
                moved = True
        if not moved:
            return c
    log.warning("repulsion did not settle after %d sweeps", max_sweeps)
    return c


def online_soft_update(centroids: np.ndarray, sample: np.ndarray, rng,
                       params: SoftParams = SoftParams()) -> np.ndarray:
    """One online clustering step; returns new centroids.

    The sample is jittered with Gaussian noise.  If it is within the hard
    threshold of its nearest centroid only that centroid moves, otherwise every
    centroid moves by its softmax weight.  Close pairs are then repelled.
    """
    c = np.array(centroids, dtype=float)
    x = np.asarray(sample, dtype=float) + rng.normal(0.0, params.noise, size=np.shape(sample))
    d2 = np.sum((c - x) ** 2, axis=1)
    nearest = int(np.argmin(d2))
    if d2[nearest] < params.hard_threshold:
        c[nearest] += params.rate * (x - c[nearest])
    else:
        logits = -params.gamma * d2
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        c += params.rate * weights[:, None] * (x - c)
    return repel(c, params.repulsion)


def nearest(centroids: np.ndarray, vec: np.ndarray) -> int:
    d2 = np.sum((np.asarray(centroids) - vec) ** 2, axis=1)
    return int(np.argmin(d2))


class ClusterSet:
    """Online centroids per ``(public state, player)``.

    Each group starts by collecting the first ``L`` distinct samples as
    centroids; later samples go through :func:`online_soft_update`.
    """

    def __init__(self, L: int, params: SoftParams = SoftParams()):
        if L < 1:
            raise ValueError("L must be >= 1")
        self.L = L
        self.params = params
        self.centroids: dict[tuple, np.ndarray] = {}
        self._pending: dict[tuple, list] = {}

    def observe(self, pub: bytes, player: int, vec: np.ndarray, rng) -> None:
        key = (pub, player)
        cents = self.centroids.get(key)
        if cents is not None:
            self.centroids[key] = online_soft_update(cents, vec, rng, self.params)
            return
        seen = self._pending.setdefault(key, [])
        if not any(np.array_equal(vec, s) for s in seen):
            seen.append(np.array(vec, dtype=float))
            if len(seen) == self.L:
                self.centroids[key] = repel(np.vstack(seen), self.params.repulsion)
                del self._pending[key]

    def finalize(self, rng) -> None:
        """Pad groups with fewer than ``L`` distinct samples by perturbed copies."""
        for key in sorted(self._pending):
            seen = self._pending[key]
            base = np.vstack(seen)
            extra = [base[i % len(seen)] + rng.normal(0.0, self.params.noise, base.shape[1])
                     for i in range(self.L - len(seen))]
            self.centroids[key] = repel(np.vstack([base] + extra), self.params.repulsion)
        self._pending.clear()

    def assign(self, pub: bytes, player: int, vec: np.ndarray) -> int:
        cents = self.centroids.get((pub, player))
        if cents is None:
            raise KeyError(f"no clusters for public state {pub.hex()} player {player}")
        return nearest(cents, vec)


# -- abstraction maps ---------------------------------------------------------

MAP_HEADER = "# tabresolve-abstraction v1"


class AbstractionMap:
    """Many-to-one assignment of real infosets to ``(public state, index)``."""

    def __init__(self, L: int, table: dict | None = None):
        self.L = L
        self.table: dict[tuple, dict[InfosetKey, int]] = table if table is not None else {}

    def set(self, pub: bytes, key: InfosetKey, index: int) -> None:
        if not 0 <= index < self.L:
            raise ValueError(f"abstract index {index} outside [0, {self.L})")
        self.table.setdefault((pub, key.player), {})[key] = int(index)

    def get(self, pub: bytes, key: InfosetKey) -> int:
        return self.table[(pub, key.player)][key]

    def lookup(self, pub: bytes, key: InfosetKey) -> int | None:
        group = self.table.get((pub, key.player))
        return None if group is None else group.get(key)

    def indices(self, pub: bytes, player: int) -> list[int]:
        return sorted(set(self.table.get((pub, player), {}).values()))

    def groups(self):
        return self.table.items()

    def __eq__(self, other):
        return isinstance(other, AbstractionMap) and self.L == other.L and self.table == other.table

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"{MAP_HEADER} L={self.L}\n")
        for (pub, player) in sorted(self.table):
            group = self.table[(pub, player)]
            for key in sorted(group, key=lambda k: k.data):
                out.write(f"{pub.hex() or '-'} {player} {key.data.hex() or '-'} {group[key]}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "AbstractionMap":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(MAP_HEADER):
            raise ValueError("not an abstraction map")
        L = int(lines[0].split("L=")[1])
        amap = cls(L)
        for line in lines[1:]:
            if not line.strip():
                continue
            pub_hex, player, key_hex, index = line.split()
            pub = b"" if pub_hex == "-" else bytes.fromhex(pub_hex)
            data = b"" if key_hex == "-" else bytes.fromhex(key_hex)
            amap.set(pub, InfosetKey(int(player), data), int(index))
        return amap


def _public_groups(spec: GameSpec):
    """Real infosets of every non-terminal public state, sorted by key bytes."""
    from .realgame import real_game

    rg = real_game(spec)
    game = make_game(spec)
    groups = defaultdict(set)
    for p in (0, 1):
        for key in rg.view.infoset_keys[p]:
            groups[(game.public_key_of(key), p)].add(key)
    return {k: sorted(v, key=lambda key: key.data) for k, v in groups.items()}


def identity_map(spec: GameSpec) -> AbstractionMap:
    """Injective map; ``L`` is the largest number of infosets in any group."""
    groups = _public_groups(spec)
    L = max(len(v) for v in groups.values())
    amap = AbstractionMap(L)
    for (pub, _), keys in groups.items():
        for i, key in enumerate(keys):
            amap.set(pub, key, i)
    return amap


def kmeans_map(spec: GameSpec, kind: PropertyKind, L: int, policy, seed,
               weights=None) -> AbstractionMap:
    """Tabular k-means abstraction, one clustering per public state and player.

    ``policy`` is a profile (pair of policies) for strategy kinds.  ``weights``
    maps an infoset key to its visit weight (uniform when omitted).
    """
    kind = PropertyKind(kind)
    rng = np.random.default_rng(seed)
    amap = AbstractionMap(L)
    for (pub, p), keys in sorted(_public_groups(spec).items()):
        pol = policy[p] if policy is not None else None
        pts = np.vstack([property_vector(k, kind, pol, spec) for k in keys])
        w = None if weights is None else np.array([weights.get(k, 0.0) for k in keys])
        if w is not None and w.sum() <= 0:
            w = None
        res = kmeans(pts, w, L, rng)
        for key, a in zip(keys, res.assignment):
            amap.set(pub, key, int(a))
    return amap


def clusters_to_map(spec: GameSpec, clusters: ClusterSet, kind: PropertyKind, policy) -> AbstractionMap:
    """Assign every real infoset to its nearest centroid.

    Public states that were never sampled have no centroids; their infosets
    all go to index 0.
    """
    kind = PropertyKind(kind)
    amap = AbstractionMap(clusters.L)
    for (pub, p), keys in _public_groups(spec).items():
        pol = policy[p] if policy is not None else None
        for key in keys:
            if (pub, p) in clusters.centroids:
                idx = clusters.assign(pub, p, property_vector(key, kind, pol, spec))
            else:
                idx = 0
            amap.set(pub, key, idx)
    return amap


def abstract_key(pub: bytes, index: int) -> tuple:
    return (pub, int(index))


def build_abstract_game(spec: GameSpec, amap: AbstractionMap) -> GameView:
    """Real tree with infosets relabelled by ``(public state, abstract index)``."""
    from .realgame import real_game

    view = real_game(spec).view
    game = make_game(spec)
    iset = np.full_like(view.iset, -1)
    keys: tuple[list, list] = ([], [])
    for p in (0, 1):
        index: dict = {}
        remap = np.empty(len(view.infoset_keys[p]), dtype=np.int64)
        for i, key in enumerate(view.infoset_keys[p]):
            pub = game.public_key_of(key)
            a = amap.lookup(pub, key)
            if a is None:
                raise KeyError(f"abstraction map misses infoset {key.hex()}")
            akey = abstract_key(pub, a)
            j = index.get(akey)
            if j is None:
                j = index[akey] = len(keys[p])
                keys[p].append(akey)
            remap[i] = j
        mask = view.iset[p] >= 0
        iset[p, mask] = remap[view.iset[p][mask]]
    return view.with_infosets(iset, keys)


def lift_policy(abstract_policy, amap: AbstractionMap, spec: GameSpec, player: int) -> dict:
    """Real policy for ``player``: each infoset copies its abstract distribution.

    The copy is renormalised over the infoset's legal actions, and falls back
    to uniform when the abstract distribution puts no mass there.
    """
    from .realgame import real_game

    game = make_game(spec)
    A = spec.num_actions
    out = {}
    for key in real_game(spec).view.infoset_keys[player]:
        legal = np.zeros(A)
        legal[list(game.legal_from_infoset(key))] = 1.0
        pub = game.public_key_of(key)
        a = amap.lookup(pub, key)
        vec = None if a is None else abstract_policy.get(abstract_key(pub, a))
        if vec is None:
            out[key] = legal / legal.sum()
            continue
        masked = np.asarray(vec, dtype=float) * legal
        total = masked.sum()
        out[key] = masked / total if total > 0 else legal / legal.sum()
    return out
