"""Countable and finite MDP models, objectives, strategies, and graph operations.

States are identified by a non-negative ordinal (the enumeration of the state
space) plus a human-readable label; equality and hashing use the ordinal only,
so labels never have to round-trip exactly through transformations.

A countable MDP is given by two pure oracles (state kind and successor family);
a finite MDP is the same interface backed by explicit tables.  Infinite
successor families are represented lazily so that reductions and the safety
synthesis can enumerate them on demand, while every operation that needs finite
branching raises ``InfiniteBranching`` instead of silently truncating.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .errors import InfiniteBranching, NotSink, NotTail

PROB_TOL = 1e-9


class StateKind(Enum):
    CONTROLLED = "C"
    RANDOM = "R"


@dataclass(frozen=True, order=True)
class StateId:
    ordinal: int
    label: str = field(default="", compare=False)

    def __repr__(self) -> str:
        return f"StateId({self.ordinal}, {self.label!r})"


class Distribution:
    """Finite probability distribution over successor states.

    Probabilities are doubles normalized to 1 within ``PROB_TOL``; gadget
    constructors may attach exact rationals for test oracles via ``exact``.
    """

    __slots__ = ("support", "exact", "_cum")

    def __init__(
        self,
        support: Iterable[tuple[StateId, float]],
        exact: Mapping[StateId, Fraction] | None = None,
        check: bool = True,
    ):
        items = tuple((s, float(p)) for s, p in support)
        if check:
            seen = set()
            total = 0.0
            for s, p in items:
                if s in seen:
                    raise ValueError(f"duplicate support entry {s}")
                seen.add(s)
                if p <= 0.0:
                    raise ValueError(f"non-positive probability {p} at {s}")
                total += p
            if abs(total - 1.0) > PROB_TOL:
                raise ValueError(f"probabilities sum to {total}, not 1")
        self.support = items
        self.exact = dict(exact) if exact else None
        cum = []
        acc = 0.0
        for _, p in items:
            acc += p
            cum.append(acc)
        self._cum = cum

    def states(self) -> list[StateId]:
        return [s for s, _ in self.support]

    def prob(self, s: StateId) -> float:
        for t, p in self.support:
            if t == s:
                return p
        return 0.0

    def sample(self, u: float) -> StateId:
        # u uniform in [0,1); the final entry absorbs rounding slack.
        for (s, _), c in zip(self.support, self._cum):
            if u < c:
                return s
        return self.support[-1][0]

    def __iter__(self):
        return iter(self.support)

    def __len__(self):
        return len(self.support)

    def __repr__(self):
        inner = ", ".join(f"{s.label or s.ordinal}:{p:g}" for s, p in self.support)
        return f"Distribution({inner})"


@dataclass(frozen=True)
class InfiniteSuccessors:
    """Lazily enumerated infinite successor family.

    ``items()`` yields ``StateId`` for controlled states and
    ``(StateId, probability)`` pairs for random states, in increasing ordinal
    order (constructors guarantee the order; the default strategy rule relies
    on it).
    """

    items: Callable[[], Iterator]
    random: bool

    def iter_states(self) -> Iterator[StateId]:
        for item in self.items():
            yield item[0] if self.random else item

    def iter_weighted(self) -> Iterator[tuple[StateId, float]]:
        if not self.random:
            raise TypeError("controlled successor family has no weights")
        return self.items()


Successors = "list[StateId] | Distribution | InfiniteSuccessors"


class Mdp:
    """Oracle view of a countable MDP.

    Both oracles must be pure: repeated queries return identical answers.
    """

    def kind_of(self, s: StateId) -> StateKind:
        raise NotImplementedError

    def successors_of(self, s: StateId):
        """Successor list (controlled) or Distribution (random) for ``s``."""
        raise NotImplementedError

    @property
    def num_states(self) -> int | None:
        """Number of states for finite MDPs, None for countable ones."""
        return None


@dataclass
class LazyMdp(Mdp):
    """Countable MDP assembled from two callables."""

    kind_fn: Callable[[StateId], StateKind]
    successors_fn: Callable[[StateId], object]

    def kind_of(self, s: StateId) -> StateKind:
        return self.kind_fn(s)

    def successors_of(self, s: StateId):
        return self.successors_fn(s)


def successor_states(mdp: Mdp, s: StateId) -> list[StateId]:
    """Finite successor list of ``s``; raises InfiniteBranching otherwise."""
    succ = mdp.successors_of(s)
    if isinstance(succ, InfiniteSuccessors):
        raise InfiniteBranching(f"state {s.label or s.ordinal} branches infinitely")
    if isinstance(succ, Distribution):
        return succ.states()
    return list(succ)


class FiniteMdp(Mdp):
    """Explicitly materialized finite MDP.

    ``sinks`` are designated subsets closed under the transition relation.
    Truncations additionally carry their frontier state and policy tag.
    """

    def __init__(
        self,
        states: Sequence[StateId],
        kinds: Mapping[StateId, StateKind],
        transitions: Mapping[StateId, object],
        sinks: Sequence[Iterable[StateId]] = (),
        frontier: StateId | None = None,
        frontier_policy: str | None = None,
        check: bool = True,
    ):
        self.states = list(states)
        self.kinds = dict(kinds)
        self.transitions = dict(transitions)
        self.sinks = [frozenset(t) for t in sinks]
        self.frontier = frontier
        self.frontier_policy = frontier_policy
        self.by_ordinal = {s.ordinal: s for s in self.states}
        if check:
            self.validate()

    @property
    def num_states(self) -> int:
        return len(self.states)

    def kind_of(self, s: StateId) -> StateKind:
        return self.kinds[s]

    def successors_of(self, s: StateId):
        return self.transitions[s]

    def controlled_states(self) -> list[StateId]:
        return [s for s in self.states if self.kinds[s] is StateKind.CONTROLLED]

    def validate(self) -> None:
        if len(self.by_ordinal) != len(self.states):
            raise ValueError("state ordinals are not unique")
        state_set = set(self.states)
        for s in self.states:
            succ = self.transitions.get(s)
            if succ is None or len(succ) == 0:
                raise ValueError(f"state {s} has no successor")
            targets = succ.states() if isinstance(succ, Distribution) else list(succ)
            for t in targets:
                if t not in state_set:
                    raise ValueError(f"edge {s} -> {t} leaves the state space")
            if self.kinds[s] is StateKind.RANDOM and not isinstance(succ, Distribution):
                raise ValueError(f"random state {s} lacks a distribution")
            if self.kinds[s] is StateKind.CONTROLLED and isinstance(succ, Distribution):
                raise ValueError(f"controlled state {s} carries a distribution")
        for sink in self.sinks:
            require_sink(self, sink)

    def to_json(self) -> dict:
        states = [
            {"id": s.ordinal, "label": s.label, "kind": self.kinds[s].value}
            for s in self.states
        ]
        transitions = []
        for s in self.states:
            succ = self.transitions[s]
            if isinstance(succ, Distribution):
                for t, p in succ:
                    transitions.append({"from": s.ordinal, "to": t.ordinal, "p": p})
            else:
                for t in succ:
                    transitions.append({"from": s.ordinal, "to": t.ordinal, "p": None})
        return {
            "states": states,
            "transitions": transitions,
            "sinks": [sorted(s.ordinal for s in sink) for sink in self.sinks],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FiniteMdp":
        states = [StateId(d["id"], d.get("label", str(d["id"]))) for d in doc["states"]]
        by_ord = {s.ordinal: s for s in states}
        kinds = {
            by_ord[d["id"]]: StateKind(d["kind"]) for d in doc["states"]
        }
        edges: dict[StateId, list[tuple[StateId, float | None]]] = {s: [] for s in states}
        for e in doc["transitions"]:
            edges[by_ord[e["from"]]].append((by_ord[e["to"]], e["p"]))
        transitions: dict[StateId, object] = {}
        for s, out in edges.items():
            if kinds[s] is StateKind.RANDOM:
                transitions[s] = Distribution([(t, p) for t, p in out])
            else:
                transitions[s] = [t for t, _ in out]
        sinks = [[by_ord[o] for o in sink] for sink in doc.get("sinks", [])]
        return cls(states, kinds, transitions, sinks)

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "FiniteMdp":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def require_sink(mdp: Mdp, states: Iterable[StateId]) -> frozenset[StateId]:
    """Check that ``states`` is closed under the transition relation."""
    closed = frozenset(states)
    for s in closed:
        for t in successor_states(mdp, s):
            if t not in closed:
                raise NotSink(f"{s} -> {t} leaves the sink")
    return closed


# ---------------------------------------------------------------------------
# Objectives


@dataclass(frozen=True)
class Objective:
    """Run objective: Transience, Reach, Safety, Buechi, or Buechi+Transience.

    The relevant state family is given either explicitly (``states``) or, for
    countable MDPs with infinite families, as a membership predicate that is
    materialized per truncation.
    """

    kind: str
    states: frozenset[StateId] | None = None
    predicate: Callable[[StateId], bool] | None = field(default=None, compare=False)

    TRANSIENCE = "transience"
    REACH = "reach"
    SAFETY = "safety"
    BUECHI = "buechi"
    BUECHI_TRANSIENCE = "buechi_transience"

    @classmethod
    def transience(cls) -> "Objective":
        return cls(cls.TRANSIENCE)

    @classmethod
    def reach(cls, target) -> "Objective":
        if callable(target):
            return cls(cls.REACH, None, target)
        return cls(cls.REACH, frozenset(target))

    @classmethod
    def safety(cls, avoid) -> "Objective":
        if callable(avoid):
            return cls(cls.SAFETY, None, avoid)
        return cls(cls.SAFETY, frozenset(avoid))

    @classmethod
    def buechi(cls, goal) -> "Objective":
        if callable(goal):
            return cls(cls.BUECHI, None, goal)
        return cls(cls.BUECHI, frozenset(goal))

    @classmethod
    def buechi_transience(cls, goal) -> "Objective":
        if callable(goal):
            return cls(cls.BUECHI_TRANSIENCE, None, goal)
        return cls(cls.BUECHI_TRANSIENCE, frozenset(goal))

    def members_in(self, states: Iterable[StateId]) -> set[StateId]:
        """The objective's state family intersected with ``states``."""
        if self.states is not None:
            return set(self.states) & set(states)
        if self.predicate is not None:
            return {s for s in states if self.predicate(s)}
        return set()


def require_tail(mdp: Mdp, objective: Objective) -> None:
    """Accept only objectives that are tail in ``mdp``.

    Reach and Safety are tail exactly when their state set is a sink; the
    remaining variants are tail unconditionally.
    """
    if objective.kind in (Objective.REACH, Objective.SAFETY):
        try:
            require_sink(mdp, objective.states or ())
        except NotSink as exc:
            raise NotTail(f"{objective.kind} objective over a non-sink set") from exc


# ---------------------------------------------------------------------------
# Strategies


@dataclass
class MdStrategy:
    """Memoryless deterministic strategy: a fixed successor per controlled state.

    States outside ``choice`` fall back to the successor with the smallest
    ordinal (the first enumerated one for infinite families), which makes
    partially synthesized strategies total and reproducible.
    """

    choice: dict[StateId, StateId] = field(default_factory=dict)

    def successor(self, mdp: Mdp, s: StateId) -> StateId:
        picked = self.choice.get(s)
        if picked is not None:
            return picked
        succ = mdp.successors_of(s)
        if isinstance(succ, InfiniteSuccessors):
            return next(succ.iter_states())
        states = succ.states() if isinstance(succ, Distribution) else list(succ)
        return min(states, key=lambda t: t.ordinal)

    def to_json(self) -> dict:
        return {str(s.ordinal): t.ordinal for s, t in sorted(self.choice.items())}

    @classmethod
    def from_json(cls, doc: Mapping[str, int], fm: FiniteMdp) -> "MdStrategy":
        return cls(
            {fm.by_ordinal[int(k)]: fm.by_ordinal[int(v)] for k, v in doc.items()}
        )


@dataclass
class OneBitStrategy:
    """Deterministic strategy with one bit of memory.

    ``controlled(mode, s)`` returns the next mode and the chosen successor;
    ``random_update(mode, s, realized)`` returns the next mode after the
    environment picked ``realized``.  Updates are deterministic functions of
    the realized successor.
    """

    initial_mode: int
    controlled: Callable[[int, StateId], tuple[int, StateId]]
    random_update: Callable[[int, StateId, StateId], int]

    def with_initial_mode(self, mode: int) -> "OneBitStrategy":
        return OneBitStrategy(mode, self.controlled, self.random_update)

    @classmethod
    def from_tables(
        cls,
        initial_mode: int,
        controlled_table: Mapping[tuple[int, StateId], tuple[int, StateId]],
        random_table: Mapping[tuple[int, StateId], int] | None = None,
        mdp: Mdp | None = None,
    ) -> "OneBitStrategy":
        """Dict-backed strategy; unlisted states keep the mode and use the
        smallest-ordinal successor (requires ``mdp`` for the fallback)."""
        fallback = MdStrategy({})
        random_table = dict(random_table or {})

        def controlled(mode: int, s: StateId) -> tuple[int, StateId]:
            hit = controlled_table.get((mode, s))
            if hit is not None:
                return hit
            if mdp is None:
                raise KeyError(f"no choice for mode {mode} at {s}")
            return mode, fallback.successor(mdp, s)

        def random_update(mode: int, s: StateId, realized: StateId) -> int:
            return random_table.get((mode, s), mode)

        return cls(initial_mode, controlled, random_update)

    @staticmethod
    def tables_to_json(
        initial_mode: int,
        controlled_table: Mapping[tuple[int, StateId], tuple[int, StateId]],
    ) -> dict:
        table = {
            f"{m}:{s.ordinal}": [m2, t.ordinal]
            for (m, s), (m2, t) in sorted(
                controlled_table.items(), key=lambda kv: (kv[0][0], kv[0][1].ordinal)
            )
        }
        return {"initial_mode": initial_mode, "update": table}


@dataclass
class GeneralStrategy:
    """History-dependent strategy: partial run ending in a controlled state
    maps to a distribution over its successors.

    ``decide`` receives the simulator's live run sequence and must not
    mutate it.
    """

    decide: Callable[[Sequence[StateId]], Distribution]


Strategy = "MdStrategy | OneBitStrategy | GeneralStrategy | None"


# ---------------------------------------------------------------------------
# Graph operations


def bubble(mdp: Mdp, roots: Iterable[StateId], k: int) -> set[StateId]:
    """States reachable from ``roots`` within at most ``k`` steps."""
    frontier = set(roots)
    if not frontier:
        raise ValueError("bubble of an empty set")
    seen = set(frontier)
    for _ in range(k):
        nxt = set()
        for s in frontier:
            for t in successor_states(mdp, s):
                if t not in seen:
                    seen.add(t)
                    nxt.add(t)
        if not nxt:
            break
        frontier = nxt
    return seen


OPTIMISTIC = "optimistic"
PESSIMISTIC = "pessimistic"


def truncate(
    mdp: Mdp,
    roots: Iterable[StateId],
    radius: int,
    frontier: str = PESSIMISTIC,
) -> FiniteMdp:
    """Finite restriction of ``mdp`` to the radius-``radius`` bubble around
    ``roots``; transitions leaving the bubble are redirected to a fresh
    absorbing frontier sink tagged optimistic (winning) or pessimistic
    (losing).  When nothing leaves the bubble the copy is exact and no
    frontier state is added.
    """
    if frontier not in (OPTIMISTIC, PESSIMISTIC):
        raise ValueError(f"unknown frontier policy {frontier!r}")
    inside = bubble(mdp, roots, radius)
    fr = StateId(max(s.ordinal for s in inside) + 1, "frontier")

    kinds: dict[StateId, StateKind] = {}
    transitions: dict[StateId, object] = {}
    used_frontier = False
    for s in sorted(inside):
        kinds[s] = mdp.kind_of(s)
        succ = mdp.successors_of(s)
        if isinstance(succ, Distribution):
            kept = [(t, p) for t, p in succ if t in inside]
            out_mass = sum(p for t, p in succ if t not in inside)
            if out_mass > 0.0:
                kept.append((fr, out_mass))
                used_frontier = True
            transitions[s] = Distribution(kept, check=False)
        else:
            if isinstance(succ, InfiniteSuccessors):
                raise InfiniteBranching(f"cannot truncate across {s}")
            kept_c = [t for t in succ if t in inside]
            if len(kept_c) < len(list(succ)):
                kept_c.append(fr)
                used_frontier = True
            transitions[s] = kept_c

    states = sorted(inside)
    sinks: list[set[StateId]] = []
    if used_frontier:
        states.append(fr)
        kinds[fr] = StateKind.RANDOM
        transitions[fr] = Distribution([(fr, 1.0)])
        sinks.append({fr})
    return FiniteMdp(
        states,
        kinds,
        transitions,
        sinks,
        frontier=fr if used_frontier else None,
        frontier_policy=frontier if used_frontier else None,
    )


def reachable(mdp: Mdp, roots: Iterable[StateId]) -> set[StateId]:
    """All states reachable from ``roots`` (finite branching required)."""
    seen = set(roots)
    queue = deque(seen)
    while queue:
        s = queue.popleft()
        for t in successor_states(mdp, s):
            if t not in seen:
                seen.add(t)
                queue.append(t)
    return seen
