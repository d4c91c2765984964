"""In-cluster private aggregation.

Every participant blinds its reading with a private degree-(m-1) polynomial,
sends the evaluation at each peer's public seed to that peer under their
pairwise key, and sums what it holds into an F value.  The leader recovers
the cluster sum either from all m F values through an exact Vandermonde solve
(``STANDARD``) or, when its own seed dominates every coefficient, from its own
F value alone by digit extraction (``EFFICIENT``).
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Iterable, Mapping, Optional, Sequence

from .errors import (
    DuplicateSeeds,
    InvalidParams,
    NoPairwiseKey,
    NonIntegerSolution,
    PreconditionViolated,
    RangeExhausted,
)
from .exact import OpCounter, check_wide, evaluate, extract_base_coefficients, solve_vandermonde
from .keydist import LinkMode, LinkSecurity
from .simcore import MessageBus, MessageKind, NodeId, RngStream, _pair

log = logging.getLogger(__name__)

D_MAX = 1023
R_MAX = 2**32 - 1
SEED_LO = 256
SEED_HI = 65535
LEADER_SEED_EFFICIENT = 2**40
MAX_RETRIES = 8


class Mode(str, Enum):
    STANDARD = "standard"
    EFFICIENT = "efficient"


class Verdict(str, Enum):
    ACCEPT = "ACCEPT"
    REJECT = "REJECT"


class RoundVerdict(str, Enum):
    OK = "OK"
    REJECTED_SEEDS = "REJECTED_SEEDS"
    REJECTED_SHARES = "REJECTED_SHARES"
    ABORTED = "ABORTED"


@dataclass(frozen=True)
class Defenses:
    seed_check: bool = False
    share_check: bool = False

    @classmethod
    def named(cls, name: str) -> "Defenses":
        table = {
            "none": cls(),
            "seeds": cls(seed_check=True),
            "shares": cls(share_check=True),
            "all": cls(True, True),
        }
        try:
            return table[name]
        except KeyError:
            raise InvalidParams(f"unknown defense set {name!r}, expected one of {sorted(table)}")


@dataclass(frozen=True)
class CpdaParams:
    d_max: int = D_MAX
    r_max: int = R_MAX
    seed_lo: int = SEED_LO
    seed_hi: int = SEED_HI
    leader_seed_efficient: int = LEADER_SEED_EFFICIENT
    max_retries: int = MAX_RETRIES


@dataclass(frozen=True)
class PrivateState:
    owner: NodeId
    reading: int
    randoms: tuple[int, ...]
    seed: int

    def __repr__(self) -> str:
        # keep private values out of logs
        return f"PrivateState(owner={self.owner}, seed={self.seed}, degree={len(self.randoms)})"


@dataclass(frozen=True)
class ShareValue:
    src: NodeId
    eval_at: NodeId
    value: int


@dataclass(frozen=True)
class FValue:
    at: NodeId
    value: int


def generate_seed(rng: RngStream, lo: int, hi: int, taken: Iterable[int] = ()) -> int:
    """Uniform seed in ``[lo, hi]`` avoiding ``taken``."""
    if lo < 1:
        raise InvalidParams(f"seeds must be positive, got lo={lo}")
    taken = set(taken)
    free = (hi - lo + 1) - sum(1 for t in taken if lo <= t <= hi)
    if free <= 0:
        raise RangeExhausted(f"no free seed left in [{lo}, {hi}]")
    while True:
        s = rng.randint(lo, hi)
        if s not in taken:
            return s


def _triangle(values: Sequence[int]) -> Verdict:
    total = sum(values)
    if all(v < total - v for v in values):
        return Verdict.ACCEPT
    return Verdict.REJECT


def validate_seeds(seeds: Sequence[int]) -> Verdict:
    """Accept iff every seed is strictly below the sum of all the others."""
    if len(seeds) < 3:
        raise InvalidParams(f"need at least 3 seeds, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise DuplicateSeeds(f"seeds are not pairwise distinct: {list(seeds)}")
    return _triangle(seeds)


def validate_shares(held: Sequence[int | ShareValue]) -> Verdict:
    """Same strict rule applied to the shares one node holds at its own seed."""
    return _triangle([h.value if isinstance(h, ShareValue) else h for h in held])


def compute_shares(state: PrivateState, seeds: Mapping[NodeId, int]) -> list[ShareValue]:
    if len(seeds) < 3:
        raise InvalidParams(f"need at least 3 seeds, got {len(seeds)}")
    if len(state.randoms) != len(seeds) - 1:
        raise InvalidParams(
            f"{len(seeds)} seeds need {len(seeds) - 1} randoms, got {len(state.randoms)}"
        )
    return [
        ShareValue(state.owner, node, check_wide(evaluate(state.reading, state.randoms, s)))
        for node, s in seeds.items()
    ]


def assemble_F(own_share: ShareValue, received: Sequence[ShareValue]) -> FValue:
    at = own_share.eval_at
    for sv in received:
        if sv.eval_at != at:
            raise InvalidParams(f"share from {sv.src} evaluated at {sv.eval_at}, expected {at}")
    return FValue(at, check_wide(own_share.value + sum(sv.value for sv in received)))


def solve_sum_standard(
    seeds: Sequence[int], fvals: Sequence[FValue | int], ops: Optional[OpCounter] = None
) -> int:
    """Constant term of the aggregate polynomial from its values at all seeds."""
    rhs = [f.value if isinstance(f, FValue) else f for f in fvals]
    if len(seeds) != len(rhs):
        raise InvalidParams(f"{len(seeds)} seeds but {len(rhs)} F values")
    total = solve_vandermonde(seeds, rhs, ops)[0]
    if total.denominator != 1:
        raise NonIntegerSolution(f"recovered sum {total} is not an integer")
    return check_wide(int(total))


def efficient_seed_bound(m: int, d_max: int = D_MAX, r_max: int = R_MAX) -> int:
    """Smallest leader seed exceeding every aggregate coefficient and the sum."""
    return m * r_max + m * d_max + 1


def solve_sum_efficient(
    f_own: FValue | int,
    own_seed: int,
    m: int,
    *,
    d_max: int = D_MAX,
    r_max: int = R_MAX,
    ops: Optional[OpCounter] = None,
) -> int:
    """Cluster sum from the leader's own F value by m-1 floor divisions."""
    if own_seed < efficient_seed_bound(m, d_max, r_max):
        raise PreconditionViolated(
            f"seed {own_seed} does not exceed {m}*r_max + {m}*d_max; extraction is unreliable"
        )
    value = f_own.value if isinstance(f_own, FValue) else f_own
    return extract_base_coefficients(value, own_seed, m - 1, ops)[-1]


def complete_security(participants: Iterable[NodeId], first_key: int = 0) -> dict:
    """Distinct SHARED key per participant pair, for runs without key rings."""
    return {
        pair: LinkSecurity(pair, LinkMode.SHARED, first_key + i)
        for i, pair in enumerate(combinations(sorted(participants), 2))
    }


@dataclass
class ClusterTranscript:
    """Everything exchanged in the final attempt, keyed by node id."""

    leader: NodeId
    participants: tuple[NodeId, ...]
    seeds: dict[NodeId, int]
    states: dict[NodeId, PrivateState] = field(default_factory=dict, repr=False)
    shares: dict[tuple[NodeId, NodeId], int] = field(default_factory=dict, repr=False)
    fvals: dict[NodeId, int] = field(default_factory=dict)
    key_of: dict[tuple[NodeId, NodeId], int] = field(default_factory=dict)

    def held_by(self, node: NodeId) -> list[ShareValue]:
        """Shares evaluated at ``node``'s seed, in participant order."""
        return [ShareValue(src, node, self.shares[(src, node)]) for src in self.participants]


@dataclass
class ClusterRoundOutcome:
    leader: NodeId
    participants: tuple[NodeId, ...]
    mode: Mode
    verdict: RoundVerdict
    computed_sum: Optional[int]
    true_sum: int
    messages: Counter = field(default_factory=Counter)
    broadcasts: int = 0
    multiplications: int = 0
    divisions: int = 0
    retries: int = 0
    transcript: Optional[ClusterTranscript] = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return len(self.participants)

    def as_record(self) -> dict:
        return {
            "leader": self.leader,
            "m": self.m,
            "mode": self.mode.value,
            "verdict": self.verdict.value,
            "computed_sum": self.computed_sum,
            "true_sum": self.true_sum,
            "messages": {k.value: v for k, v in sorted(self.messages.items())},
            "broadcasts": self.broadcasts,
            "multiplications": self.multiplications,
            "divisions": self.divisions,
            "retries": self.retries,
        }


def _draw_randoms(rng: RngStream, node: NodeId, attempt: int, count: int, r_max: int) -> tuple[int, ...]:
    stream = rng.derive("randoms", node, attempt)
    return tuple(stream.randint(0, r_max) for _ in range(count))


def run_cluster_round(
    participants: Sequence[NodeId],
    readings: Mapping[NodeId, int],
    mode: Mode = Mode.STANDARD,
    defenses: Defenses = Defenses(),
    security: Optional[Mapping[tuple[NodeId, NodeId], LinkSecurity]] = None,
    rng: Optional[RngStream] = None,
    params: CpdaParams = CpdaParams(),
    *,
    bus: Optional[MessageBus] = None,
    seed_overrides: Optional[Mapping[NodeId, int]] = None,
    random_overrides: Optional[Mapping[NodeId, Sequence[int]]] = None,
) -> ClusterRoundOutcome:
    """Run one aggregation round; ``participants[0]`` is the leader.

    Shares between members that are not radio neighbours are relayed by the
    leader, still sealed under the members' pairwise key.

    A failed seed check makes the honest nodes redraw their seeds, and a
    failed share check makes everyone redraw blinding coefficients, each at
    most ``params.max_retries`` times.  ``seed_overrides`` pins a node's
    public seed (a callable receives the honest seeds drawn so far) and
    ``random_overrides`` pins its coefficients; pinned values survive retries.
    """
    participants = tuple(participants)
    m = len(participants)
    if m < 3:
        raise InvalidParams(f"cluster needs at least 3 participants, got {m}")
    leader = participants[0]
    rng = rng if rng is not None else RngStream(0, f"cluster/{leader}")
    bus = bus if bus is not None else MessageBus.complete(participants)
    security = security if security is not None else complete_security(participants)
    seed_overrides = dict(seed_overrides or {})
    random_overrides = dict(random_overrides or {})
    before = Counter(bus.counts)
    broadcasts_before = bus.broadcasts

    key_of = {}
    for a, b in combinations(participants, 2):
        link = security.get(_pair(a, b))
        if link is None or not link.secure:
            raise NoPairwiseKey(_pair(a, b))
        key_of[_pair(a, b)] = link.key_id

    def draw_seeds(attempt: int) -> dict[NodeId, int]:
        drawn: dict[NodeId, int] = {}
        for node in participants:
            if node in seed_overrides:
                continue
            if node == leader and mode is Mode.EFFICIENT:
                drawn[node] = params.leader_seed_efficient
            else:
                stream = rng.derive("seed", node) if attempt == 0 else rng.derive("seed", node, attempt)
                drawn[node] = generate_seed(stream, params.seed_lo, params.seed_hi, drawn.values())
        honest = dict(drawn)
        for node in participants:
            if node in seed_overrides:
                pinned = seed_overrides[node]
                drawn[node] = pinned(honest) if callable(pinned) else pinned
        if len(set(drawn.values())) != m:
            raise DuplicateSeeds(f"seeds are not pairwise distinct: {drawn}")
        return {n: drawn[n] for n in participants}

    true_sum = sum(readings[n] for n in participants)
    transcript = ClusterTranscript(leader, participants, {}, key_of=key_of)
    seed_retries = 0

    def finish(verdict, computed=None, ops=OpCounter(), retries=0):
        diff = Counter(bus.counts)
        diff.subtract(before)
        return ClusterRoundOutcome(
            leader, participants, mode, verdict, computed, true_sum,
            messages=+diff,
            broadcasts=bus.broadcasts - broadcasts_before,
            multiplications=ops.multiplications,
            divisions=ops.divisions,
            retries=seed_retries + retries,
            transcript=transcript,
        )

    while True:
        seeds = draw_seeds(seed_retries)
        transcript.seeds = seeds
        for node in participants:
            bus.broadcast(node, MessageKind.SEED, (seeds[node],))
        if not defenses.seed_check or validate_seeds(list(seeds.values())) is Verdict.ACCEPT:
            break
        if seed_retries >= params.max_retries:
            log.info("cluster %s: seed check rejected %s", leader, seeds)
            return finish(RoundVerdict.REJECTED_SEEDS)
        seed_retries += 1

    attempt = 0
    while True:
        states = {
            n: PrivateState(
                n,
                readings[n],
                tuple(random_overrides[n]) if n in random_overrides
                else _draw_randoms(rng, n, attempt, m - 1, params.r_max),
                seeds[n],
            )
            for n in participants
        }
        shares = {}
        for n in participants:
            for sv in compute_shares(states[n], seeds):
                shares[(sv.src, sv.eval_at)] = sv.value
        for src in participants:
            for dst in participants:
                if src != dst:
                    _send_share(bus, leader, src, dst, key_of[_pair(src, dst)], shares[(src, dst)])
        transcript.states = states
        transcript.shares = shares

        if not defenses.share_check or all(
            validate_shares(transcript.held_by(n)) is Verdict.ACCEPT for n in participants
        ):
            break
        if attempt >= params.max_retries:
            verdict = RoundVerdict.REJECTED_SHARES if params.max_retries == 0 else RoundVerdict.ABORTED
            log.info("cluster %s: share check failed after %d attempts", leader, attempt + 1)
            return finish(verdict, retries=attempt)
        attempt += 1

    fvals = {}
    for n in participants:
        held = transcript.held_by(n)
        own = next(sv for sv in held if sv.src == n)
        fvals[n] = assemble_F(own, [sv for sv in held if sv.src != n]).value
    transcript.fvals = fvals

    ops = OpCounter()
    if mode is Mode.STANDARD:
        for n in participants[1:]:
            bus.broadcast(n, MessageKind.FBCAST, (fvals[n],))
        computed = solve_sum_standard([seeds[n] for n in participants], [fvals[n] for n in participants], ops)
    else:
        computed = solve_sum_efficient(
            fvals[leader], seeds[leader], m, d_max=params.d_max, r_max=params.r_max, ops=ops
        )
    return finish(RoundVerdict.OK, computed, ops, attempt)


def _send_share(bus: MessageBus, leader: NodeId, src: NodeId, dst: NodeId, key_id: int, value: int) -> None:
    if bus.topology.has_edge(src, dst):
        bus.send(src, dst, MessageKind.SHARE, (value,), key_id)
    else:
        bus.send(src, leader, MessageKind.SHARE, (value,), key_id)
        bus.send(leader, dst, MessageKind.SHARE, (value,), key_id)
