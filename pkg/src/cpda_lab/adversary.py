"""Honest-but-curious attacks on the in-cluster protocol.

Every attack here only reads values the attacker legitimately receives (or
overhears) and applies exact integer arithmetic; success means the recovered
reading equals the victim's true reading.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

from .cpda import (
    CpdaParams,
    Defenses,
    FValue,
    Mode,
    PrivateState,
    RoundVerdict,
    ShareValue,
    generate_seed,
    run_cluster_round,
)
from .errors import InconsistentExtraction, InvalidScenario, NoPairwiseKey, NonIntegerSolution
from .exact import evaluate, extract_base_coefficients, solve_vandermonde
from .keydist import (
    DEFAULT_POOL_SIZE,
    DEFAULT_RING_SIZE,
    KeyRing,
    assign_key_rings,
    attach_path_keys,
    can_decrypt,
    discover_shared_keys,
    establish_path_keys,
)
from .simcore import MessageBus, MessageKind, NodeId, RngStream, eavesdroppers_of

ATTACK_SEED = 2**40

# fixed roles inside the three-node attack cluster
LEADER, MEMBER_B, MEMBER_C = 0, 1, 2


class Role(str, Enum):
    LEADER = "leader"
    MEMBER = "member"
    IMBALANCED = "imbalanced"
    COLLUDING_MEMBERS = "collude"
    EAVESDROPPER = "eavesdrop"


class DefenseVerdict(str, Enum):
    NOT_CHECKED = "NOT_CHECKED"
    ACCEPTED = "ACCEPTED"
    REJECTED = "REJECTED"


@dataclass(frozen=True)
class AdversaryConfig:
    role: Role
    # None: the largest seed that still passes the seed triangle check
    attack_seed: Optional[int] = ATTACK_SEED
    leak_leader_F: bool = True
    encryption_enabled: bool = True
    # upper bound on the victims' blinding coefficients (imbalanced attack)
    victim_r_max: Optional[int] = None
    pool_size: int = DEFAULT_POOL_SIZE
    ring_size: int = DEFAULT_RING_SIZE
    key_rings: Optional[Mapping[NodeId, frozenset]] = None


@dataclass
class AttackReport:
    target_values: dict[NodeId, int] = field(default_factory=dict)
    recovered: dict[NodeId, Optional[int]] = field(default_factory=dict)
    defense_verdict: DefenseVerdict = DefenseVerdict.NOT_CHECKED
    extracted: dict[NodeId, tuple[int, ...]] = field(default_factory=dict)
    # test-only ground truth for ``extracted``, highest power first
    true_coefficients: dict[NodeId, tuple[int, ...]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def success(self) -> dict[NodeId, bool]:
        return {
            n: self.recovered.get(n) is not None and self.recovered[n] == v
            for n, v in self.target_values.items()
        }

    @property
    def recovered_count(self) -> int:
        return sum(self.success.values())

    @property
    def coefficients_exact(self) -> dict[NodeId, bool]:
        """Whether the blinding coefficients themselves were recovered."""
        return {
            n: self.extracted.get(n) == coeffs for n, coeffs in self.true_coefficients.items()
        }

    def as_record(self) -> dict:
        return {
            "defense_verdict": self.defense_verdict.value,
            "targets": len(self.target_values),
            "recovered_exact": self.recovered_count,
            "coefficients_exact": sum(self.coefficients_exact.values()),
            "notes": list(self.notes),
        }


def _with_truth(report: AttackReport, truth: Optional[Mapping[NodeId, int]]) -> AttackReport:
    if truth is not None:
        report.target_values = {n: truth[n] for n in report.recovered}
    return report


def leader_attack(
    received_shares: Sequence[ShareValue],
    attack_seed: int,
    truth: Optional[Mapping[NodeId, int]] = None,
    m: Optional[int] = None,
) -> AttackReport:
    """Peel every member's blinding coefficients off the share it sent the leader.

    The final remainder is the share modulo ``attack_seed``, so the reading
    comes out whenever it is below the seed; the coefficients come out
    exactly when every non-leading coefficient is below the seed as well.
    """
    degree = (m if m is not None else len(received_shares) + 1) - 1
    report = AttackReport()
    for sv in received_shares:
        parts = extract_base_coefficients(sv.value, attack_seed, degree)
        report.extracted[sv.src] = parts[:-1]
        report.recovered[sv.src] = parts[-1]
    return _with_truth(report, truth)


def member_attack(
    f_own: FValue | int,
    received_shares: Sequence[ShareValue],
    own: PrivateState,
    attack_seed: int,
    truth: Optional[Mapping[NodeId, int]] = None,
    leader: Optional[NodeId] = None,
) -> AttackReport:
    """A member with a dominant seed recovers everyone else's reading.

    The aggregate coefficients come from the member's own F value, each
    peer's coefficients from the share it sent.  The leader's coefficients
    are also obtained by subtraction, its reading is recomputed from its
    share with them, and both routes must agree.
    """
    others = [sv for sv in received_shares if sv.src != own.owner]
    m = len(others) + 1
    degree = m - 1
    f_value = f_own.value if isinstance(f_own, FValue) else f_own

    aggregate = extract_base_coefficients(f_value, attack_seed, degree)
    agg_coeffs, agg_sum = list(aggregate[:-1]), aggregate[-1]

    report = AttackReport()
    by_src = {}
    for sv in others:
        parts = extract_base_coefficients(sv.value, attack_seed, degree)
        by_src[sv.src] = sv
        report.extracted[sv.src] = parts[:-1]
        report.recovered[sv.src] = parts[-1]

    target = leader if leader in by_src else (others[0].src if others else None)
    if target is not None:
        # coefficients are listed highest power first; own.randoms lowest first
        own_hi_first = list(reversed(own.randoms))
        rest = [report.extracted[s] for s in by_src if s != target]
        by_subtraction = [
            agg_coeffs[t] - own_hi_first[t] - sum(r[t] for r in rest) for t in range(degree)
        ]
        reading = by_src[target].value - (
            evaluate(0, list(reversed(by_subtraction)), attack_seed)
        )
        if tuple(by_subtraction) != report.extracted[target] or reading != report.recovered[target]:
            raise InconsistentExtraction(
                f"subtraction route disagrees with direct extraction for node {target}"
            )
        report.recovered[target] = reading

    if agg_sum != own.reading + sum(v for v in report.recovered.values()):
        raise InconsistentExtraction("recovered readings do not add up to the extracted sum")
    return _with_truth(report, truth)


def imbalanced_random_attack(
    received_shares: Sequence[ShareValue],
    own_seed: int,
    truth: Optional[Mapping[NodeId, int]] = None,
    own: Optional[NodeId] = None,
    m: Optional[int] = None,
) -> AttackReport:
    """Same extraction as the member attack, but with an honest-range seed.

    Coefficients are exact when each victim's non-leading coefficients are
    below ``own_seed``; the reading only needs to be below it.
    """
    victims = [sv for sv in received_shares if sv.src != own]
    degree = (m if m is not None else len(victims) + 1) - 1
    report = AttackReport()
    for sv in victims:
        parts = extract_base_coefficients(sv.value, own_seed, degree)
        report.extracted[sv.src] = parts[:-1]
        report.recovered[sv.src] = parts[-1]
    return _with_truth(report, truth)


def reconstruct_from_evals(evals: Sequence[ShareValue | int], seeds: Sequence[int]) -> int:
    """Constant term of one node's polynomial from m evaluations at distinct seeds."""
    values = [e.value if isinstance(e, ShareValue) else e for e in evals]
    constant = solve_vandermonde(seeds, values)[0]
    if constant.denominator != 1:
        raise NonIntegerSolution(f"reconstructed reading {constant} is not an integer")
    return int(constant)


def _compliant_seed(others: Sequence[int]) -> int:
    s = sum(others) - 1
    while s in others:
        s -= 1
    return s


_TARGETS = {
    Role.LEADER: (MEMBER_B, MEMBER_C),
    Role.MEMBER: (LEADER, MEMBER_C),
    Role.IMBALANCED: (LEADER, MEMBER_C),
    Role.COLLUDING_MEMBERS: (LEADER,),
    Role.EAVESDROPPER: (LEADER,),
}


def run_attack_scenario(
    config: AdversaryConfig,
    defenses: Defenses = Defenses(),
    rng: Optional[RngStream] = None,
    params: CpdaParams = CpdaParams(),
) -> AttackReport:
    """Play one three-node cluster round with the configured adversary.

    Node 0 leads; node 1 is the attacker (the colluders are nodes 1 and 2).
    If a defense stops the round, no recovery is attempted.
    """
    if not isinstance(config.role, Role):
        raise InvalidScenario(f"unknown adversary role {config.role!r}")
    rng = rng if rng is not None else RngStream(0, "attack")
    nodes = (LEADER, MEMBER_B, MEMBER_C)
    attacker = LEADER if config.role is Role.LEADER else MEMBER_B
    readings = {n: rng.derive("reading", n).randint(0, params.d_max) for n in nodes}
    targets = _TARGETS[config.role]
    truth = {n: readings[n] for n in targets}

    seed_overrides = {}
    if config.role in (Role.LEADER, Role.MEMBER):
        if config.attack_seed is None:
            # picked after hearing the honest seeds, as large as the check allows
            seed_overrides[attacker] = lambda honest: _compliant_seed(list(honest.values()))
        else:
            seed_overrides[attacker] = config.attack_seed

    random_overrides = {}
    if config.role is Role.IMBALANCED and config.victim_r_max is not None:
        for n in targets:
            stream = rng.derive("victim-randoms", n)
            random_overrides[n] = [stream.randint(0, config.victim_r_max) for _ in nodes[1:]]

    bus = MessageBus.complete(nodes)
    security = None
    rings: Optional[dict[NodeId, KeyRing]] = None
    if config.role is Role.EAVESDROPPER and config.encryption_enabled:
        if config.key_rings is not None:
            rings = {n: KeyRing(n, frozenset(config.key_rings[n])) for n in nodes}
        else:
            rings = assign_key_rings(nodes, config.pool_size, config.ring_size, rng.derive("rings"))
        shared = discover_shared_keys(bus.topology, rings)
        path = establish_path_keys(bus.topology, shared, config.pool_size)
        rings = attach_path_keys(rings, path.values())
        security = {**shared, **path}

    report = AttackReport(target_values=truth, recovered={n: None for n in targets})
    checked = defenses.seed_check or defenses.share_check
    try:
        outcome = run_cluster_round(
            nodes, readings, Mode.STANDARD, defenses, security, rng.derive("round"), params,
            bus=bus, seed_overrides=seed_overrides, random_overrides=random_overrides,
        )
    except NoPairwiseKey as exc:
        report.notes.append(f"round not run: {exc}")
        return report

    if outcome.verdict is not RoundVerdict.OK:
        report.defense_verdict = DefenseVerdict.REJECTED
        report.notes.append(f"round stopped: {outcome.verdict.value}")
        return report
    report.defense_verdict = DefenseVerdict.ACCEPTED if checked else DefenseVerdict.NOT_CHECKED
    tr = outcome.transcript
    held = tr.held_by(attacker)
    received = [sv for sv in held if sv.src != attacker]
    seeds = tr.seeds

    if config.role is Role.LEADER:
        found = leader_attack(received, seeds[attacker], m=len(nodes))
    elif config.role is Role.MEMBER:
        try:
            found = member_attack(
                tr.fvals[attacker], held, tr.states[attacker], seeds[attacker], leader=LEADER
            )
        except InconsistentExtraction as exc:
            report.notes.append(str(exc))
            found = imbalanced_random_attack(held, seeds[attacker], own=attacker)
    elif config.role is Role.IMBALANCED:
        found = imbalanced_random_attack(held, seeds[attacker], own=attacker)
    else:
        found = _reconstruct_leader(config, tr, bus, rings, report)

    for n in targets:
        report.recovered[n] = found.recovered.get(n)
        if n in found.extracted:
            report.extracted[n] = found.extracted[n]
            report.true_coefficients[n] = tuple(reversed(tr.states[n].randoms))
    report.notes.extend(found.notes)
    return report


def _reconstruct_leader(config, tr, bus, rings, report) -> AttackReport:
    """Collect the leader's polynomial at all three seeds, then interpolate."""
    evals = {MEMBER_B: tr.shares[(LEADER, MEMBER_B)]}
    if config.role is Role.COLLUDING_MEMBERS:
        evals[MEMBER_C] = tr.shares[(LEADER, MEMBER_C)]
    else:
        for msg in bus.iter_kind(MessageKind.SHARE):
            if msg.src != LEADER or msg.dst != MEMBER_C:
                continue
            if MEMBER_B not in eavesdroppers_of(bus.topology, msg):
                continue
            if not config.encryption_enabled or can_decrypt(rings[MEMBER_B], msg.key_id):
                evals[MEMBER_C] = msg.payload[0]
            else:
                report.notes.append(f"overheard share sealed with key {msg.key_id} is unreadable")

    if config.leak_leader_F:
        # the leader's own share, backed out of its F value
        known_to_leader = tr.shares[(MEMBER_B, LEADER)] + tr.shares[(MEMBER_C, LEADER)]
        if MEMBER_C in evals:
            evals[LEADER] = tr.fvals[LEADER] - known_to_leader
    else:
        report.notes.append("leader F value not observable; the leader's own share stays hidden")

    found = AttackReport(recovered={LEADER: None})
    if len(evals) == 3:
        order = (LEADER, MEMBER_B, MEMBER_C)
        found.recovered[LEADER] = reconstruct_from_evals(
            [evals[n] for n in order], [tr.seeds[n] for n in order]
        )
    return found


@dataclass
class AttackSummary:
    role: Role
    defenses: Defenses
    trials: int = 0
    rejected: int = 0
    targets: int = 0
    recovered_exact: int = 0
    coefficients_exact: int = 0

    @property
    def success_rate(self) -> float:
        return self.recovered_exact / self.targets if self.targets else 0.0

    @property
    def rejection_rate(self) -> float:
        return self.rejected / self.trials if self.trials else 0.0

    def as_record(self) -> dict:
        return {
            "scenario": self.role.value,
            "seed_check": self.defenses.seed_check,
            "share_check": self.defenses.share_check,
            "trials": self.trials,
            "rejected": self.rejected,
            "rejection_rate": self.rejection_rate,
            "targets": self.targets,
            "recovered_exact": self.recovered_exact,
            "success_rate": self.success_rate,
            "coefficients_exact": self.coefficients_exact,
        }


def run_attack_trials(
    config: AdversaryConfig,
    defenses: Defenses,
    trials: int,
    seed: int = 0,
    params: CpdaParams = CpdaParams(),
) -> AttackSummary:
    summary = AttackSummary(config.role, defenses)
    root = RngStream(seed, f"attack/{config.role.value}")
    for t in range(trials):
        report = run_attack_scenario(config, defenses, root.derive(t), params)
        summary.trials += 1
        summary.rejected += report.defense_verdict is DefenseVerdict.REJECTED
        summary.targets += len(report.target_values)
        summary.recovered_exact += report.recovered_count
        summary.coefficients_exact += sum(report.coefficients_exact.values())
    return summary
