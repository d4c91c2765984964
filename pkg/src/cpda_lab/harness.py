"""Experiment orchestration: config loading, trial execution and reports.

Defaults (every key is optional in the config file):

=====================================  ===============
key                                    default
=====================================  ===============
master_seed                            0
trials                                 1
workers                                1
topology.node_count                    100
topology.radius                        0.2
topology.server                        0
topology.min_connected_fraction        0.9
topology.edges                         (random graph)
keydist.pool_size                      1000
keydist.ring_size                      50
clustering.p_c                         0.3
clustering.wait_rounds                 2
clustering.max_rounds                  16
clustering.min_cluster_size            3
cpda.mode                              "standard"
cpda.defenses.seed_check               false
cpda.defenses.share_check              false
cpda.d_max                             1023
cpda.r_max                             4294967295
cpda.seed_lo                           256
cpda.seed_hi                           65535
cpda.leader_seed_efficient             1099511627776
cpda.max_retries                       8
adversary.role                         (no adversary)
adversary.attack_seed                  1099511627776
output.dir                             (no files)
=====================================  ===============
"""

from __future__ import annotations

import csv
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .adversary import ATTACK_SEED, Role, imbalanced_random_attack, leader_attack, member_attack
from .clustering import (
    DEFAULT_MAX_ROUNDS,
    DEFAULT_MIN_CLUSTER_SIZE,
    DEFAULT_P_C,
    DEFAULT_WAIT_ROUNDS,
    run_cluster_formation,
)
from .cpda import CpdaParams, Defenses, Mode, RoundVerdict, run_cluster_round
from .errors import ConfigError, CpdaLabError, InconsistentExtraction
from .keydist import (
    DEFAULT_POOL_SIZE,
    DEFAULT_RING_SIZE,
    LinkMode,
    assign_key_rings,
    attach_path_keys,
    can_decrypt,
    discover_shared_keys,
    establish_end_to_end_keys,
    establish_path_keys,
)
from .simcore import MessageBus, MessageKind, RngStream, TopologyConfig, build_topology, eavesdroppers_of
from .treeagg import aggregate_up, build_tag_tree

log = logging.getLogger(__name__)

JSONL_NAME = "trials.jsonl"
CSV_NAME = "summary.csv"


@dataclass(frozen=True)
class KeyDistConfig:
    pool_size: int = DEFAULT_POOL_SIZE
    ring_size: int = DEFAULT_RING_SIZE


@dataclass(frozen=True)
class ClusteringConfig:
    p_c: float = DEFAULT_P_C
    wait_rounds: int = DEFAULT_WAIT_ROUNDS
    max_rounds: int = DEFAULT_MAX_ROUNDS
    min_cluster_size: int = DEFAULT_MIN_CLUSTER_SIZE


@dataclass(frozen=True)
class CpdaConfig:
    mode: Mode = Mode.STANDARD
    defenses: Defenses = Defenses()
    params: CpdaParams = CpdaParams()


@dataclass(frozen=True)
class AdversaryBlock:
    role: Role
    attack_seed: int = ATTACK_SEED


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    trials: int = 1
    workers: int = 1
    topology: TopologyConfig = TopologyConfig()
    keydist: KeyDistConfig = KeyDistConfig()
    clustering: ClusteringConfig = ClusteringConfig()
    cpda: CpdaConfig = CpdaConfig()
    adversary: Optional[AdversaryBlock] = None
    output_dir: Optional[str] = None

    def as_record(self) -> dict:
        rec = asdict(self)
        rec["cpda"]["mode"] = self.cpda.mode.value
        if self.adversary is not None:
            rec["adversary"]["role"] = self.adversary.role.value
        return rec


def _build(cls, block: Any, where: str, **converted):
    if not isinstance(block, Mapping):
        raise ConfigError(f"[{where}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = set(block) - known - set(converted)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(sorted(unknown))}")
    kwargs = {k: v for k, v in block.items() if k not in converted}
    kwargs.update(converted)
    for f in fields(cls):
        if f.name in kwargs and f.type in ("int", "float") and isinstance(kwargs[f.name], bool):
            raise ConfigError(f"{where}.{f.name} must be a number")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Validate a parsed config tree; every block is checked before any trial runs."""
    top_keys = {"master_seed", "trials", "workers", "topology", "keydist", "clustering", "cpda", "adversary", "output"}
    unknown = set(raw) - top_keys
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")

    topo_raw = dict(raw.get("topology", {}))
    edges = topo_raw.pop("edges", None)
    topology = _build(
        TopologyConfig, topo_raw, "topology",
        **({"edges": tuple(tuple(e) for e in edges)} if edges is not None else {}),
    )
    keydist = _build(KeyDistConfig, raw.get("keydist", {}), "keydist")
    clustering = _build(ClusteringConfig, raw.get("clustering", {}), "clustering")

    cpda_raw = dict(raw.get("cpda", {}))
    try:
        mode = Mode(cpda_raw.pop("mode", "standard"))
    except ValueError:
        raise ConfigError("cpda.mode must be 'standard' or 'efficient'") from None
    defenses = _build(Defenses, cpda_raw.pop("defenses", {}), "cpda.defenses")
    params = _build(CpdaParams, cpda_raw, "cpda")
    cpda = CpdaConfig(mode, defenses, params)

    adversary = None
    if "adversary" in raw:
        adv_raw = dict(raw["adversary"])
        try:
            role = Role(adv_raw.pop("role"))
        except (KeyError, ValueError):
            raise ConfigError("adversary.role must be one of leader, member, imbalanced") from None
        if role not in (Role.LEADER, Role.MEMBER, Role.IMBALANCED):
            raise ConfigError(f"adversary.role {role.value!r} is only available via the attack command")
        adversary = _build(AdversaryBlock, adv_raw, "adversary", role=role)

    out = raw.get("output", {})
    if not isinstance(out, Mapping) or set(out) - {"dir"}:
        raise ConfigError("[output] accepts only 'dir'")

    cfg = ExperimentConfig(
        master_seed=raw.get("master_seed", 0),
        trials=raw.get("trials", 1),
        workers=raw.get("workers", 1),
        topology=topology,
        keydist=keydist,
        clustering=clustering,
        cpda=cpda,
        adversary=adversary,
        output_dir=out.get("dir"),
    )
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    def need(cond: bool, msg: str) -> None:
        if not cond:
            raise ConfigError(msg)

    for name in ("master_seed", "trials", "workers"):
        need(isinstance(getattr(cfg, name), int) and not isinstance(getattr(cfg, name), bool),
             f"{name} must be an integer")
    need(cfg.trials >= 0, "trials must be >= 0")
    need(cfg.workers >= 1, "workers must be >= 1")
    t = cfg.topology
    need(t.node_count >= 4, "topology.node_count must be >= 4")
    need(t.edges is not None or t.radius > 0, "topology.radius must be > 0")
    need(0 <= t.min_connected_fraction <= 1, "topology.min_connected_fraction must lie in [0, 1]")
    k = cfg.keydist
    need(k.ring_size >= 1 and k.pool_size >= 2 * k.ring_size, "keydist needs pool_size >= 2*ring_size >= 2")
    c = cfg.clustering
    need(0 < c.p_c <= 1, "clustering.p_c must lie in (0, 1]")
    need(c.wait_rounds >= 0 and c.max_rounds >= 1, "clustering rounds must be non-negative")
    need(c.min_cluster_size >= 3, "clustering.min_cluster_size must be >= 3")
    p = cfg.cpda.params
    need(p.d_max >= 0 and p.r_max >= 0, "cpda.d_max and cpda.r_max must be >= 0")
    need(1 <= p.seed_lo < p.seed_hi, "cpda needs 1 <= seed_lo < seed_hi")
    need(p.max_retries >= 0, "cpda.max_retries must be >= 0")


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw)


@dataclass
class ExperimentReport:
    config: dict
    trials: list[dict] = field(default_factory=list)

    @property
    def summary(self) -> dict[str, dict[str, float]]:
        return summarize(self.trials)

    @property
    def violations(self) -> int:
        return sum(len(t.get("violations", ())) for t in self.trials)


SUMMARY_METRICS = (
    "server_total_matches",
    "covered_nodes",
    "uncovered_nodes",
    "dissolved_clusters",
    "clusters_ok",
    "clusters_excluded",
    "mean_retries",
    "messages_total",
    "broadcasts",
    "p_connect_empirical",
    "p_overhear_empirical",
    "attack_success_rate",
)


def summarize(trials: list[dict]) -> dict[str, dict[str, float]]:
    """Mean/min/max of each per-trial metric (trials lacking a metric are skipped)."""
    out = {}
    for name in SUMMARY_METRICS:
        values = [t["metrics"][name] for t in trials if t.get("metrics", {}).get(name) is not None]
        if values:
            out[name] = {"mean": statistics.fmean(values), "min": min(values), "max": max(values)}
    return out


def _attack(role: Role, outcome) -> Optional[dict]:
    tr = outcome.transcript
    leader = outcome.leader
    attacker = leader if role is Role.LEADER else outcome.participants[1]
    held = tr.held_by(attacker)
    truth = {n: tr.states[n].reading for n in outcome.participants if n != attacker}
    if role is Role.LEADER:
        report = leader_attack([sv for sv in held if sv.src != attacker], tr.seeds[attacker], truth, outcome.m)
    elif role is Role.MEMBER:
        try:
            report = member_attack(tr.fvals[attacker], held, tr.states[attacker], tr.seeds[attacker], truth, leader)
        except InconsistentExtraction:
            report = imbalanced_random_attack(held, tr.seeds[attacker], truth, attacker)
    else:
        report = imbalanced_random_attack(held, tr.seeds[attacker], truth, attacker)
    return {"attacker": attacker, **report.as_record()}


def run_trial(cfg: ExperimentConfig, index: int) -> dict:
    """One end-to-end run; module errors are recorded, never raised."""
    root = RngStream(cfg.master_seed, f"trial/{index}")
    record: dict[str, Any] = {"trial": index, "violations": []}
    try:
        topo = build_topology(cfg.topology, root.derive("topology"))
    except CpdaLabError as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
        return record

    component = topo.component()
    K, k = cfg.keydist.pool_size, cfg.keydist.ring_size
    rings = assign_key_rings(topo, K, k, root.derive("keys"))
    shared = discover_shared_keys(topo, rings)
    path = establish_path_keys(topo, shared, K)
    next_key = K + sum(1 for link in path.values() if link.mode is LinkMode.PATH)
    bus = MessageBus(topo)
    readings = {n: root.derive("reading", n).randint(0, cfg.cpda.params.d_max) for n in topo.nodes}
    readings[topo.server] = 0

    try:
        formation = run_cluster_formation(
            topo, cfg.clustering.p_c, cfg.clustering.max_rounds, root.derive("formation"),
            wait_rounds=cfg.clustering.wait_rounds,
            min_cluster_size=cfg.clustering.min_cluster_size,
            bus=bus,
        )
    except CpdaLabError as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
        return record

    relay_pairs = [
        (a, b)
        for c in formation.clusters
        for i, a in enumerate(c.participants)
        for b in c.participants[i + 1:]
        if not topo.has_edge(a, b)
    ]
    e2e = establish_end_to_end_keys(topo, rings, shared, relay_pairs, K, next_key)
    security = {**shared, **path, **e2e}
    rings = attach_path_keys(rings, security.values())

    clusters, sums, attacks = [], {}, []
    covered_sum = covered_nodes = 0
    for cluster in formation.clusters:
        overrides = {}
        adv = cfg.adversary
        if adv is not None and cluster.leader != topo.server:
            attacker = cluster.leader if adv.role is Role.LEADER else cluster.participants[1]
            if adv.role is not Role.IMBALANCED:
                overrides[attacker] = adv.attack_seed
        try:
            outcome = run_cluster_round(
                cluster.participants, readings, cfg.cpda.mode, cfg.cpda.defenses, security,
                root.derive("cluster", cluster.leader), cfg.cpda.params,
                bus=bus, seed_overrides=overrides,
            )
        except CpdaLabError as exc:
            clusters.append({
                "leader": cluster.leader,
                "m": cluster.size,
                "verdict": "EXCLUDED",
                "reason": f"{type(exc).__name__}: {exc}",
            })
            continue
        clusters.append(outcome.as_record())
        if outcome.verdict is RoundVerdict.OK:
            if outcome.computed_sum != outcome.true_sum:
                record["violations"].append(f"cluster {cluster.leader}: computed sum differs from truth")
            sums[cluster.leader] = outcome.computed_sum
            covered_sum += outcome.true_sum
            covered_nodes += outcome.m
            if adv is not None and cluster.leader != topo.server:
                attacks.append({"leader": cluster.leader, **_attack(adv.role, outcome)})
        elif adv is not None and cluster.leader != topo.server:
            attacks.append({"leader": cluster.leader, "defense_verdict": "REJECTED", "targets": outcome.m - 1, "recovered_exact": 0})

    tree = build_tag_tree(topo)
    server_total = aggregate_up(tree, sums, bus)
    if server_total != covered_sum:
        record["violations"].append(f"server total {server_total} != covered sum {covered_sum}")

    heard = readable = 0
    for msg in bus.iter_kind(MessageKind.SHARE):
        if msg.key_id is None or msg.key_id >= K:
            continue
        for node in eavesdroppers_of(topo, msg):
            heard += 1
            readable += can_decrypt(rings[node], msg.key_id)

    excluded = sum(1 for c in clusters if c["verdict"] != "OK")
    retries = [c["retries"] for c in clusters if "retries" in c]
    targets = sum(a["targets"] for a in attacks)
    record.update({
        "topology": {
            "nodes": topo.node_count,
            "edges": len(topo.edges),
            "server_component": len(component),
        },
        "keys": {
            "shared_links": len(shared),
            "path_links": sum(1 for v in path.values() if v.mode is LinkMode.PATH),
            "unsecured_links": sum(1 for v in path.values() if v.mode is LinkMode.NONE),
            "relay_pairs": len(relay_pairs),
        },
        "formation": formation.as_record(),
        "clusters": clusters,
        "attacks": attacks,
        "tree_parent": tree.parent_array(topo.node_count),
        "server_total": server_total,
        "covered_sum": covered_sum,
        "messages": {kind.value: bus.counts[kind] for kind in MessageKind},
        "metrics": {
            "server_total_matches": int(server_total == covered_sum),
            "covered_nodes": covered_nodes,
            "uncovered_nodes": len(formation.uncovered),
            "dissolved_clusters": formation.dissolved_count,
            "clusters_ok": len(clusters) - excluded,
            "clusters_excluded": excluded,
            "mean_retries": statistics.fmean(retries) if retries else 0.0,
            "messages_total": len(bus.trace),
            "broadcasts": bus.broadcasts,
            "p_connect_empirical": len(shared) / len(topo.edges) if topo.edges else None,
            "p_overhear_empirical": readable / heard if heard else None,
            "attack_success_rate": (
                sum(a["recovered_exact"] for a in attacks) / targets if targets else None
            ),
        },
    })
    return record


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run all trials; output depends only on the config, never on ``workers``."""
    validate_config(cfg)
    indices = range(cfg.trials)
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            trials = list(pool.map(run_trial, [cfg] * cfg.trials, indices))
    else:
        trials = [run_trial(cfg, i) for i in indices]
    return ExperimentReport(cfg.as_record(), trials)


def emit_report(report: ExperimentReport, out_dir: str | os.PathLike, formats=("jsonl", "csv")) -> list[Path]:
    """Write ``trials.jsonl`` (one line per trial) and/or ``summary.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "jsonl" in formats:
        path = out / JSONL_NAME
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for trial in report.trials:
                fh.write(json.dumps(trial, sort_keys=True, separators=(",", ":")) + "\n")
        written.append(path)
    if "csv" in formats:
        path = out / CSV_NAME
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "mean", "min", "max"])
            for name, stats in report.summary.items():
                writer.writerow([name, repr(stats["mean"]), repr(stats["min"]), repr(stats["max"])])
        written.append(path)
    return written
