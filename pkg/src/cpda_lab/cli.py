"""Command line for the cluster aggregation simulator (``cpda-lab``).

Exit codes: 0 success, 1 config error, 2 invariant violation during trials.
Log verbosity comes from ``CPDA_LAB_LOG`` (e.g. ``DEBUG``); nothing else is
read from the environment.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Optional, Sequence

from . import __version__
from .adversary import AdversaryConfig, Role, run_attack_trials
from .clustering import run_cluster_formation, validate_assignment
from .cpda import Defenses
from .errors import ConfigError, CpdaLabError, InvalidParams
from .harness import emit_report, load_config, run_experiment
from .keydist import (
    empirical_p_connect,
    empirical_p_overhear,
    p_connect_closed_form,
    p_connect_product,
    p_overhear,
)
from .simcore import MessageBus, RngStream, build_topology

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    cfg = dataclasses.replace(cfg, **overrides)
    report = run_experiment(cfg)
    if cfg.output_dir:
        for path in emit_report(report, cfg.output_dir):
            logging.info("wrote %s", path)
    _emit({"trials": len(report.trials), "violations": report.violations, "summary": report.summary})
    return EXIT_VIOLATION if report.violations else EXIT_OK


def cmd_attack(args) -> int:
    seed = None if args.attack_seed == "compliant" else int(args.attack_seed, 0)
    config = AdversaryConfig(
        Role(args.scenario),
        attack_seed=seed,
        leak_leader_F=not args.no_leak,
        encryption_enabled=not args.no_encryption,
        victim_r_max=args.victim_r_max,
    )
    summary = run_attack_trials(config, Defenses.named(args.defenses), args.trials, args.seed)
    _emit(summary.as_record())
    return EXIT_OK


def cmd_keystats(args) -> int:
    rng = RngStream(args.seed, "keystats")
    _emit({
        "K": args.K,
        "k": args.k,
        "samples": args.samples,
        "p_connect_closed_form": p_connect_closed_form(args.K, args.k),
        "p_connect_product": p_connect_product(args.K, args.k),
        "p_connect_empirical": empirical_p_connect(args.K, args.k, args.samples, rng.derive("connect")),
        "p_overhear": p_overhear(args.K, args.k),
        "p_overhear_empirical": empirical_p_overhear(
            args.K, args.k, max(1, args.samples // 10), rng.derive("overhear")
        ),
    })
    return EXIT_OK


def cmd_formation(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    root = RngStream(cfg.master_seed, "trial/0")
    topo = build_topology(cfg.topology, root.derive("topology"))
    c = cfg.clustering
    assignment = run_cluster_formation(
        topo, c.p_c, c.max_rounds, root.derive("formation"),
        wait_rounds=c.wait_rounds, min_cluster_size=c.min_cluster_size, bus=MessageBus(topo),
    )
    violations = validate_assignment(assignment, topo, c.min_cluster_size)
    _emit({**assignment.as_record(), "violations": violations})
    return EXIT_VIOLATION if violations else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpda-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run end-to-end trials from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="run a three-node attack scenario repeatedly")
    p.add_argument("--scenario", required=True, choices=[r.value for r in Role])
    p.add_argument("--defenses", default="none", choices=["none", "seeds", "shares", "all"])
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attack-seed", default=str(2**40),
                   help="public seed chosen by the attacker, or 'compliant'")
    p.add_argument("--victim-r-max", type=int, help="bound on victims' coefficients (imbalanced)")
    p.add_argument("--no-encryption", action="store_true")
    p.add_argument("--no-leak", action="store_true", help="leader F value not observable")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("keystats", help="closed-form vs empirical key connectivity")
    p.add_argument("--K", type=int, default=1000)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_keystats)

    p = sub.add_parser("formation", help="print the cluster assignment of trial 0")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_formation)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("CPDA_LAB_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidParams, ValueError) as exc:
        print(f"cpda-lab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CpdaLabError as exc:
        print(f"cpda-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
