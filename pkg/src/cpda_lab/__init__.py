"""Simulator and attack lab for cluster-based private data aggregation in sensor networks."""

__version__ = "0.1.0"

from .adversary import (
    AdversaryConfig,
    AttackReport,
    Role,
    imbalanced_random_attack,
    leader_attack,
    member_attack,
    reconstruct_from_evals,
    run_attack_scenario,
    run_attack_trials,
)
from .clustering import ClusterAssignment, run_cluster_formation, validate_assignment
from .cpda import (
    CpdaParams,
    Defenses,
    Mode,
    RoundVerdict,
    Verdict,
    assemble_F,
    compute_shares,
    generate_seed,
    run_cluster_round,
    solve_sum_efficient,
    solve_sum_standard,
    validate_seeds,
    validate_shares,
)
from .exact import extract_base_coefficients
from .harness import ExperimentConfig, emit_report, load_config, run_experiment
from .keydist import (
    assign_key_rings,
    can_decrypt,
    discover_shared_keys,
    establish_path_keys,
    p_connect_closed_form,
    p_overhear,
)
from .simcore import MessageBus, RngStream, Topology, TopologyConfig, build_topology, eavesdroppers_of
from .treeagg import aggregate_up, build_tag_tree
