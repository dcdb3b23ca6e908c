"""Online influence maximization on independent-cascade networks where only
node activations are observed (censored edge outcomes)."""

from .bandit import (AlgoConfig, ExplorationSet, RoundLog, RunResult,
                     exploration_tau, run_tpnodeim, scaled_regret,
                     select_exploration_edges)
from .diffusion import (CascadeTrace, HyperEdgeObservation, exact_influence,
                        mc_influence, relevant_edge_sets, simulate_cascade)
from .estimator import (ConfidenceEllipsoid, MleResult, ObservationSet, SuffStats,
                        build_ellipsoid, confidence_radius_sq, ellipsoid_contains,
                        fit_mle, grad_ll, hessian_ll, kappa_from_bound,
                        log_likelihood, precondition_check, rho_star, suff_stats)
from .generators import generate_graph
from .graphs import (DirectedGraph, FeatureMap, ParamVector, ProbabilityTable,
                     aggregated_prob, build_tabular_features, edge_prob,
                     load_instance, save_instance, validate_instance)
from .oracle import OraclePair, exhaustive_opt, greedy_im, pair_oracle
from .seeding import derive_rng
from .studies import ExperimentSpec, StudySummary, run_study

__version__ = "0.1.0"
