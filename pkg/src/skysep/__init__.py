"""Robust multi-agent separation assurance under observation corruption."""

from .adversary import (BoundReport, FOAdversaryOutput,
                        brute_force_worst_case, estimate_lipschitz_grad,
                        fo_perturbation, fo_value_drop,
                        remainder_bound_check)
from .bounds import (BoundCheckRecord, ToyMDP, check_performance_bound,
                     check_robust_value_bound, exact_policy_eval,
                     mixed_policy_value, policy_probe_report, random_mdp,
                     random_policy)
from .config import (ConfigError, ScenarioConfig, default_scenario,
                     load_scenario, load_train_config, parse_kv)
from .evaluate import (EvalConfig, EvalRecord, evaluate_sweep, run_episode,
                       write_metrics_csv)
from .network import (NetConfig, forward, forward_tape, init_params,
                      input_gradient, load_checkpoint, param_gradient,
                      policy_value, save_checkpoint)
from .observation import (CorruptionBounds, FeatureNorms, ObservationSample,
                          StateMatrix, assemble_state, box_contains,
                          default_corruption_bounds, default_feature_norms,
                          normalize_features, project_to_box,
                          sample_observation)
from .sim import (AircraftState, AirspaceEnv, RewardParams, Route,
                  RouteNetwork, SeparationMonitor, TrafficState, Wind,
                  advance_waypoint, compute_reward, default_route_network,
                  detect_events, pairwise_separation, spawn_traffic,
                  step_aircraft)
from .trainer import (TeacherBundle, TrainConfig, Transition,
                      compute_gae, kl_budget_probe, ppo_losses,
                      pretrain_nominal, robust_train, run_phase)

__version__ = "0.1.0"
