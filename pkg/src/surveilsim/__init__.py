"""Adaptive test-allocation surveillance on a simulated campus population."""

__version__ = "0.1.0"

from .config import (ConfigError, ExperimentConfig, PopulationConfig,
                     load_config, parse_config_text)
from .population import (AgentAttributes, NetworkLayers, Population,
                         build_static_layers, export_layers_csv, neighbors_of,
                         sample_random_layer, synthesize_population)
from .epidemic import (EpidemicState, advance_day, apply_isolation, hazard_of,
                       infectiousness_at, seed_epidemic)
from .designs import (DesignContext, PositivityError, TestRound, allocate,
                      allocate_rank, allocate_sample, design_probabilities,
                      effective_probabilities, observed_outcome)
from .learners import (CandidateLearner, FeatureExtractor, OnlineCvLedger,
                       TrainingBuffer, ensemble_fit, fit_weighted_logistic,
                       project_to_simplex)
from .selectors import (DesignEstimate, TmleFit, TrajectoryRecord, eif_variance,
                        plugin_value, run_surveillance_loop, select_design,
                        tmle_fluctuate)
from .harness import (MonteCarloSummary, replay_summary, run_monte_carlo,
                      run_sweep, run_trajectory, summarize_and_export,
                      validate_battery)
