"""Distributed hypothesis testing with uncertain likelihood models."""

from .conjugate import (
    CERTAIN,
    GAUSSIAN,
    MULTINOMIAL,
    DirichletParams,
    NiwParams,
    UncertainModel,
    asymptotic_log_ulr,
    batch_log_ulr,
    certain_ull,
    dirichlet_absorb,
    multinomial_ull,
    mvn_ull,
    niw_absorb_batch,
    niw_absorb_one,
    student_t_logpdf,
)
from .config import ExperimentConfig, PRESETS, config_from_json, load_config
from .errors import ConfigError, DegenerateStateError, ModelSupportError, UMLearnError
from .harness import EnsembleResult, RunResult, draw_evidence, estimate_slope, run_ensemble, run_single
from .network import (
    BeliefLedger,
    Network,
    belief_step,
    consensus_gap,
    convergence_target,
    make_cycle_graph,
    spectral_bound,
)
from .partition import RectilinearGrid, build_uniform_grid, cell_of, histogram
from .truth import (
    GaussianSpec,
    MixtureSpec,
    MultinomialSpec,
    kl_gaussian,
    kl_monte_carlo,
    moment_match_gaussian,
    sample,
)

__version__ = "0.1.0"
