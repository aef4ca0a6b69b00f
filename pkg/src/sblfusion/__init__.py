"""Multi-sensor sparse Bayesian learning for joint object detection and
continuous 2-D localization with MIMO radars, plus a matching-pursuit
baseline, scene simulator, OSPA evaluation, and an experiment driver."""

from .arrays import (
    ParameterizedDictionary,
    RadarGeometry,
    SteeringParams,
    angle_steering,
    atom,
    atom_matrix,
    mimo_3x3_geometry,
    range_steering,
    to_steering_params,
)
from .engine import (
    ComponentHypothesis,
    ComponentStats,
    EngineConfig,
    GridCache,
    MultiSensorObservation,
    SblEstimate,
    chi_from_db,
    component_stats,
    direct_objective,
    em_noise_update,
    partial_likelihood,
    posterior_amplitudes,
    propose_new_component,
    run,
    update_gamma,
    update_theta,
)
from .metrics import DetectionStats, OspaConfig, detection_stats, ospa
from .nomp import NompConfig, NompEstimate, nomp_run, tau_from_db
from .numerics import (
    BoundedMaxProblem,
    FactorCache,
    build_factor_cache,
    cholesky_hermitian,
    maximize_2d,
    positive_real_roots,
    stats_from_cache,
)
from .scenarios import (
    CrossingTracksSpec,
    ObjectSpec,
    Scenario,
    amplitude_for_snr,
    crossing_tracks,
    crossing_tracks_scenario,
    multi_radar_scenarios,
    polar_grid,
    synthesize,
    xy_grid,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
