"""Simulator and closed-form toolkit for phase-encoding BB84 and N-slot DPS
key distribution with directly phase-modulated single photons."""

from .analytics import (
    EfficiencyReport,
    Protocol,
    bb84_efficiency,
    dps_efficiency,
    instance_marginals,
    intercept_resend_qber,
    sifted_rate,
)
from .devices import ChannelConfig, DetectorConfig, Encoder, SourceConfig, max_clock_rate
from .engine import ExperimentConfig, Scheme, SummaryStats, run_experiment, run_round, sweep_n
from .photonics import (
    DetectionDistribution,
    Detector,
    PhasePattern,
    TimeBinState,
    apply_phase_pattern,
    make_rect_state,
    mz_distribution,
    sample_detection,
)

__version__ = "0.1.0"
