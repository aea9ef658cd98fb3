"""Bidirectional HOM clock synchronization with weak coherent pulses.

Analytic interference model, Monte Carlo frame simulator, dip fitting and
offset estimation, and the intercept-resend detection test.
"""
from .config import ExperimentConfig, config_from_dict, effective_mu, load_config
from .core import (
    BB84State,
    OverlapParams,
    SourcePair,
    bessel_i0,
    coincidence_probability,
    expected_floor,
    mode_overlap,
    polarization_overlap,
    postselected_min,
    visibility,
)
from .errors import (
    ConfigError,
    DomainError,
    FitError,
    HomSyncError,
    InsufficientDataError,
    NoDipError,
)
from .estimation import (
    DipFit,
    OffsetEstimate,
    ScanPoint,
    asymmetry_bias,
    correlation_scan,
    estimate_offset,
    fit_inverted_gaussian,
)
from .pipeline import run_direction, run_security, run_sync
from .security import (
    DetectionVerdict,
    attack_sweep,
    detect_eavesdropper,
    ir_postselected_floor,
    ir_transform,
)
from .simulation import (
    Direction,
    FrameRecord,
    Party,
    PulseRecord,
    emission_schedule,
    pair_pulses,
    sample_jitter,
    simulate_frame,
)

__version__ = "0.1.0"
