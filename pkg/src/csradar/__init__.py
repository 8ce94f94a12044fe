"""Compressive-sensing colocated MIMO radar toolkit.

Synthesizes target returns over an angle-range(-speed) grid, designs
measurement matrices (Gaussian baseline, convex coherence/SIR trade-off,
waveform-structured), recovers sparse target vectors with a Dantzig
selector, and runs seeded Monte-Carlo SIR / coherence / detection
experiments.
"""

__version__ = "0.1.0"

from .numerics import (
    SPEED_OF_LIGHT,
    HermitianEig,
    RandomSource,
    bessel_j1,
    hermitian_eig,
    psd_project,
    varsigma,
)
from .scene import (
    ArrayGeometry,
    NoiseModel,
    Scene,
    SearchGrid,
    Target,
    WaveformSet,
    build_grid,
    eta,
    generate_waveforms,
    place_nodes_uniform_disk,
)
from .signal import (
    basis_matrix,
    delay_embed,
    selection_matrix,
    shift_matrix,
    shifted_gram,
    stack_observations,
    stacked_sensing_matrix,
    steering_vector,
    synthesize_received,
)
from .design import (
    DesignContext,
    GramSolution,
    MeasurementDesign,
    build_phi2,
    grmm,
    load_design,
    optimize_phi1,
    sample_gaussian_matrix,
    save_design,
    structured_phi1,
    waveform_bank,
)
from .metrics import (
    CoherenceReport,
    SirBounds,
    SirGain,
    SirReport,
    coherence_matrix,
    coherence_summary,
    column_coherence,
    empirical_sir,
    interference_power,
    sir_bounds,
    sir_gain,
    theoretical_signal_power,
    theoretical_sir,
)
from .recovery import (
    DetectionOutcome,
    RecoveryProblem,
    SparseEstimate,
    dantzig_select,
    default_epsilon,
    matched_filter_estimate,
    pd_at_pfa,
    roc_curve,
    threshold_detect,
)
from .harness import (
    ExperimentConfig,
    RunSummary,
    emit_report,
    load_config,
    run_monte_carlo,
)
