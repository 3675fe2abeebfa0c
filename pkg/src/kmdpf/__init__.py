"""Linear and Koopman-based modal participation factors from trajectory data."""
from .edmd import (
    KoopmanDecomposition,
    ModeSummary,
    SnapshotPair,
    assemble_snapshots,
    estimate_koopman,
    evaluate_eigenfunctions,
    fit_edmd,
    koopman_tuples,
    modal_coordinates,
    mode_summary,
    reconstruct,
    reconstruction_error,
)
from .koopman_pf import (
    InitialDistribution,
    ParticipationResult,
    expectation_ratio,
    koopman_contribution_factors,
    mode_in_state_general,
    mode_in_state_simplified,
    normalize_rows,
    participation_factors,
    state_in_mode_pf,
)
from .lin_modal import (
    LinearSystem,
    ModalBasis,
    contribution_factors,
    eigendecompose,
    linear_participation_factors,
    probabilistic_state_in_mode,
    simulate_linear,
)
from .models import canonical_system, integrate_rk4, lifted_canonical, swing4, swing_surrogate
from .observables import (
    ObservableDictionary,
    ObservableSpec,
    build_dictionary,
    canonical_dictionary,
    identity_dictionary,
    lift,
    recovery_matrix,
    swing_dictionary,
)

__version__ = "0.1.0"
