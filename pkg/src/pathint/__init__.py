"""Pathwise stochastic integration on sampled paths.

Core surface: path generation and variation norms (paths), crossing-time
partition ladders (partitions), discrete quadratic variation (quadvar),
pathwise Ito integral ladders and superhedging certificates (integration),
rough-path construction and controlled integrals (roughpath), and a CLI (cli).
"""

from .paths import (
    SamplePath,
    ControlFunction,
    p_variation,
    pvar_control,
    two_index_variation,
    generate,
    read_path_csv,
    write_path_csv,
)
from .partitions import (
    PartitionLadder,
    LadderLevel,
    crossing_times,
    build_ladder,
    count_stops,
    ladder_to_json,
)
from .quadvar import (
    QVLadder,
    discrete_qv,
    qv_curves,
    covariation,
    covariation_curves,
    build_qv_ladder,
    follmer_qv_check,
)
from .integration import (
    StepProcess,
    SimpleStrategy,
    Certificate,
    step_integral,
    matrix_left_integral,
    ito_ladder,
    hoeffding_strategy,
    hoeffding_bound_curve,
    isometry_certificate,
    HoeffdingPreconditionError,
)
from .roughpath import (
    PHI_FUNCTIONS,
    RoughPath,
    ControlledPath,
    build_ito_rough_path,
    controlled_from_phi,
    controlled_from_bv,
    controlled_from_identity,
    rough_integral_compensated,
    rough_integral_riemann,
    left_riemann_curve,
    check_rie,
    stratonovich_integral,
    interpolated_area,
    follmer_ito_residual,
    davie_sup,
    ChenRelationError,
    RieNotVerifiedError,
)

__version__ = "0.1.0"
