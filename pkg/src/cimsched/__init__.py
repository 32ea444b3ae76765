"""Scheduling toolkit and cycle-level simulator for tiled compute-in-memory
accelerators: weight-duplication mapping, cross-layer set scheduling, and
utilization/speedup reporting."""

from .ir import (
    BASE_OPS,
    GraphError,
    KernelSpec,
    LayerNode,
    NNGraph,
    ParseError,
    ShapeError,
    TensorShape,
    canonicalize,
    fold_batchnorm,
    infer_shapes,
    load_model,
    parse_model,
    prepare,
)
from .mapping import (
    ArchConfig,
    LayerMapping,
    MappingError,
    MappingPlan,
    apply_duplication,
    build_mapping,
    duplication_objective,
    intra_layer_latency,
    min_pe_requirement,
    pe_count,
    solve_duplication,
    solve_graph_duplication,
)
from .regions import Region, full_region, propagate_to_base, region_backward
from .scheduling import (
    Schedule,
    ScheduledSet,
    SchedulingError,
    SetDependencyGraph,
    SetPartition,
    determine_dependencies,
    determine_sets,
    order_sets,
    schedule_asap,
    schedule_sequential,
)
from .simulate import (
    SimReport,
    SimulationError,
    check_speedup_relation,
    layer_by_layer_baseline,
    simulate,
)

__version__ = "0.1.0"
