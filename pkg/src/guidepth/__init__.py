"""Depth completion with repetitive image guidance on a tape autodiff core."""

from .autodiff import Tape, Tensor, from_grid
from .data import (
    DensityStats,
    DepthMap,
    GaussianPattern,
    GridPattern,
    RegionMask,
    Scene,
    UniformPattern,
    density_stats,
    parse_pattern,
    sample_sparse,
    synth_scene,
)
from .depthio import (
    METRICS_HEADER,
    depth_read,
    depth_write,
    read_depth_pgm16,
    read_metrics_csv,
    read_pfm,
    read_region_mask,
    write_depth_pgm16,
    write_metrics_csv,
    write_pfm,
    write_region_mask,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    DimensionError,
    EvaluationError,
    FormatError,
    UsageError,
)
from .experiment import (
    GRADCHECK_SCOPES,
    Adam,
    DataConfig,
    ExperimentConfig,
    OptimizerConfig,
    OutputConfig,
    RunRecord,
    baseline_mean_fill,
    build_dataset,
    cmd_eval,
    cmd_gradcheck,
    cmd_memreport,
    cmd_train,
    evaluate_model,
    predict_scene,
    train_step,
    unbind_model,
)
from .gradcheck import GradCheckReport, grad_check
from .guidance import (
    KernelMeter,
    af_fuse,
    cf_reference,
    dc_reference,
    eg_unit,
    init_af_params,
    init_eg_params,
    init_rg_params,
    rg_module,
)
from .layers import (
    BatchNorm,
    LayerParams,
    SeparableParams,
    batch_norm,
    channel_mix,
    channel_scale,
    channel_softmax,
    conv2d,
    depthwise_separable_conv,
    global_avg_pool,
    init_conv,
    init_separable,
    init_tconv,
    primitive_layer,
    transposed_conv2d,
)
from .memory import MemoryCost, MemoryModel, MemoryReport, memory_cost, memory_report
from .metrics import (
    MetricsReport,
    aggregate_metrics,
    compute_metrics,
    loss_recons,
    loss_recons_grad,
    masked_mse,
)
from .network import (
    CompletionNet,
    HourglassConfig,
    dense_aggregate,
    depth_branch_forward,
    drhn_unit_forward,
    encode_semantic,
    encode_sparse,
    load_checkpoint,
    load_model,
    rignetpp_forward,
    save_checkpoint,
    semantic_branch_forward,
)
from .propagation import (
    DIRECTIONS,
    NeighborSet,
    batch_neighbors,
    neighbors_cspn,
    neighbors_raspn,
    neighbors_spn,
    normalize_affinity,
    oracle_propagate,
    propagate,
    spn_step,
    update_matrix,
)

__version__ = "0.1.0"
