"""Material classification from full-waveform flash-lidar return pulses."""

from .core import (
    N_SAMPLES,
    PROTOCOL_REPETITIONS,
    PROTOCOL_YAW_GRID,
    UNKNOWN,
    CaptureMeta,
    Dataset,
    FormatError,
    LabeledSample,
    MaterialClass,
    Waveform,
    read_dataset,
    split_by_repetition,
    write_dataset,
)
from .evaluation import (
    ConfusionCounts,
    ExperimentSpec,
    IouReport,
    SceneSpec,
    confusion,
    iou_report,
    map_semantic_to_material,
    run_experiment,
    segmentation_ablation,
)
from .forest import Forest, ForestParams, feature_importance, predict_forest, train_forest
from .simgen import (
    MaterialProfile,
    ProtocolSpec,
    SensorModel,
    default_material_bank,
    default_sensor_model,
    generate_dataset,
    label_board_points,
    simulate_return,
)
from .tcn import TcnModel, TcnParams, forward, init_tcn, loss_and_grads, predict_tcn, train_tcn

__version__ = "0.1.0"
