"""Industrial park load toolkit.

Spectral denoising with automatic mode-count selection, convolutional feature
extraction over load/price/calendar channels, recurrent per-device power
disaggregation, and the evaluation and data plumbing around them.
"""

from .errors import (
    DegenerateSignalError,
    InvalidArgumentError,
    NumericFailureError,
    ParseError,
    TrainingDivergedError,
)
from .series import (
    Spectrum,
    TimeSeries,
    add_noise_at_snr,
    analytic_signal,
    correlation_coefficient,
    dft,
    idft,
    instantaneous_frequency_mean,
)
from .vmd import ModeSet, VmdParams, center_frequency, convergence_residual, decompose, wiener_mode_update
from .denoise import KSelectionReport, curvature, denoise, select_k
from .cnn import CnnWeights, FeatureVector, InputMatrix, cnn_forward
from .sru import (
    DeviceEstimate,
    DisaggregationModel,
    SruWeights,
    load_model,
    model_forward,
    save_model,
    sru_layer_forward,
)
from .train import (
    LossHistory,
    TrainConfig,
    TrainingBatch,
    backward,
    finite_difference_check,
    moving_average,
    train,
)
from .data import (
    ClusterReport,
    DeviceSpec,
    ParkDataset,
    cluster_profiles,
    generate_park,
    load_csv,
    normalize,
    slice_days,
    write_csv,
)
from .metrics import Confusion, EvalReport, MetricSet, confusion, evaluate_disaggregation, metrics

__version__ = "0.1.0"
