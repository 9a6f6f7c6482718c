"""Trust-level classification from multimodal physiological recordings.

Pipeline: block-placement records are scored into a discounted
failure-risk vector; four physiological channels are cut into end-aligned
windows on a shared hop grid; a bias-free pre-norm transformer with
risk-token cross-attention classifies each analysis frame into 3 or 7
trust levels. A seeded synthetic-session generator provides an exact
ground-truth oracle for the whole chain.
"""

from .cp import (
    FailureRiskVector,
    block_skew,
    failure_risk_step,
    failure_risk_vector,
    support_center,
)
from .dataset import FrameArrays, apply_signal_mask, build_frame_arrays, split_by_step
from .errors import (
    ConfigError,
    FormatError,
    MissingChannel,
    NotEnoughSamples,
    PipelineError,
    SessionWriteError,
    ShapeError,
    SplitError,
    TrainingError,
    ValidationError,
)
from .metrics import MetricsReport, compute_metrics
from .model import (
    ModelConfig,
    TrustClassifier,
    load_checkpoint,
    revin_denormalize,
    revin_normalize,
    save_checkpoint,
)
from .session import (
    BlockPlacement,
    ChannelKind,
    LabelEntry,
    LabelTrack,
    Session,
    SignalChannel,
    load_session,
    save_session,
)
from .stats import one_way_anova
from .synth import SimConfig, SubjectParams, sample_subject, simulate_task
from .train import TrainConfig, TrainResult, evaluate, train
from .windows import (
    AnalysisFrame,
    Label3,
    WindowingConfig,
    attach_labels,
    frame_stream,
    label_from_muir,
    window_slice,
)

__version__ = "0.1.0"
