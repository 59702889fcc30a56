"""Key-subshot video summarization with a two-layer hierarchical LSTM.

Frame features go in, per-subshot key/non-key probabilities come out.
Everything (cells, backpropagation through time, SGD, metrics) is built
on plain numpy so each step is inspectable and exactly gradient-checked.
"""

from .data import (
    FrameFeatureSequence,
    LabeledVideo,
    SubshotLabel,
    encode_label,
    generate_synthetic,
    load_dataset,
    normalize_length,
    save_dataset,
)
from .evaluation import (
    EvalReport,
    FlatBaseline,
    SummarySelection,
    evaluate_dataset,
    flat_baseline_forward,
    init_flat_baseline,
    make_flat_predictor,
    make_hrnn_predictor,
    precision_recall_f,
    select_key_subshots,
    train_flat_baseline,
)
from .model import (
    HrnnModel,
    KeynessPrediction,
    PredictionHead,
    SubshotEncoding,
    SubshotGrid,
    encode_subshot,
    forward,
    load_checkpoint,
    load_model,
    predict_keyness,
    save_checkpoint,
    save_model,
    segment_into_subshots,
    step_cost,
)
from .numerics import ShapeError, affine, make_rng, sigmoid, stable_softmax, tanh_vec
from .recurrent import (
    LstmParameters,
    LstmState,
    LstmStepTrace,
    RnnParameters,
    lstm_step,
    rnn_step,
    run_bidirectional,
    run_lstm,
)
from .training import (
    HrnnGradients,
    NumericError,
    TrainingConfig,
    backward,
    batch_objective,
    cross_entropy,
    finite_difference_gradient,
    gradient_check,
    init_model,
    run_gradient_checks,
    sgd_train,
    video_loss,
)

__version__ = "0.1.0"
