"""Two-layer hierarchical LSTM for key-subshot scoring.

A video arrives as a T x d matrix of per-frame feature vectors. It is cut
evenly into subshots of `s` frames (the last one zero-padded). The first
layer runs an LSTM over each subshot; the final hidden state is that
subshot's encoding. The second layer runs a bidirectional LSTM over the
sequence of encodings, and a small head turns each step into a
(non-key, key) probability pair:

    p_t = softmax(tanh(W_p [h_fwd_t, h_bwd_t, enc_t] + b_p))

The hierarchy is what keeps the sequential step count low: a flat LSTM
needs T steps, the two layers need s + 2 * ceil(T / s).

Model files ("HRNN1" format)
----------------------------
Little-endian throughout: the magic bytes b"HRNN1", then d_feat, d1, d2, s
as uint32, then every parameter array as float64 row-major in a fixed
order: layer1, layer2_fwd, layer2_bwd (each LSTM's twelve arrays in
LstmParameters field order), then head W_p and b_p. Round-trips are
bit-exact. A checkpoint is the same payload followed by a uint32 epoch
counter.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, stable_softmax, tanh_vec
from .recurrent import (
    LstmParameters,
    run_bidirectional,
    run_lstm,
    run_lstm_batch,
)

__all__ = [
    "SubshotGrid",
    "SubshotEncoding",
    "PredictionHead",
    "KeynessPrediction",
    "HrnnModel",
    "ForwardTrace",
    "make_grid",
    "segment_into_subshots",
    "encode_subshot",
    "predict_keyness",
    "forward",
    "step_cost",
    "named_arrays",
    "save_model",
    "load_model",
    "save_checkpoint",
    "load_checkpoint",
]

MODEL_MAGIC = b"HRNN1"


@dataclass(frozen=True)
class SubshotGrid:
    """Bookkeeping for the even segmentation of T frames into subshots."""

    total_frames: int
    subshot_length: int
    subshot_count: int
    pad_frames: int
    stride: int


def make_grid(total_frames, subshot_length, stride=None):
    if total_frames < 1:
        raise ShapeError("video must contain at least one frame")
    if subshot_length < 1:
        raise ShapeError("subshot length must be positive")
    stride = subshot_length if stride is None else stride
    if not 1 <= stride <= subshot_length:
        raise ShapeError(f"stride must be in [1, {subshot_length}], got {stride}")
    count = -(-total_frames // stride)
    pad = (count - 1) * stride + subshot_length - total_frames
    return SubshotGrid(
        total_frames=total_frames,
        subshot_length=subshot_length,
        subshot_count=count,
        pad_frames=pad,
        stride=stride,
    )


def _features_of(seq):
    features = np.asarray(getattr(seq, "features", seq), dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(f"frame features must be T x d, got shape {features.shape}")
    return features


def segment_into_subshots(seq, subshot_length, stride=None):
    """Cut a frame-feature sequence into subshots of fixed length.

    With the default stride (= subshot_length) the windows tile the video
    without overlap and the last one is zero-padded; stripping the padding
    and concatenating reproduces the input exactly. A smaller stride gives
    overlapping windows. Returns (grid, list of subshot arrays, list of
    per-subshot real frame counts).
    """
    features = _features_of(seq)
    total = features.shape[0]
    grid = make_grid(total, subshot_length, stride)
    subshots = []
    real_lengths = []
    for k in range(grid.subshot_count):
        start = k * grid.stride
        chunk = features[start : start + subshot_length]
        real = chunk.shape[0]
        if real < subshot_length:
            padded = np.zeros((subshot_length, features.shape[1]))
            padded[:real] = chunk
            chunk = padded
        subshots.append(chunk)
        real_lengths.append(real)
    return grid, subshots, real_lengths


@dataclass
class SubshotEncoding:
    """Final layer-1 hidden state of one subshot."""

    vector: np.ndarray
    subshot_index: int


@dataclass
class PredictionHead:
    W_p: np.ndarray  # 2 x (2 * d2 + d1)
    b_p: np.ndarray  # 2

    def copy(self):
        return PredictionHead(W_p=self.W_p.copy(), b_p=self.b_p.copy())


@dataclass
class KeynessPrediction:
    """(non-key, key) probability pair for one subshot."""

    p: np.ndarray
    subshot_index: int


@dataclass
class HrnnModel:
    layer1: LstmParameters
    layer2_fwd: LstmParameters
    layer2_bwd: LstmParameters
    head: PredictionHead
    subshot_length: int

    @property
    def feature_size(self):
        return self.layer1.input_size

    @property
    def hidden1(self):
        return self.layer1.hidden_size

    @property
    def hidden2(self):
        return self.layer2_fwd.hidden_size

    def validate(self):
        d1, d2 = self.hidden1, self.hidden2
        if self.layer2_fwd.input_size != d1 or self.layer2_bwd.input_size != d1:
            raise ShapeError("second-layer input size must equal layer-1 hidden size")
        if self.layer2_bwd.hidden_size != d2:
            raise ShapeError("both second-layer directions must share a hidden size")
        if self.head.W_p.shape != (2, 2 * d2 + d1):
            raise ShapeError(
                f"head must be 2 x {2 * d2 + d1}, got {self.head.W_p.shape}"
            )
        if self.head.b_p.shape != (2,):
            raise ShapeError(f"head bias must have 2 entries, got {self.head.b_p.shape}")
        if self.subshot_length < 1:
            raise ShapeError("subshot length must be positive")
        return self

    def copy(self):
        return HrnnModel(
            layer1=self.layer1.copy(),
            layer2_fwd=self.layer2_fwd.copy(),
            layer2_bwd=self.layer2_bwd.copy(),
            head=self.head.copy(),
            subshot_length=self.subshot_length,
        )


def named_arrays(obj):
    """(name, array) pairs over an HrnnModel-shaped object, in serialization order.

    Works on anything with layer1/layer2_fwd/layer2_bwd LstmParameters and
    a head, i.e. both models and gradient bundles.
    """
    pairs = []
    for layer_name in ("layer1", "layer2_fwd", "layer2_bwd"):
        layer = getattr(obj, layer_name)
        for field_name, array in zip(
            (f.name for f in layer.__dataclass_fields__.values()), layer.arrays()
        ):
            pairs.append((f"{layer_name}.{field_name}", array))
    pairs.append(("head.W_p", obj.head.W_p))
    pairs.append(("head.b_p", obj.head.b_p))
    return pairs


def encode_subshot(layer1, subshot, index=0):
    """Encode one subshot as the final hidden state of the layer-1 LSTM."""
    subshot = np.asarray(subshot, dtype=np.float64)
    if subshot.ndim != 2:
        raise ShapeError(f"subshot must be s x d, got shape {subshot.shape}")
    hiddens, final, _ = run_lstm(layer1, list(subshot))
    return SubshotEncoding(vector=final.h, subshot_index=index)


def predict_keyness(head, h_fwd, h_bwd, encoding, index=0):
    """Head on the concatenation [h_fwd, h_bwd, encoding], in that order."""
    u = np.concatenate([h_fwd, h_bwd, encoding])
    if head.W_p.shape[1] != u.shape[0]:
        raise ShapeError(
            f"head expects {head.W_p.shape[1]} inputs, got {u.shape[0]}"
        )
    logits = tanh_vec(head.W_p @ u + head.b_p)
    return KeynessPrediction(p=stable_softmax(logits), subshot_index=index)


@dataclass
class ForwardTrace:
    """Everything the backward pass needs from one forward pass."""

    grid: SubshotGrid
    layer1_traces: list  # per-step LstmBatchTrace over the subshot batch
    real_lengths: list
    encode_steps: list  # per-subshot step index whose hidden became the encoding
    encodings: np.ndarray  # m x d1
    fwd_traces: list
    bwd_traces: list  # reversed-time order; None when the backward stream is off
    h_fwd: list
    h_bwd: list
    head_inputs: list
    logits: list  # post-tanh activations
    probs: list
    use_backward: bool


def forward(model, seq, use_backward=True, stride=None, masked=False):
    """Full pass over one video.

    Returns (subshot encodings, keyness predictions, trace). With
    use_backward=False the backward second-layer stream is replaced by a
    zero vector, which reduces the head to a function of the forward
    stream and the encoding (the single-direction variant). With
    masked=True a padded final subshot is encoded by the hidden state at
    its last real frame instead of the hidden after the padded zeros.
    """
    features = _features_of(seq)
    if features.shape[1] != model.feature_size:
        raise ShapeError(
            f"video has {features.shape[1]}-dim features, model expects "
            f"{model.feature_size}"
        )
    grid, subshots, real_lengths = segment_into_subshots(
        features, model.subshot_length, stride
    )
    batch = np.stack(subshots)
    _, layer1_traces = run_lstm_batch(model.layer1, batch)
    if masked:
        encode_steps = [r - 1 for r in real_lengths]
    else:
        encode_steps = [model.subshot_length - 1] * grid.subshot_count
    encodings = np.stack(
        [layer1_traces[step].H[k] for k, step in enumerate(encode_steps)]
    )
    enc_list = list(encodings)

    if use_backward:
        pairs, fwd_traces, bwd_traces = run_bidirectional(
            model.layer2_fwd, model.layer2_bwd, enc_list
        )
        h_fwd = [p[0] for p in pairs]
        h_bwd = [p[1] for p in pairs]
    else:
        h_fwd, _, fwd_traces = run_lstm(model.layer2_fwd, enc_list)
        h_bwd = [np.zeros(model.hidden2)] * grid.subshot_count
        bwd_traces = None

    head_inputs = []
    logits = []
    probs = []
    predictions = []
    for t in range(grid.subshot_count):
        u = np.concatenate([h_fwd[t], h_bwd[t], encodings[t]])
        a = tanh_vec(model.head.W_p @ u + model.head.b_p)
        p = stable_softmax(a)
        head_inputs.append(u)
        logits.append(a)
        probs.append(p)
        predictions.append(KeynessPrediction(p=p, subshot_index=t))

    encoding_objs = [
        SubshotEncoding(vector=encodings[t], subshot_index=t)
        for t in range(grid.subshot_count)
    ]
    trace = ForwardTrace(
        grid=grid,
        layer1_traces=layer1_traces,
        real_lengths=real_lengths,
        encode_steps=encode_steps,
        encodings=encodings,
        fwd_traces=fwd_traces,
        bwd_traces=bwd_traces,
        h_fwd=h_fwd,
        h_bwd=h_bwd,
        head_inputs=head_inputs,
        logits=logits,
        probs=probs,
        use_backward=use_backward,
    )
    return encoding_objs, predictions, trace


def step_cost(total_frames, subshot_length):
    """Sequential cell evaluations: hierarchical s + 2*ceil(T/s) versus flat T."""
    if total_frames < 1 or subshot_length < 1:
        raise ShapeError("step_cost needs positive frame and subshot counts")
    m = -(-total_frames // subshot_length)
    return subshot_length + 2 * m, total_frames


def _pack_u32(*values):
    return struct.pack("<" + "I" * len(values), *values)


def save_model(path, model):
    """Write the HRNN1 binary format; round-trips bit-exactly."""
    model.validate()
    with open(path, "wb") as fh:
        fh.write(_model_bytes(model))


def _model_bytes(model):
    parts = [MODEL_MAGIC]
    parts.append(
        _pack_u32(
            model.feature_size, model.hidden1, model.hidden2, model.subshot_length
        )
    )
    for _, array in named_arrays(model):
        parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


def _expected_shapes(d_feat, d1, d2):
    shapes = []
    for input_size, hidden in ((d_feat, d1), (d1, d2), (d1, d2)):
        shapes.extend([(hidden, input_size)] * 4)
        shapes.extend([(hidden, hidden)] * 4)
        shapes.extend([(hidden,)] * 4)
    shapes.append((2, 2 * d2 + d1))
    shapes.append((2,))
    return shapes


def _read_model(blob, path):
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ValueError(f"{path}: offset 0: bad magic, expected {MODEL_MAGIC!r}")
    offset = len(MODEL_MAGIC)
    if len(blob) < offset + 16:
        raise ValueError(f"{path}: offset {offset}: truncated dimension header")
    d_feat, d1, d2, s = struct.unpack_from("<IIII", blob, offset)
    offset += 16
    if min(d_feat, d1, d2, s) < 1:
        raise ValueError(f"{path}: offset {offset - 16}: dimensions must be positive")
    arrays = []
    for shape in _expected_shapes(d_feat, d1, d2):
        count = int(np.prod(shape))
        nbytes = 8 * count
        if len(blob) < offset + nbytes:
            raise ValueError(
                f"{path}: offset {offset}: truncated parameter array {shape}"
            )
        arrays.append(
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += nbytes
    lstms = [
        LstmParameters(*arrays[i : i + 12]) for i in (0, 12, 24)
    ]
    head = PredictionHead(W_p=arrays[36], b_p=arrays[37])
    model = HrnnModel(
        layer1=lstms[0],
        layer2_fwd=lstms[1],
        layer2_bwd=lstms[2],
        head=head,
        subshot_length=s,
    ).validate()
    return model, offset


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    model, offset = _read_model(blob, path)
    if offset != len(blob):
        raise ValueError(
            f"{path}: offset {offset}: {len(blob) - offset} unexpected trailing bytes"
        )
    return model


def save_checkpoint(path, model, epoch):
    """Model payload followed by a uint32 epoch counter."""
    with open(path, "wb") as fh:
        fh.write(_model_bytes(model))
        fh.write(_pack_u32(epoch))


def load_checkpoint(path):
    """Read a checkpoint, or a plain model file (epoch reported as 0)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    model, offset = _read_model(blob, path)
    trailing = len(blob) - offset
    if trailing == 0:
        return model, 0
    if trailing != 4:
        raise ValueError(
            f"{path}: offset {offset}: expected a 4-byte epoch counter, "
            f"found {trailing} bytes"
        )
    (epoch,) = struct.unpack_from("<I", blob, offset)
    return model, epoch
