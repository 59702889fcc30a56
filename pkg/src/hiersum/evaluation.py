"""Key-subshot selection, precision/recall/F-measure, flat LSTM baselines.

Selection ranks subshots by predicted key-probability and keeps the top
ceil(budget_fraction * m), ties broken toward the earlier subshot; a
threshold mode (keep everything with p_key > threshold) is available
instead. Summaries are scored against binarized references (raw score
>= 0.5) by exact index match on the shared grid, macro-averaged over
videos. Baselines and the hierarchical model run through the identical
selection and metric code.

The flat baselines mirror the classic setup this model competes with: one
LSTM (or a bidirectional pair) over the video reduced to `flat_length`
steps by mean pooling consecutive frame blocks or by uniform sampling,
with the same tanh+softmax head applied per step and the per-step
probabilities averaged back onto the subshot grid.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import sample_indices
from .model import KeynessPrediction, _features_of, forward, make_grid
from .numerics import ShapeError, make_rng, stable_softmax, tanh_vec
from .recurrent import LstmParameters, run_bidirectional, run_lstm
from .training import (
    LOG_EPS,
    NumericError,
    _summed_ce,
    _target_of,
    lstm_backward,
)

__all__ = [
    "FLAT_VARIANTS",
    "SummarySelection",
    "VideoScore",
    "EvalReport",
    "FlatBaseline",
    "select_key_subshots",
    "precision_recall_f",
    "evaluate_dataset",
    "make_hrnn_predictor",
    "make_flat_predictor",
    "format_report",
    "reduce_sequence",
    "init_flat_baseline",
    "flat_baseline_forward",
    "flat_named_arrays",
    "train_flat_baseline",
]

FLAT_VARIANTS = ("single-mean", "single-sample", "bi-mean", "bi-sample")


@dataclass
class SummarySelection:
    """Chosen subshot indices (ascending) and the budget that produced them."""

    selected: tuple
    budget_fraction: float


@dataclass
class VideoScore:
    video_id: str
    precision: float
    recall: float
    f_measure: float


@dataclass
class EvalReport:
    precision: float
    recall: float
    f_measure: float
    per_video: list


def _budget_count(budget_fraction, m):
    if not 0.0 < budget_fraction <= 1.0:
        raise ValueError(f"budget fraction must be in (0, 1], got {budget_fraction}")
    # tiny slack keeps exact products like 0.2 * 20 from ceiling up
    return min(m, math.ceil(budget_fraction * m - 1e-9))


def select_key_subshots(predictions, budget_fraction=0.15, threshold=None):
    """Rank subshots by key probability; see module docstring for the rules."""
    if not predictions:
        raise ValueError("cannot select from zero predictions")
    key_probs = [float(pred.p[1]) for pred in predictions]
    if threshold is not None:
        chosen = tuple(t for t, q in enumerate(key_probs) if q > threshold)
        return SummarySelection(selected=chosen, budget_fraction=1.0)
    m = len(key_probs)
    ranked = sorted(range(m), key=lambda t: (-key_probs[t], t))
    keep = ranked[: _budget_count(budget_fraction, m)]
    return SummarySelection(
        selected=tuple(sorted(keep)), budget_fraction=budget_fraction
    )


def precision_recall_f(selected, reference, m):
    """Exact-index match: P over the generated set, R over the reference set."""
    selected = set(selected)
    reference = set(reference)
    for index_set, name in ((selected, "selected"), (reference, "reference")):
        if any(not 0 <= t < m for t in index_set):
            raise ValueError(f"{name} indices must lie in [0, {m})")
    hits = len(selected & reference)
    precision = hits / len(selected) if selected else 0.0
    recall = hits / len(reference) if reference else 0.0
    if precision + recall > 0:
        f_measure = 2 * precision * recall / (precision + recall)
    else:
        f_measure = 0.0
    return EvalReport(
        precision=precision, recall=recall, f_measure=f_measure, per_video=[]
    )


def make_hrnn_predictor(model, **fwd_kwargs):
    def predict(seq):
        _, predictions, _ = forward(model, seq, **fwd_kwargs)
        return predictions

    return predict


def make_flat_predictor(baseline, subshot_length):
    def predict(seq):
        return flat_baseline_forward(baseline, seq, subshot_length)

    return predict


def evaluate_dataset(predictor, dataset, budget_fraction=0.15, threshold=None, workers=1):
    """Macro-averaged P/R/F of a predictor over labeled videos.

    `predictor` maps a frame-feature sequence to per-subshot
    KeynessPredictions; both the hierarchical model and the flat baselines
    are wrapped into this shape so they share the whole evaluation path.
    """
    if not dataset:
        raise ValueError("cannot evaluate on an empty split")

    def score_one(video):
        predictions = predictor(video.sequence)
        if len(predictions) != len(video.labels):
            raise ValueError(
                f"video {video.sequence.video_id}: predictor returned "
                f"{len(predictions)} predictions for {len(video.labels)} labels"
            )
        selection = select_key_subshots(predictions, budget_fraction, threshold)
        reference = {
            t for t, label in enumerate(video.labels) if label.raw_score >= 0.5
        }
        scores = precision_recall_f(
            selection.selected, reference, len(predictions)
        )
        return VideoScore(
            video_id=video.sequence.video_id,
            precision=scores.precision,
            recall=scores.recall,
            f_measure=scores.f_measure,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_video = list(pool.map(score_one, dataset))
    else:
        per_video = [score_one(video) for video in dataset]
    return EvalReport(
        precision=float(np.mean([v.precision for v in per_video])),
        recall=float(np.mean([v.recall for v in per_video])),
        f_measure=float(np.mean([v.f_measure for v in per_video])),
        per_video=per_video,
    )


def format_report(report):
    """Tab-separated text: header, one row per video, then the ALL macro row."""
    lines = ["video_id\tprecision\trecall\tf_measure"]
    for v in report.per_video:
        lines.append(
            f"{v.video_id}\t{v.precision:.6f}\t{v.recall:.6f}\t{v.f_measure:.6f}"
        )
    lines.append(
        f"ALL\t{report.precision:.6f}\t{report.recall:.6f}\t{report.f_measure:.6f}"
    )
    return "\n".join(lines) + "\n"


# --- flat LSTM baselines -------------------------------------------------


@dataclass
class FlatBaseline:
    """A flat LSTM (optionally bidirectional) with a per-step keyness head."""

    variant: str
    fwd: LstmParameters
    bwd: LstmParameters | None
    W: np.ndarray  # 2 x hidden (single) or 2 x 2*hidden (bi)
    b: np.ndarray  # 2
    flat_length: int

    @property
    def bidirectional(self):
        return self.bwd is not None

    @property
    def pooling(self):
        return self.variant.split("-")[1]


def _check_variant(variant):
    if variant not in FLAT_VARIANTS:
        raise ValueError(f"variant must be one of {FLAT_VARIANTS}, got {variant!r}")


def init_flat_baseline(
    variant, d_feat, hidden, flat_length=80, init_scale=0.08, seed=0
):
    _check_variant(variant)
    rng = make_rng(seed)

    def lstm(input_size, size):
        draw = lambda shape: rng.uniform(-init_scale, init_scale, size=shape)
        return LstmParameters(
            W_ix=draw((size, input_size)),
            W_fx=draw((size, input_size)),
            W_ox=draw((size, input_size)),
            W_gx=draw((size, input_size)),
            U_ih=draw((size, size)),
            U_fh=draw((size, size)),
            U_oh=draw((size, size)),
            U_gh=draw((size, size)),
            b_i=np.zeros(size),
            b_f=np.zeros(size),
            b_o=np.zeros(size),
            b_g=np.zeros(size),
        )

    bidirectional = variant.startswith("bi-")
    fwd = lstm(d_feat, hidden)
    bwd = lstm(d_feat, hidden) if bidirectional else None
    width = 2 * hidden if bidirectional else hidden
    W = rng.uniform(-init_scale, init_scale, size=(2, width))
    return FlatBaseline(
        variant=variant, fwd=fwd, bwd=bwd, W=W, b=np.zeros(2), flat_length=flat_length
    )


def flat_named_arrays(baseline):
    pairs = []
    for layer_name in ("fwd", "bwd"):
        layer = getattr(baseline, layer_name)
        if layer is None:
            continue
        for field_name, array in zip(
            (f.name for f in layer.__dataclass_fields__.values()), layer.arrays()
        ):
            pairs.append((f"{layer_name}.{field_name}", array))
    pairs.append(("W", baseline.W))
    pairs.append(("b", baseline.b))
    return pairs


def _copy_flat(baseline):
    return FlatBaseline(
        variant=baseline.variant,
        fwd=baseline.fwd.copy(),
        bwd=baseline.bwd.copy() if baseline.bwd is not None else None,
        W=baseline.W.copy(),
        b=baseline.b.copy(),
        flat_length=baseline.flat_length,
    )


def _zeros_flat(baseline):
    return FlatBaseline(
        variant=baseline.variant,
        fwd=LstmParameters.zeros(baseline.fwd.input_size, baseline.fwd.hidden_size),
        bwd=(
            LstmParameters.zeros(baseline.bwd.input_size, baseline.bwd.hidden_size)
            if baseline.bwd is not None
            else None
        ),
        W=np.zeros_like(baseline.W),
        b=np.zeros_like(baseline.b),
        flat_length=baseline.flat_length,
    )


def reduce_sequence(features, flat_length, pooling):
    """Shrink T frames to at most flat_length steps by pooling or sampling.

    Videos already at or under the target length pass through unchanged.
    Mean pooling averages consecutive proportional frame blocks; sampling
    keeps uniformly spaced frames (first and last always included).
    """
    features = np.asarray(features, dtype=np.float64)
    total = features.shape[0]
    if total <= flat_length:
        return features
    if pooling == "sample":
        return features[sample_indices(total, flat_length)]
    if pooling == "mean":
        edges = (np.arange(flat_length + 1) * total) // flat_length
        return np.stack(
            [features[edges[j] : edges[j + 1]].mean(axis=0) for j in range(flat_length)]
        )
    raise ValueError(f"pooling must be 'mean' or 'sample', got {pooling!r}")


def _step_blocks(n_steps, m):
    """Map flat steps onto m subshots; every subshot gets at least one step."""
    blocks = [[] for _ in range(m)]
    for j in range(n_steps):
        blocks[(j * m) // n_steps].append(j)
    for t in range(m):
        if not blocks[t]:
            blocks[t].append(min(n_steps - 1, (t * n_steps) // m))
    return blocks


def _flat_forward_full(baseline, features, m):
    reduced = reduce_sequence(features, baseline.flat_length, baseline.pooling)
    steps = list(reduced)
    if baseline.bidirectional:
        pairs, fwd_traces, bwd_traces = run_bidirectional(
            baseline.fwd, baseline.bwd, steps
        )
        inputs = [np.concatenate(pair) for pair in pairs]
    else:
        hiddens, _, fwd_traces = run_lstm(baseline.fwd, steps)
        bwd_traces = None
        inputs = hiddens
    logits = [tanh_vec(baseline.W @ u + baseline.b) for u in inputs]
    probs = [stable_softmax(a) for a in logits]
    blocks = _step_blocks(len(steps), m)
    pooled = [np.mean([probs[j] for j in block], axis=0) for block in blocks]
    return {
        "reduced": reduced,
        "fwd_traces": fwd_traces,
        "bwd_traces": bwd_traces,
        "inputs": inputs,
        "logits": logits,
        "probs": probs,
        "blocks": blocks,
        "pooled": pooled,
    }


def flat_baseline_forward(baseline, seq, subshot_length):
    """Per-subshot keyness from a flat LSTM over the reduced sequence."""
    features = _features_of(seq)
    if features.shape[1] != baseline.fwd.input_size:
        raise ShapeError(
            f"video has {features.shape[1]}-dim features, baseline expects "
            f"{baseline.fwd.input_size}"
        )
    grid = make_grid(features.shape[0], subshot_length)
    full = _flat_forward_full(baseline, features, grid.subshot_count)
    return [
        KeynessPrediction(p=p, subshot_index=t) for t, p in enumerate(full["pooled"])
    ]


def _softmax_vjp(p, upstream):
    return p * (upstream - float(np.dot(upstream, p)))


def _flat_video_grads(baseline, features, labels):
    """Loss and gradients of one video under a flat baseline."""
    m = len(labels)
    full = _flat_forward_full(baseline, features, m)
    loss = _summed_ce(full["pooled"], labels)

    hidden = baseline.fwd.hidden_size
    n_steps = len(full["inputs"])
    grads = _zeros_flat(baseline)
    d_prob = [np.zeros(2) for _ in range(n_steps)]
    for t, block in enumerate(full["blocks"]):
        g = _target_of(labels[t])
        d_pooled = -g / (full["pooled"][t] + LOG_EPS)
        for j in block:
            d_prob[j] += d_pooled / len(block)
    dh_fwd = [np.zeros(hidden) for _ in range(n_steps)]
    dh_bwd = [np.zeros(hidden) for _ in range(n_steps)]
    for j in range(n_steps):
        da = _softmax_vjp(full["probs"][j], d_prob[j])
        a = full["logits"][j]
        dz = (1.0 - a * a) * da
        grads.W += np.outer(dz, full["inputs"][j])
        grads.b += dz
        du = baseline.W.T @ dz
        dh_fwd[j] = du[:hidden]
        if baseline.bidirectional:
            dh_bwd[j] = du[hidden:]
    fwd_grads, _ = lstm_backward(baseline.fwd, full["fwd_traces"], dh_fwd)
    grads.fwd = fwd_grads
    if baseline.bidirectional:
        bwd_grads, _ = lstm_backward(
            baseline.bwd, full["bwd_traces"], dh_bwd[::-1]
        )
        grads.bwd = bwd_grads
    return loss, grads


def train_flat_baseline(baseline, dataset, config):
    """Per-video SGD for a flat baseline; mirrors the hierarchical loop."""
    config.validate()
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    trained = _copy_flat(baseline)
    rng = make_rng(config.seed)
    order = list(range(len(dataset)))
    history = []
    for epoch in range(1, config.epochs + 1):
        if config.shuffle:
            rng.shuffle(order)
        for idx in order:
            video = dataset[idx]
            loss, grads = _flat_video_grads(
                trained, video.sequence.features, video.labels
            )
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss {loss} on video "
                    f"{video.sequence.video_id} in epoch {epoch}"
                )
            for (_, g), (_, p) in zip(
                flat_named_arrays(grads), flat_named_arrays(trained)
            ):
                p -= config.learning_rate * g
        objective = sum(
            _flat_video_loss(trained, video.sequence.features, video.labels)
            for video in dataset
        )
        history.append(objective / len(dataset))
    return trained, history


def _flat_video_loss(baseline, features, labels):
    full = _flat_forward_full(baseline, features, len(labels))
    return _summed_ce(full["pooled"], labels)
