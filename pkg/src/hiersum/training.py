"""Objective, exact backpropagation through time, FD oracle, SGD loop.

The per-video loss is the summed cross-entropy between each subshot's
predicted (non-key, key) pair and its target; the dataset objective is the
mean of per-video losses. Gradients are computed analytically by unrolling
both layers and the head, and are checked against central finite
differences (the two code paths share nothing but the forward pass).
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import HrnnModel, PredictionHead, forward, named_arrays
from .numerics import make_rng
from .recurrent import LstmParameters

__all__ = [
    "LOG_EPS",
    "NumericError",
    "HrnnGradients",
    "TrainingConfig",
    "cross_entropy",
    "video_loss",
    "batch_objective",
    "backward",
    "lstm_backward",
    "lstm_backward_batch",
    "finite_difference_gradient",
    "gradient_check",
    "run_gradient_checks",
    "sgd_train",
    "init_model",
]

LOG_EPS = 1e-12


class NumericError(RuntimeError):
    """A loss or gradient stopped being finite."""


@dataclass
class HrnnGradients:
    """One array per model parameter array, same shapes."""

    layer1: LstmParameters
    layer2_fwd: LstmParameters
    layer2_bwd: LstmParameters
    head: PredictionHead


def zero_gradients(model):
    return HrnnGradients(
        layer1=LstmParameters.zeros(model.feature_size, model.hidden1),
        layer2_fwd=LstmParameters.zeros(model.hidden1, model.hidden2),
        layer2_bwd=LstmParameters.zeros(model.hidden1, model.hidden2),
        head=PredictionHead(
            W_p=np.zeros_like(model.head.W_p), b_p=np.zeros_like(model.head.b_p)
        ),
    )


def _prob_of(p):
    return np.asarray(getattr(p, "p", p), dtype=np.float64)


def _target_of(g):
    return np.asarray(getattr(g, "target", g), dtype=np.float64)


def cross_entropy(p, g):
    """-sum_k g_k * ln(p_k + eps); the eps guards vertex targets."""
    p = _prob_of(p)
    g = _target_of(g)
    return float(-np.sum(g * np.log(p + LOG_EPS)))


def _summed_ce(probs, labels):
    return sum(cross_entropy(p, g) for p, g in zip(probs, labels))


def video_loss(model, seq, labels, **fwd_kwargs):
    """Summed per-subshot cross-entropy for one video."""
    _, predictions, _ = forward(model, seq, **fwd_kwargs)
    if len(labels) != len(predictions):
        raise ValueError(
            f"{len(labels)} labels for {len(predictions)} subshots"
        )
    return _summed_ce([pred.p for pred in predictions], labels)


def batch_objective(model, dataset, **fwd_kwargs):
    """Mean of per-video losses (averaged over videos, not subshots)."""
    if not dataset:
        raise ValueError("cannot evaluate the objective on an empty dataset")
    total = 0.0
    for video in dataset:
        total += video_loss(model, video.sequence, video.labels, **fwd_kwargs)
    return total / len(dataset)


def softmax_ce_logit_grad(p, g):
    """Gradient of -sum g*ln(softmax(a)+eps) with respect to a, given p=softmax(a).

    Exact for the eps-guarded loss; reduces to p - g as eps -> 0.
    """
    r = g * p / (p + LOG_EPS)
    return p * np.sum(r) - r


def lstm_backward(params, traces, dh_list, dc_last=None):
    """Exact gradient of an LSTM run from its per-step traces.

    dh_list supplies the upstream gradient arriving at each step's hidden
    output. Returns (parameter gradients, per-step input gradients).
    """
    grads = LstmParameters.zeros(params.input_size, params.hidden_size)
    dh_next = np.zeros(params.hidden_size)
    dc_next = np.zeros(params.hidden_size) if dc_last is None else dc_last.copy()
    dx_list = [None] * len(traces)
    for t in range(len(traces) - 1, -1, -1):
        tr = traces[t]
        dh = dh_list[t] + dh_next
        tanh_c = np.tanh(tr.c)
        do = dh * tanh_c
        dc = dc_next + dh * tr.o * (1.0 - tanh_c * tanh_c)
        di = dc * tr.g
        dg = dc * tr.i
        df = dc * tr.c_prev
        dc_next = dc * tr.f
        da_i = di * tr.i * (1.0 - tr.i)
        da_f = df * tr.f * (1.0 - tr.f)
        da_o = do * tr.o * (1.0 - tr.o)
        da_g = dg * (1.0 - tr.g * tr.g)
        grads.W_ix += np.outer(da_i, tr.x)
        grads.W_fx += np.outer(da_f, tr.x)
        grads.W_ox += np.outer(da_o, tr.x)
        grads.W_gx += np.outer(da_g, tr.x)
        grads.U_ih += np.outer(da_i, tr.h_prev)
        grads.U_fh += np.outer(da_f, tr.h_prev)
        grads.U_oh += np.outer(da_o, tr.h_prev)
        grads.U_gh += np.outer(da_g, tr.h_prev)
        grads.b_i += da_i
        grads.b_f += da_f
        grads.b_o += da_o
        grads.b_g += da_g
        dx_list[t] = (
            params.W_ix.T @ da_i
            + params.W_fx.T @ da_f
            + params.W_ox.T @ da_o
            + params.W_gx.T @ da_g
        )
        dh_next = (
            params.U_ih.T @ da_i
            + params.U_fh.T @ da_f
            + params.U_oh.T @ da_o
            + params.U_gh.T @ da_g
        )
    return grads, dx_list


def lstm_backward_batch(params, traces, dH_list):
    """Batch counterpart of lstm_backward; parameter gradients sum over rows.

    dH_list holds one (batch x hidden) upstream array per step. Input
    gradients are not materialized (callers so far never need them).
    """
    grads = LstmParameters.zeros(params.input_size, params.hidden_size)
    n = traces[0].X.shape[0]
    dH_next = np.zeros((n, params.hidden_size))
    dC_next = np.zeros((n, params.hidden_size))
    for t in range(len(traces) - 1, -1, -1):
        tr = traces[t]
        dH = dH_list[t] + dH_next
        tanh_c = np.tanh(tr.C)
        dO = dH * tanh_c
        dC = dC_next + dH * tr.O * (1.0 - tanh_c * tanh_c)
        dI = dC * tr.G
        dG = dC * tr.I
        dF = dC * tr.C_prev
        dC_next = dC * tr.F
        da_i = dI * tr.I * (1.0 - tr.I)
        da_f = dF * tr.F * (1.0 - tr.F)
        da_o = dO * tr.O * (1.0 - tr.O)
        da_g = dG * (1.0 - tr.G * tr.G)
        grads.W_ix += da_i.T @ tr.X
        grads.W_fx += da_f.T @ tr.X
        grads.W_ox += da_o.T @ tr.X
        grads.W_gx += da_g.T @ tr.X
        grads.U_ih += da_i.T @ tr.H_prev
        grads.U_fh += da_f.T @ tr.H_prev
        grads.U_oh += da_o.T @ tr.H_prev
        grads.U_gh += da_g.T @ tr.H_prev
        grads.b_i += da_i.sum(axis=0)
        grads.b_f += da_f.sum(axis=0)
        grads.b_o += da_o.sum(axis=0)
        grads.b_g += da_g.sum(axis=0)
        dH_next = (
            da_i @ params.U_ih
            + da_f @ params.U_fh
            + da_o @ params.U_oh
            + da_g @ params.U_gh
        )
    return grads


def backward(model, seq, labels, trace):
    """Analytic gradient of video_loss for the forward pass behind `trace`."""
    m = trace.grid.subshot_count
    if len(labels) != m:
        raise ValueError(f"{len(labels)} labels for {m} subshots")
    if len(trace.probs) != m or trace.encodings.shape != (m, model.hidden1):
        raise ValueError("trace does not match this model/video pairing")
    d1, d2 = model.hidden1, model.hidden2

    grads = zero_gradients(model)
    dh_fwd = [np.zeros(d2) for _ in range(m)]
    dh_bwd = [np.zeros(d2) for _ in range(m)]
    d_enc = np.zeros((m, d1))
    for t in range(m):
        da = softmax_ce_logit_grad(trace.probs[t], _target_of(labels[t]))
        a = trace.logits[t]
        dz = (1.0 - a * a) * da
        grads.head.W_p += np.outer(dz, trace.head_inputs[t])
        grads.head.b_p += dz
        du = model.head.W_p.T @ dz
        dh_fwd[t] += du[:d2]
        dh_bwd[t] += du[d2 : 2 * d2]
        d_enc[t] += du[2 * d2 :]

    fwd_grads, dx_fwd = lstm_backward(model.layer2_fwd, trace.fwd_traces, dh_fwd)
    grads.layer2_fwd = fwd_grads
    for t in range(m):
        d_enc[t] += dx_fwd[t]

    if trace.use_backward:
        bwd_grads, dx_bwd = lstm_backward(
            model.layer2_bwd, trace.bwd_traces, dh_bwd[::-1]
        )
        grads.layer2_bwd = bwd_grads
        for j in range(m):
            d_enc[m - 1 - j] += dx_bwd[j]

    steps = len(trace.layer1_traces)
    dH_list = [np.zeros((m, d1)) for _ in range(steps)]
    for k in range(m):
        dH_list[trace.encode_steps[k]][k] += d_enc[k]
    grads.layer1 = lstm_backward_batch(model.layer1, trace.layer1_traces, dH_list)
    return grads


def finite_difference_gradient(model, seq, labels, step=1e-6, **fwd_kwargs):
    """Central differences of video_loss over every scalar parameter."""
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    work = model.copy()
    grads = zero_gradients(model)
    grad_arrays = dict(named_arrays(grads))
    for name, array in named_arrays(work):
        out = grad_arrays[name]
        flat = array.reshape(-1)
        gflat = out.reshape(-1)
        for idx in range(flat.shape[0]):
            saved = flat[idx]
            flat[idx] = saved + step
            loss_plus = video_loss(work, seq, labels, **fwd_kwargs)
            flat[idx] = saved - step
            loss_minus = video_loss(work, seq, labels, **fwd_kwargs)
            flat[idx] = saved
            gflat[idx] = (loss_plus - loss_minus) / (2.0 * step)
    return grads


def gradient_check(model, seq, labels, step=1e-6, **fwd_kwargs):
    """Compare BPTT with central differences.

    Returns (per-array relative error dict, worst error). The per-array
    score is ||analytic - numeric|| / (||analytic|| + ||numeric|| + tiny).
    """
    _, _, trace = forward(model, seq, **fwd_kwargs)
    analytic = backward(model, seq, labels, trace)
    numeric = finite_difference_gradient(model, seq, labels, step, **fwd_kwargs)
    errors = {}
    for (name, a), (_, f) in zip(named_arrays(analytic), named_arrays(numeric)):
        denom = np.linalg.norm(a) + np.linalg.norm(f) + 1e-12
        errors[name] = float(np.linalg.norm(a - f) / denom)
    return errors, max(errors.values())


def _random_check_instance(seed, d_feat, d1, d2, s, m):
    """A small random model/video/labels triple for gradient checking.

    Parameters are drawn large (uniform in [-0.9, 0.9], biases included) so
    every gradient sits well above the finite-difference roundoff floor.
    """
    rng = make_rng(seed)
    model = init_model(d_feat, d1, d2, s, init_scale=0.0, seed=0)
    for _, array in named_arrays(model):
        array[...] = rng.uniform(-0.9, 0.9, size=array.shape)
    total = m * s - (seed % s)  # vary the zero-padded tail
    features = rng.normal(0.0, 1.0, size=(total, d_feat))
    raw = rng.uniform(0.0, 1.0, size=m)
    binary = rng.random(m) < 0.5
    raw[binary] = np.round(raw[binary])
    labels = [np.array([1.0 - r, r]) for r in raw]
    return model, features, labels


def run_gradient_checks(
    instances=20, d_feat=3, d1=4, d2=3, s=4, m=3, step=1e-6, seed_base=0, **fwd_kwargs
):
    """Gradient-check a batch of random tiny instances.

    Returns (worst error per parameter array across instances, overall max).
    """
    worst = {}
    for k in range(instances):
        model, features, labels = _random_check_instance(
            seed_base + k, d_feat, d1, d2, s, m
        )
        errors, _ = gradient_check(model, features, labels, step, **fwd_kwargs)
        for name, err in errors.items():
            worst[name] = max(worst.get(name, 0.0), err)
    return worst, max(worst.values())


@dataclass
class TrainingConfig:
    learning_rate: float
    epochs: int
    seed: int = 0
    init_scale: float = 0.08
    grad_clip: float | None = None
    shuffle: bool = True

    def validate(self):
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.init_scale < 0:
            raise ValueError("init scale must be non-negative")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("gradient clip must be positive when set")
        return self


def _clip_gradients(grads, cap):
    total = math.sqrt(
        sum(float(np.sum(a * a)) for _, a in named_arrays(grads))
    )
    if total > cap:
        scale = cap / total
        for _, a in named_arrays(grads):
            a *= scale
    return grads


def sgd_train(model, dataset, config, **fwd_kwargs):
    """Plain per-video SGD; returns (trained copy, per-epoch objective history)."""
    config.validate()
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    trained = model.copy()
    rng = make_rng(config.seed)
    order = list(range(len(dataset)))
    history = []
    for epoch in range(1, config.epochs + 1):
        if config.shuffle:
            rng.shuffle(order)
        for idx in order:
            video = dataset[idx]
            _, predictions, trace = forward(trained, video.sequence, **fwd_kwargs)
            if len(video.labels) != len(predictions):
                raise ValueError(
                    f"video {video.sequence.video_id}: {len(video.labels)} labels "
                    f"for {len(predictions)} subshots"
                )
            loss = _summed_ce([p.p for p in predictions], video.labels)
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss {loss} on video "
                    f"{video.sequence.video_id} in epoch {epoch}"
                )
            grads = backward(trained, video.sequence, video.labels, trace)
            if config.grad_clip is not None:
                _clip_gradients(grads, config.grad_clip)
            for (_, g), (_, p) in zip(named_arrays(grads), named_arrays(trained)):
                p -= config.learning_rate * g
        history.append(batch_objective(trained, dataset, **fwd_kwargs))
    return trained, history


def init_model(d_feat, d1, d2, subshot_length, init_scale=0.08, seed=0):
    """Uniform weights in [-init_scale, init_scale], zero biases.

    Draws happen in a fixed order (layer1, layer2_fwd, layer2_bwd, each
    LSTM's weight matrices in field order, then the head weight), so one
    seed pins the whole model.
    """
    rng = make_rng(seed)

    def lstm(input_size, hidden):
        draw = lambda shape: rng.uniform(-init_scale, init_scale, size=shape)
        return LstmParameters(
            W_ix=draw((hidden, input_size)),
            W_fx=draw((hidden, input_size)),
            W_ox=draw((hidden, input_size)),
            W_gx=draw((hidden, input_size)),
            U_ih=draw((hidden, hidden)),
            U_fh=draw((hidden, hidden)),
            U_oh=draw((hidden, hidden)),
            U_gh=draw((hidden, hidden)),
            b_i=np.zeros(hidden),
            b_f=np.zeros(hidden),
            b_o=np.zeros(hidden),
            b_g=np.zeros(hidden),
        )

    layer1 = lstm(d_feat, d1)
    layer2_fwd = lstm(d1, d2)
    layer2_bwd = lstm(d1, d2)
    head = PredictionHead(
        W_p=rng.uniform(-init_scale, init_scale, size=(2, 2 * d2 + d1)),
        b_p=np.zeros(2),
    )
    return HrnnModel(
        layer1=layer1,
        layer2_fwd=layer2_fwd,
        layer2_bwd=layer2_bwd,
        head=head,
        subshot_length=subshot_length,
    ).validate()
